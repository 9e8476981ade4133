//! Curriculum-driven noise injection: perturbation intensity grows with
//! normalized training progress, so early batches see clean features and late
//! batches see the full target noise level. Never applied on eval paths.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::encoders::FeatureBatch;
use crate::error::{Result, StbirError};

/// Normalized progress plus target noise intensity for one curriculum.
#[derive(Debug, Clone, Copy)]
pub struct CurriculumState {
    /// Normalized training progress in [0, 1].
    pub t: f64,
    /// Target noise intensity (standard deviation at t = 1).
    pub alpha: f64,
}

impl CurriculumState {
    pub fn new(t: f64, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(StbirError::Range(format!("t must be in [0,1], got {t}")));
        }
        if alpha < 0.0 {
            return Err(StbirError::Range(format!("alpha must be >= 0, got {alpha}")));
        }
        Ok(CurriculumState { t, alpha })
    }
}

/// t = step / total_steps.
pub fn progress(step: usize, total_steps: usize) -> Result<f64> {
    if total_steps < 1 {
        return Err(StbirError::Range("total_steps must be >= 1".into()));
    }
    if step > total_steps {
        return Err(StbirError::Range(format!(
            "step {step} exceeds total_steps {total_steps}"
        )));
    }
    Ok(step as f64 / total_steps as f64)
}

/// Adds zero-mean Gaussian noise with standard deviation t * alpha to every
/// entry. At t = 0 or alpha = 0 the input is returned bitwise unchanged and
/// the random stream is not advanced.
pub fn inject(features: &FeatureBatch, state: &CurriculumState, rng: &mut ChaCha8Rng) -> FeatureBatch {
    let sigma = state.t * state.alpha;
    if sigma == 0.0 {
        return features.clone();
    }
    let mut values = features.values.clone();
    for v in values.iter_mut() {
        let eps: f64 = StandardNormal.sample(rng);
        *v += sigma * eps;
    }
    FeatureBatch::new(values, features.modality)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::Modality;
    use ndarray::Array2;
    use rand::SeedableRng;

    fn feats(rows: usize, cols: usize) -> FeatureBatch {
        FeatureBatch::new(
            Array2::from_shape_fn((rows, cols), |(i, j)| (i * cols + j) as f64 * 0.01),
            Modality::Sketch,
        )
    }

    #[test]
    fn progress_values() {
        assert_eq!(progress(0, 100).unwrap(), 0.0);
        assert_eq!(progress(100, 100).unwrap(), 1.0);
        assert_eq!(progress(25, 100).unwrap(), 0.25);
        assert!(progress(101, 100).is_err());
    }

    #[test]
    fn identity_at_t_zero() {
        let f = feats(4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = inject(&f, &CurriculumState::new(0.0, 0.7).unwrap(), &mut rng);
        assert_eq!(out.values, f.values);
    }

    #[test]
    fn identity_at_alpha_zero() {
        let f = feats(4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = inject(&f, &CurriculumState::new(1.0, 0.0).unwrap(), &mut rng);
        assert_eq!(out.values, f.values);
    }

    #[test]
    fn perturbation_std_matches_t_alpha() {
        let f = feats(100, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let out = inject(&f, &CurriculumState::new(1.0, 0.5).unwrap(), &mut rng);
        let diffs: Vec<f64> = out
            .values
            .iter()
            .zip(f.values.iter())
            .map(|(a, b)| a - b)
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!((std - 0.5).abs() < 0.025, "std {std}");
    }

    #[test]
    fn expected_squared_perturbation_grows_with_t() {
        let f = feats(100, 100);
        let alpha = 0.4;
        let mut prev = 0.0;
        for (k, t) in [0.25, 0.5, 0.75, 1.0].iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(55 + k as u64);
            let out = inject(&f, &CurriculumState::new(*t, alpha).unwrap(), &mut rng);
            let sq: f64 = out
                .values
                .iter()
                .zip(f.values.iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            let expect = t * t * alpha * alpha * 10_000.0;
            assert!((sq - expect).abs() / expect < 0.05, "t={t} sq={sq} expect={expect}");
            assert!(sq > prev);
            prev = sq;
        }
    }

    #[test]
    fn deterministic_given_rng_state() {
        let f = feats(8, 8);
        let state = CurriculumState::new(0.5, 0.3).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(inject(&f, &state, &mut r1).values, inject(&f, &state, &mut r2).values);
    }
}
