//! Category-knowledge-based feature space optimization: additive angular
//! margin loss over a learnable bank of unit-norm class centers.
//!
//! The loss is a softmax cross-entropy over scaled cosine logits where the
//! ground-truth logit gets a fixed angular margin m added to its angle.
//! Gradients are exact analytic derivatives through the feature and center
//! normalizations and the margin branch.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::encoders::FeatureBatch;
use crate::error::{Result, StbirError};

/// Clamp epsilon keeping arccos / the margin-branch gradient finite.
const COS_EPS: f64 = 1e-7;

/// Learnable class centers, one unit-norm row per category.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterBank {
    pub centers: Array2<f64>,
    /// Adam moment buffers for the centers.
    pub m: Array2<f64>,
    pub v: Array2<f64>,
    pub step_count: u64,
}

impl CenterBank {
    /// Random unit-vector centers, deterministic per seed.
    pub fn init(num_categories: usize, dim: usize, seed: u64) -> Result<Self> {
        if num_categories < 2 {
            return Err(StbirError::Config(format!(
                "need at least 2 categories, got {num_categories}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers =
            Array2::from_shape_fn((num_categories, dim), |_| StandardNormal.sample(&mut rng));
        let mut bank = CenterBank {
            centers,
            m: Array2::zeros((num_categories, dim)),
            v: Array2::zeros((num_categories, dim)),
            step_count: 0,
        };
        normalize_centers(&mut bank)?;
        Ok(bank)
    }

    pub fn from_centers(centers: Array2<f64>) -> Self {
        let shape = centers.dim();
        CenterBank {
            centers,
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
            step_count: 0,
        }
    }

    pub fn num_categories(&self) -> usize {
        self.centers.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.centers.iter() {
            hasher.update(v.to_le_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Scale and angular margin for the loss.
#[derive(Debug, Clone, Copy)]
pub struct AamlConfig {
    pub s: f64,
    /// Angular margin in radians, in [0, pi).
    pub m: f64,
}

impl Default for AamlConfig {
    fn default() -> Self {
        AamlConfig { s: 32.0, m: 0.15 }
    }
}

impl AamlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s <= 0.0 {
            return Err(StbirError::Config(format!("s must be > 0, got {}", self.s)));
        }
        if !(0.0..std::f64::consts::PI).contains(&self.m) {
            return Err(StbirError::Config(format!(
                "m must be in [0, pi), got {}",
                self.m
            )));
        }
        Ok(())
    }
}

/// Loss value plus gradients for features and centers.
#[derive(Debug, Clone)]
pub struct AamlOutput {
    pub loss: f64,
    pub grad_features: Array2<f64>,
    pub grad_centers: Array2<f64>,
}

fn row_norms(x: &Array2<f64>) -> Result<Array1<f64>> {
    let norms = x.map_axis(Axis(1), |row| row.dot(&row).sqrt());
    for (i, &n) in norms.iter().enumerate() {
        if n == 0.0 {
            return Err(StbirError::Degenerate(format!("zero-norm row {i}")));
        }
    }
    Ok(norms)
}

/// Cosine similarity matrix between feature rows and center rows, with both
/// sides normalized.
fn cosines(features: &Array2<f64>, centers: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>, Array1<f64>)> {
    if features.ncols() != centers.ncols() {
        return Err(StbirError::Shape {
            expected: format!("feature dim {}", centers.ncols()),
            got: format!("{}", features.ncols()),
        });
    }
    let fn_ = row_norms(features)?;
    let cn = row_norms(centers)?;
    let mut cos = features.dot(&centers.t());
    for ((i, j), v) in cos.indexed_iter_mut() {
        *v /= fn_[i] * cn[j];
        *v = v.clamp(-1.0, 1.0);
    }
    Ok((cos, fn_, cn))
}

/// Pairwise angles between features and class centers, in (0, pi).
pub fn angles(features: &FeatureBatch, bank: &CenterBank) -> Result<Array2<f64>> {
    let (cos, _, _) = cosines(&features.values, &bank.centers)?;
    Ok(cos.mapv(|c| c.clamp(-1.0 + COS_EPS, 1.0 - COS_EPS).acos()))
}

/// Margin-shifted target logit value: cos(theta + m) while theta + m stays on
/// the monotone branch, with a linear fallback cos(theta) - m*sin(m) beyond
/// it so the logit stays monotone in theta and the gradient finite.
fn margin_cos(c: f64, m: f64) -> f64 {
    let threshold = (std::f64::consts::PI - m).cos();
    if c > threshold {
        let sin_theta = (1.0 - c * c).max(0.0).sqrt();
        c * m.cos() - sin_theta * m.sin()
    } else {
        c - m * m.sin()
    }
}

/// d margin_cos / d cos, with the denominator clamped away from zero.
fn margin_cos_grad(c: f64, m: f64) -> f64 {
    let threshold = (std::f64::consts::PI - m).cos();
    if c > threshold {
        let cc = c.clamp(-1.0 + COS_EPS, 1.0 - COS_EPS);
        let sin_theta = (1.0 - cc * cc).sqrt();
        m.cos() + cc * m.sin() / sin_theta
    } else {
        1.0
    }
}

/// Additive angular margin loss with exact gradients.
pub fn aaml_loss(
    features: &FeatureBatch,
    labels: &[usize],
    bank: &CenterBank,
    cfg: &AamlConfig,
) -> Result<AamlOutput> {
    cfg.validate()?;
    let x = &features.values;
    let n = x.nrows();
    if labels.len() != n {
        return Err(StbirError::Shape {
            expected: format!("{n} labels"),
            got: format!("{}", labels.len()),
        });
    }
    let c_count = bank.num_categories();
    for (i, &y) in labels.iter().enumerate() {
        if y >= c_count {
            return Err(StbirError::Index(format!(
                "label {y} at row {i} out of range [0, {c_count})"
            )));
        }
    }
    let (cos, feat_norms, cen_norms) = cosines(x, &bank.centers)?;

    // logits: s * margin_cos on the target column, s * cos elsewhere
    let mut logits = cos.mapv(|c| cfg.s * c);
    for (i, &y) in labels.iter().enumerate() {
        logits[[i, y]] = cfg.s * margin_cos(cos[[i, y]], cfg.m);
    }

    // stabilized softmax cross-entropy, mean over the batch
    let mut loss = 0.0;
    let mut probs = Array2::<f64>::zeros((n, c_count));
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for j in 0..c_count {
            let e = (row[j] - max).exp();
            probs[[i, j]] = e;
            denom += e;
        }
        for j in 0..c_count {
            probs[[i, j]] /= denom;
        }
        loss -= (probs[[i, labels[i]]]).ln();
    }
    loss /= n as f64;

    // dL/dcos[i][j] = (1/N) (p - delta) * s * branch_grad
    let mut coeff = probs;
    for (i, &y) in labels.iter().enumerate() {
        coeff[[i, y]] -= 1.0;
    }
    coeff.mapv_inplace(|v| v * cfg.s / n as f64);
    for (i, &y) in labels.iter().enumerate() {
        coeff[[i, y]] *= margin_cos_grad(cos[[i, y]], cfg.m);
    }

    // Chain through cos = <x_hat, c_hat>:
    //   d cos / d x_i = (c_hat_j - cos * x_hat_i) / ||x_i||
    //   d cos / d c_j = (x_hat_i - cos * c_hat_j) / ||c_j||
    let x_hat = {
        let mut xh = x.clone();
        for (i, mut row) in xh.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| v / feat_norms[i]);
        }
        xh
    };
    let c_hat = {
        let mut ch = bank.centers.clone();
        for (j, mut row) in ch.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| v / cen_norms[j]);
        }
        ch
    };
    let coeff_cos_rows = (&coeff * &cos).sum_axis(Axis(1)); // per-i sums
    let coeff_cos_cols = (&coeff * &cos).sum_axis(Axis(0)); // per-j sums

    let mut grad_features = coeff.dot(&c_hat);
    for (i, mut row) in grad_features.rows_mut().into_iter().enumerate() {
        let sub = coeff_cos_rows[i];
        for (k, g) in row.iter_mut().enumerate() {
            *g = (*g - sub * x_hat[[i, k]]) / feat_norms[i];
        }
    }
    let mut grad_centers = coeff.t().dot(&x_hat);
    for (j, mut row) in grad_centers.rows_mut().into_iter().enumerate() {
        let sub = coeff_cos_cols[j];
        for (k, g) in row.iter_mut().enumerate() {
            *g = (*g - sub * c_hat[[j, k]]) / cen_norms[j];
        }
    }

    Ok(AamlOutput {
        loss,
        grad_features,
        grad_centers,
    })
}

/// Rescales every center row to unit norm.
pub fn normalize_centers(bank: &mut CenterBank) -> Result<()> {
    for (j, mut row) in bank.centers.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            return Err(StbirError::Degenerate(format!("zero center row {j}")));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(())
}
