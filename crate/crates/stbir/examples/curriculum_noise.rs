//! Shows the noise curriculum: perturbation magnitude grows with training
//! progress while the start of the schedule stays exactly clean.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stbir::cldre::{inject, progress, CurriculumState};
use stbir::encoders::{FeatureBatch, Modality};

fn main() -> stbir::Result<()> {
    let features = FeatureBatch::new(Array2::ones((64, 64)), Modality::Sketch);
    let alpha = 0.5;
    let total_steps = 8;

    println!("step,t,empirical_std");
    for step in 0..=total_steps {
        let t = progress(step, total_steps)?;
        let state = CurriculumState::new(t, alpha)?;
        let mut rng = ChaCha8Rng::seed_from_u64(step as u64);
        let noised = inject(&features, &state, &mut rng);
        let n = features.values.len() as f64;
        let var: f64 = noised
            .values
            .iter()
            .zip(features.values.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        println!("{step},{t:.3},{:.4}", var.sqrt());
    }
    Ok(())
}
