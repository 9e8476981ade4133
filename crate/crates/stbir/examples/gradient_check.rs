//! Checks the analytic gradients of the margin loss against central finite
//! differences on a random instance and prints the worst error.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use stbir::ckfso::{aaml_loss, AamlConfig, CenterBank};
use stbir::encoders::{FeatureBatch, Modality};

fn main() -> stbir::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Array2::from_shape_fn((8, 16), |_| StandardNormal.sample(&mut rng));
    let bank = CenterBank::init(4, 16, 11)?;
    let labels: Vec<usize> = (0..8).map(|i| i % 4).collect();
    let cfg = AamlConfig::default();

    let features = FeatureBatch::new(x.clone(), Modality::Sketch);
    let out = aaml_loss(&features, &labels, &bank, &cfg)?;
    println!("loss = {:.6}", out.loss);

    let h = 1e-6;
    let mut worst = 0.0f64;
    for r in 0..x.nrows() {
        for c in 0..x.ncols() {
            let mut plus = x.clone();
            plus[[r, c]] += h;
            let mut minus = x.clone();
            minus[[r, c]] -= h;
            let lp = aaml_loss(&FeatureBatch::new(plus, Modality::Sketch), &labels, &bank, &cfg)?.loss;
            let lm = aaml_loss(&FeatureBatch::new(minus, Modality::Sketch), &labels, &bank, &cfg)?.loss;
            let fd = (lp - lm) / (2.0 * h);
            let err = (out.grad_features[[r, c]] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    println!("max relative gradient error vs finite differences: {worst:.2e}");
    assert!(worst <= 1e-5);
    println!("gradient check passed");
    Ok(())
}
