//! Retrieval losses over (fused query, gallery) batches: symmetric InfoNCE,
//! hardest-in-batch triplet, and the weighted total objective.

use ndarray::{Array1, Array2, Axis};

use crate::encoders::FeatureBatch;
use crate::error::{Result, StbirError};

/// Weights for the three loss terms of the total objective.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.1,
            lambda2: 0.8,
            lambda3: 0.8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda3 < 0.0 {
            return Err(StbirError::Config("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Temperature and margin for the contrastive terms.
#[derive(Debug, Clone, Copy)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub triplet_margin: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            temperature: 0.07,
            triplet_margin: 0.2,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(StbirError::Config("temperature must be > 0".into()));
        }
        if self.triplet_margin <= 0.0 {
            return Err(StbirError::Config("triplet_margin must be > 0".into()));
        }
        Ok(())
    }
}

/// Loss value and gradients w.r.t. query and gallery rows.
#[derive(Debug, Clone)]
pub struct PairLossOutput {
    pub loss: f64,
    pub grad_queries: Array2<f64>,
    pub grad_gallery: Array2<f64>,
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

fn normalized(x: &Array2<f64>, norms: &Array1<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|v| v / norms[i]);
    }
    out
}

/// Backpropagates a gradient w.r.t. the cosine matrix into the raw query and
/// gallery rows: d cos_ij / d q_i = (g_hat_j - cos_ij * q_hat_i) / ||q_i||.
fn cosine_grads(
    coeff: &Array2<f64>,
    cos: &Array2<f64>,
    q_hat: &Array2<f64>,
    g_hat: &Array2<f64>,
    q_norms: &Array1<f64>,
    g_norms: &Array1<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let weighted = coeff * cos;
    let row_sums = weighted.sum_axis(Axis(1));
    let col_sums = weighted.sum_axis(Axis(0));

    let mut grad_q = coeff.dot(g_hat);
    for (i, mut row) in grad_q.rows_mut().into_iter().enumerate() {
        for (k, g) in row.iter_mut().enumerate() {
            *g = (*g - row_sums[i] * q_hat[[i, k]]) / q_norms[i];
        }
    }
    let mut grad_g = coeff.t().dot(q_hat);
    for (j, mut row) in grad_g.rows_mut().into_iter().enumerate() {
        for (k, g) in row.iter_mut().enumerate() {
            *g = (*g - col_sums[j] * g_hat[[j, k]]) / g_norms[j];
        }
    }
    (grad_q, grad_g)
}

fn check_pair(queries: &FeatureBatch, gallery: &FeatureBatch) -> Result<()> {
    if queries.batch_size() != gallery.batch_size() || queries.dim() != gallery.dim() {
        return Err(StbirError::Shape {
            expected: format!("{} x {}", queries.batch_size(), queries.dim()),
            got: format!("{} x {}", gallery.batch_size(), gallery.dim()),
        });
    }
    if queries.batch_size() < 2 {
        return Err(StbirError::Config(
            "contrastive losses need batch size >= 2".into(),
        ));
    }
    Ok(())
}

/// Symmetric bidirectional InfoNCE over the N x N cosine similarity matrix
/// scaled by 1/temperature. Row i of the gallery is the positive for query i.
pub fn info_nce(
    queries: &FeatureBatch,
    gallery: &FeatureBatch,
    temperature: f64,
) -> Result<PairLossOutput> {
    check_pair(queries, gallery)?;
    if temperature <= 0.0 {
        return Err(StbirError::Config("temperature must be > 0".into()));
    }
    let n = queries.batch_size();
    let q_norms = row_norms(&queries.values)?;
    let g_norms = row_norms(&gallery.values)?;
    let q_hat = normalized(&queries.values, &q_norms);
    let g_hat = normalized(&gallery.values, &g_norms);
    let cos = q_hat.dot(&g_hat.t());
    let sim = cos.mapv(|v| v / temperature);

    let softmax_rows = |m: &Array2<f64>| -> Array2<f64> {
        let mut out = m.clone();
        for mut row in out.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                denom += *v;
            }
            for v in row.iter_mut() {
                *v /= denom;
            }
        }
        out
    };
    let p_rows = softmax_rows(&sim);
    let p_cols = softmax_rows(&sim.t().to_owned()).t().to_owned();

    let mut loss = 0.0;
    for i in 0..n {
        loss -= p_rows[[i, i]].ln() + p_cols[[i, i]].ln();
    }
    loss /= 2.0 * n as f64;

    // dL/dsim = (p_rows + p_cols - 2I) / (2N); dsim/dcos = 1/temperature
    let mut coeff = &p_rows + &p_cols;
    for i in 0..n {
        coeff[[i, i]] -= 2.0;
    }
    coeff.mapv_inplace(|v| v / (2.0 * n as f64 * temperature));

    let (grad_queries, grad_gallery) =
        cosine_grads(&coeff, &cos, &q_hat, &g_hat, &q_norms, &g_norms);
    Ok(PairLossOutput {
        loss,
        grad_queries,
        grad_gallery,
    })
}

/// Triplet loss with the hardest in-batch negative per query:
/// mean(max(0, d_pos - d_neg + margin)) over cosine distances.
pub fn triplet(
    queries: &FeatureBatch,
    gallery: &FeatureBatch,
    margin: f64,
) -> Result<PairLossOutput> {
    check_pair(queries, gallery)?;
    if margin <= 0.0 {
        return Err(StbirError::Config("triplet margin must be > 0".into()));
    }
    let n = queries.batch_size();
    let q_norms = row_norms(&queries.values)?;
    let g_norms = row_norms(&gallery.values)?;
    let q_hat = normalized(&queries.values, &q_norms);
    let g_hat = normalized(&gallery.values, &g_norms);
    let cos = q_hat.dot(&g_hat.t());

    let mut loss = 0.0;
    let mut coeff = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        // hardest negative: smallest cosine distance among j != i
        let mut best = usize::MAX;
        let mut best_cos = f64::NEG_INFINITY;
        for j in 0..n {
            if j != i && cos[[i, j]] > best_cos {
                best_cos = cos[[i, j]];
                best = j;
            }
        }
        let hinge = (1.0 - cos[[i, i]]) - (1.0 - best_cos) + margin;
        if hinge > 0.0 {
            loss += hinge;
            coeff[[i, i]] -= 1.0 / n as f64;
            coeff[[i, best]] += 1.0 / n as f64;
        }
    }
    loss /= n as f64;

    let (grad_queries, grad_gallery) =
        cosine_grads(&coeff, &cos, &q_hat, &g_hat, &q_norms, &g_norms);
    Ok(PairLossOutput {
        loss,
        grad_queries,
        grad_gallery,
    })
}

/// Weighted sum of the three loss terms.
pub fn total_loss(l_aaml: f64, l_infonce: f64, l_triplet: f64, w: &LossWeights) -> Result<f64> {
    for (name, v) in [("aaml", l_aaml), ("infonce", l_infonce), ("triplet", l_triplet)] {
        if !v.is_finite() {
            return Err(StbirError::Numeric(format!("{name} loss is not finite: {v}")));
        }
    }
    Ok(w.lambda1 * l_aaml + w.lambda2 * l_infonce + w.lambda3 * l_triplet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::Modality;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn fb(values: Array2<f64>) -> FeatureBatch {
        FeatureBatch::new(values, Modality::Sketch)
    }

    #[test]
    fn info_nce_orthonormal_pairs() {
        let q = fb(array![[1.0, 0.0], [0.0, 1.0]]);
        let g = fb(array![[1.0, 0.0], [0.0, 1.0]]);
        let out = info_nce(&q, &g, 1.0).unwrap();
        let expect = (1.0 + (-1f64).exp()).ln();
        assert!((out.loss - expect).abs() < 1e-12);
        assert!((out.loss - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn info_nce_low_temperature_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = Array2::from_shape_fn((4, 8), |_| StandardNormal.sample(&mut rng));
        let out = info_nce(&fb(q.clone()), &fb(q), 0.01).unwrap();
        assert!(out.loss < 1e-3, "{}", out.loss);
    }

    #[test]
    fn info_nce_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = Array2::from_shape_fn((4, 8), |_| StandardNormal.sample(&mut rng));
        let g = Array2::from_shape_fn((4, 8), |_| StandardNormal.sample(&mut rng));
        let a = info_nce(&fb(q.clone()), &fb(g.clone()), 0.1).unwrap();
        let b = info_nce(&fb(q.mapv(|v| v * 5.0)), &fb(g.mapv(|v| v * 0.3)), 0.1).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);
    }

    #[test]
    fn info_nce_rejects_small_batch() {
        let q = fb(array![[1.0, 0.0]]);
        let g = fb(array![[1.0, 0.0]]);
        assert!(matches!(info_nce(&q, &g, 0.1), Err(StbirError::Config(_))));
    }

    #[test]
    fn triplet_inactive_hinge() {
        let q = fb(array![[1.0, 0.0], [0.0, 1.0]]);
        let g = fb(array![[1.0, 0.0], [0.0, 1.0]]);
        // for query 0: d_pos = 0, d_neg = 1, margin 0.2 -> hinge inactive
        let out = triplet(&q, &g, 0.2).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_queries.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn triplet_identical_negative_gives_margin() {
        let q = fb(array![[1.0, 0.0], [1.0, 0.0]]);
        let g = fb(array![[1.0, 0.0], [1.0, 0.0]]);
        let out = triplet(&q, &g, 0.2).unwrap();
        assert!((out.loss - 0.2).abs() < 1e-12);
    }

    #[test]
    fn triplet_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let q = Array2::from_shape_fn((5, 6), |_| StandardNormal.sample(&mut rng));
            let g = Array2::from_shape_fn((5, 6), |_| StandardNormal.sample(&mut rng));
            let out = triplet(&fb(q), &fb(g), 0.2).unwrap();
            assert!(out.loss >= 0.0 && out.loss <= 2.2);
        }
    }

    #[test]
    fn total_loss_weighted_sum() {
        let w = LossWeights::default();
        assert!((total_loss(1.0, 1.0, 1.0, &w).unwrap() - 1.7).abs() < 1e-12);
        let zero = LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
        };
        assert_eq!(total_loss(3.0, 4.0, 5.0, &zero).unwrap(), 0.0);
        let w1 = LossWeights {
            lambda1: 0.1,
            lambda2: 0.0,
            lambda3: 0.0,
        };
        assert!((total_loss(2.0, 0.0, 0.0, &w1).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn total_loss_linear_in_components() {
        let w = LossWeights::default();
        let a = total_loss(1.0, 2.0, 3.0, &w).unwrap();
        let b = total_loss(2.0, 2.0, 3.0, &w).unwrap();
        assert!((b - a - w.lambda1).abs() < 1e-12);
    }

    #[test]
    fn total_loss_rejects_nan() {
        assert!(matches!(
            total_loss(f64::NAN, 0.0, 0.0, &LossWeights::default()),
            Err(StbirError::Numeric(_))
        ));
    }
}
