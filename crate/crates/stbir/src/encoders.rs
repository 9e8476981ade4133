//! Per-modality two-layer tanh encoders with analytic forward/backward passes
//! and a freeze mechanism consumed by the staged alignment schedule.
//!
//! out = W2 * tanh(W1 * x + b1) + b2, computed row-wise over a batch. No
//! internal normalization; cosine-based losses normalize where needed.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Result, StbirError};

/// Input modality of an encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Sketch,
    Text,
    Image,
}

impl Modality {
    pub fn tag(self) -> &'static str {
        match self {
            Modality::Sketch => "sketch",
            Modality::Text => "text",
            Modality::Image => "image",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "sketch" => Ok(Modality::Sketch),
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            other => Err(StbirError::Config(format!("unknown modality '{other}'"))),
        }
    }
}

/// A batch of embeddings tagged with their source modality.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub values: Array2<f64>,
    pub modality: Modality,
}

impl FeatureBatch {
    pub fn new(values: Array2<f64>, modality: Modality) -> Self {
        FeatureBatch { values, modality }
    }

    pub fn batch_size(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// First/second Adam moment buffers matching the encoder parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m_w1: Array2<f64>,
    pub v_w1: Array2<f64>,
    pub m_b1: Array1<f64>,
    pub v_b1: Array1<f64>,
    pub m_w2: Array2<f64>,
    pub v_w2: Array2<f64>,
    pub m_b2: Array1<f64>,
    pub v_b2: Array1<f64>,
}

impl Moments {
    fn zeros(input_dim: usize, hidden_dim: usize, embed_dim: usize) -> Self {
        Moments {
            m_w1: Array2::zeros((hidden_dim, input_dim)),
            v_w1: Array2::zeros((hidden_dim, input_dim)),
            m_b1: Array1::zeros(hidden_dim),
            v_b1: Array1::zeros(hidden_dim),
            m_w2: Array2::zeros((embed_dim, hidden_dim)),
            v_w2: Array2::zeros((embed_dim, hidden_dim)),
            m_b2: Array1::zeros(embed_dim),
            v_b2: Array1::zeros(embed_dim),
        }
    }
}

/// Trainable two-layer encoder for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderState {
    pub modality: Modality,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub trainable: bool,
    pub moments: Moments,
    pub step_count: u64,
}

/// Parameter gradients plus the gradient w.r.t. the input views.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub views: Array2<f64>,
}

/// Glorot-uniform weights, zero biases, deterministic per seed.
pub fn init_encoder(
    modality: Modality,
    input_dim: usize,
    hidden_dim: usize,
    embed_dim: usize,
    seed: u64,
) -> EncoderState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut glorot = |rows: usize, cols: usize| {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
    };
    let w1 = glorot(hidden_dim, input_dim);
    let w2 = glorot(embed_dim, hidden_dim);
    EncoderState {
        modality,
        w1,
        b1: Array1::zeros(hidden_dim),
        w2,
        b2: Array1::zeros(embed_dim),
        trainable: true,
        moments: Moments::zeros(input_dim, hidden_dim, embed_dim),
        step_count: 0,
    }
}

impl EncoderState {
    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn set_trainable(&mut self, flag: bool) {
        self.trainable = flag;
    }

    /// Stable digest over all parameter bytes. Equal digests iff the
    /// parameters are bit-identical.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.modality.tag().as_bytes());
        for arr in [&self.w1, &self.w2] {
            for v in arr.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        for arr in [&self.b1, &self.b2] {
            for v in arr.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex_digest(hasher)
    }
}

fn hex_digest(hasher: Sha256) -> String {
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Forward pass over a batch of view rows.
pub fn encode(enc: &EncoderState, views: &Array2<f64>) -> Result<FeatureBatch> {
    if views.ncols() != enc.input_dim() {
        return Err(StbirError::Shape {
            expected: format!("N x {}", enc.input_dim()),
            got: format!("{} x {}", views.nrows(), views.ncols()),
        });
    }
    let mut hidden = views.dot(&enc.w1.t());
    hidden += &enc.b1;
    hidden.mapv_inplace(f64::tanh);
    let mut out = hidden.dot(&enc.w2.t());
    out += &enc.b2;
    Ok(FeatureBatch::new(out, enc.modality))
}

/// Exact gradients of <upstream, encode(views)> w.r.t. parameters and views.
pub fn backward(
    enc: &EncoderState,
    views: &Array2<f64>,
    upstream: &Array2<f64>,
) -> Result<ParamGrads> {
    if views.ncols() != enc.input_dim() {
        return Err(StbirError::Shape {
            expected: format!("N x {}", enc.input_dim()),
            got: format!("{} x {}", views.nrows(), views.ncols()),
        });
    }
    if upstream.dim() != (views.nrows(), enc.embed_dim()) {
        return Err(StbirError::Shape {
            expected: format!("{} x {}", views.nrows(), enc.embed_dim()),
            got: format!("{} x {}", upstream.nrows(), upstream.ncols()),
        });
    }
    let mut pre = views.dot(&enc.w1.t());
    pre += &enc.b1;
    let hidden = pre.mapv(f64::tanh);

    let g_w2 = upstream.t().dot(&hidden);
    let g_b2 = upstream.sum_axis(Axis(0));
    let d_hidden = upstream.dot(&enc.w2);
    let d_pre = &d_hidden * &hidden.mapv(|h| 1.0 - h * h);
    let g_w1 = d_pre.t().dot(views);
    let g_b1 = d_pre.sum_axis(Axis(0));
    let g_views = d_pre.dot(&enc.w1);
    Ok(ParamGrads {
        w1: g_w1,
        b1: g_b1,
        w2: g_w2,
        b2: g_b2,
        views: g_views,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
    }

    #[test]
    fn init_deterministic_and_shaped() {
        let a = init_encoder(Modality::Sketch, 8, 16, 64, 5);
        let b = init_encoder(Modality::Sketch, 8, 16, 64, 5);
        assert_eq!(a, b);
        assert_eq!(a.w2.nrows(), 64);
        assert!(a.b1.iter().all(|&v| v == 0.0));
        assert!(a.b2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let mut enc = init_encoder(Modality::Text, 3, 4, 2, 0);
        enc.w1.fill(0.0);
        enc.w2.fill(0.0);
        let out = encode(&enc, &array![[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(out.values, array![[0.0, 0.0]]);
    }

    #[test]
    fn constant_bias_map() {
        let mut enc = init_encoder(Modality::Text, 3, 4, 2, 0);
        enc.w1.fill(0.0);
        enc.b2 = array![1.5, -0.5];
        let out = encode(&enc, &array![[1.0, 2.0, 3.0], [9.0, 0.0, -1.0]]).unwrap();
        for row in out.values.rows() {
            assert_eq!(row.to_vec(), vec![1.5, -0.5]);
        }
    }

    #[test]
    fn encode_matches_reference_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let enc = init_encoder(Modality::Image, 5, 7, 3, 13);
        let x = random_matrix(&mut rng, 4, 5);
        let got = encode(&enc, &x).unwrap();
        // independent re-implementation, scalar loops
        for i in 0..4 {
            for k in 0..3 {
                let mut acc = enc.b2[k];
                for h in 0..7 {
                    let mut pre = enc.b1[h];
                    for j in 0..5 {
                        pre += enc.w1[[h, j]] * x[[i, j]];
                    }
                    acc += enc.w2[[k, h]] * pre.tanh();
                }
                assert!((got.values[[i, k]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encode_dim_mismatch_errors() {
        let enc = init_encoder(Modality::Image, 5, 7, 3, 13);
        assert!(encode(&enc, &Array2::zeros((2, 4))).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let enc = init_encoder(Modality::Sketch, 4, 6, 3, 1);
        let x = Array2::ones((2, 4));
        let g = backward(&enc, &x, &Array2::zeros((2, 3))).unwrap();
        assert!(g.w1.iter().all(|&v| v == 0.0));
        assert!(g.w2.iter().all(|&v| v == 0.0));
        assert!(g.views.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_gradient_is_sum_of_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = init_encoder(Modality::Text, 4, 6, 3, 2);
        let x = random_matrix(&mut rng, 5, 4);
        let u = random_matrix(&mut rng, 5, 3);
        let batched = backward(&enc, &x, &u).unwrap();
        let mut acc_w1 = Array2::<f64>::zeros(batched.w1.dim());
        let mut acc_w2 = Array2::<f64>::zeros(batched.w2.dim());
        for i in 0..5 {
            let xi = x.row(i).insert_axis(Axis(0)).to_owned();
            let ui = u.row(i).insert_axis(Axis(0)).to_owned();
            let g = backward(&enc, &xi, &ui).unwrap();
            acc_w1 += &g.w1;
            acc_w2 += &g.w2;
        }
        for (a, b) in batched.w1.iter().zip(acc_w1.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in batched.w2.iter().zip(acc_w2.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn checksum_stable_and_sensitive() {
        let mut enc = init_encoder(Modality::Image, 4, 6, 3, 8);
        let before = enc.checksum();
        assert_eq!(before, enc.checksum());
        enc.w1[[0, 0]] += 1e-12;
        assert_ne!(before, enc.checksum());
    }

    #[test]
    fn encode_is_row_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let enc = init_encoder(Modality::Sketch, 4, 6, 3, 21);
        let x = random_matrix(&mut rng, 3, 4);
        let out = encode(&enc, &x).unwrap();
        // reverse row order
        let rev = Array2::from_shape_fn((3, 4), |(i, j)| x[[2 - i, j]]);
        let out_rev = encode(&enc, &rev).unwrap();
        for i in 0..3 {
            assert_eq!(out.values.row(i), out_rev.values.row(2 - i));
        }
    }
}
