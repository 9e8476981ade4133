//! Shared helpers for integration tests: central finite differences and a
//! mixed relative/absolute error measure for gradient checks.

use ndarray::Array2;

pub const FD_STEP: f64 = 1e-6;

/// Central finite-difference gradient of `f` w.r.t. every entry of `x`.
pub fn fd_gradient(x: &Array2<f64>, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut grad = Array2::zeros(x.dim());
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let mut plus = x.clone();
        plus[[r, c]] += FD_STEP;
        let mut minus = x.clone();
        minus[[r, c]] -= FD_STEP;
        grad[[r, c]] = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
    }
    grad
}

/// Max of |analytic - numeric| / max(1, |numeric|) over all entries.
pub fn max_rel_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}
