//! Per-channel scale and shift `Y = γ ⊙ X̂ + β`.

use super::NormError;
use crate::linalg::Mat;

#[derive(Debug, Clone, PartialEq)]
pub struct AffineCache {
    pub xhat: Mat,
    pub gamma: Vec<f64>,
}

pub fn affine_forward(xhat: &Mat, gamma: &[f64], beta: &[f64]) -> Result<(Mat, AffineCache), NormError> {
    let d = xhat.rows();
    if gamma.len() != d || beta.len() != d {
        return Err(NormError::ShapeMismatch(format!(
            "affine parameters have lengths {}/{}, input has {d} channels",
            gamma.len(),
            beta.len()
        )));
    }
    let y = Mat::from_fn(d, xhat.cols(), |i, j| gamma[i] * xhat[(i, j)] + beta[i]);
    Ok((y, AffineCache { xhat: xhat.clone(), gamma: gamma.to_vec() }))
}

/// Returns `(∂X̂, ∂γ, ∂β)`.
pub fn affine_backward(d_y: &Mat, cache: &AffineCache) -> Result<(Mat, Vec<f64>, Vec<f64>), NormError> {
    if d_y.shape() != cache.xhat.shape() {
        return Err(NormError::CacheMismatch(format!(
            "upstream gradient is {}x{}, affine cache holds {}x{}",
            d_y.rows(),
            d_y.cols(),
            cache.xhat.rows(),
            cache.xhat.cols()
        )));
    }
    let d_xhat = Mat::from_fn(d_y.rows(), d_y.cols(), |i, j| cache.gamma[i] * d_y[(i, j)]);
    let d_gamma = (0..d_y.rows())
        .map(|i| d_y.row(i).iter().zip(cache.xhat.row(i)).map(|(g, x)| g * x).sum())
        .collect();
    Ok((d_xhat, d_gamma, d_y.row_sums()))
}
