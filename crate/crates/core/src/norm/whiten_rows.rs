//! Whitening of the rows of a `p × n` matrix over its `n` columns: the
//! kernel shared by BW (rows = channels, columns = batch) and GW (rows =
//! groups, columns = channels within a group).
//!
//! ```text
//! X_C = X − mean_cols(X)      Σ = X_C X_Cᵀ / n + εI      X̂ = ψ(Σ) X_C
//! ```
//!
//! With `n < p` the dual form `X̂ = X_C (X_CᵀX_C/n + εI_n)^{-1/2}` may be
//! used instead; it is algebraically identical and costs `O(n³)` instead of
//! `O(p³)`. ItN is a polynomial in `Σ/tr(Σ)`, so its dual form normalizes
//! the Gram matrix by the primal trace `tr(X_CᵀX_C)/n + pε`.

use serde::{Deserialize, Serialize};

use super::NormError;
use crate::linalg::{covariance, Mat};
use crate::whitening::{
    itn_forward_with_trace, whiten_backward, whiten_forward, WhitenerCache, WhiteningConfig, WhiteningMethod,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    /// `X̂ = Σ^{-1/2} X_C` with the `p × p` covariance.
    Primal,
    /// `X̂ = X_C (X_CᵀX_C/n + εI)^{-1/2}` with the `n × n` Gram matrix.
    Dual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowWhitenCache {
    pub xc: Mat,
    pub mean: Vec<f64>,
    /// The `p × p` whitener (primal) or the `n × n` right factor (dual).
    pub w: Mat,
    /// Covariance (primal) or Gram matrix (dual) fed to the kernel.
    pub sigma: Mat,
    pub kernel: WhitenerCache,
    pub route: Route,
}

impl RowWhitenCache {
    pub fn dims(&self) -> (usize, usize) {
        self.xc.shape()
    }
}

/// `allow_dual` switches to the dual route when `n < p`.
pub fn whiten_rows_train(x: &Mat, cfg: &WhiteningConfig, allow_dual: bool) -> Result<(Mat, RowWhitenCache), NormError> {
    cfg.validate()?;
    let (p, n) = x.shape();
    if p == 0 || n == 0 {
        return Err(NormError::InvalidArgument(format!("cannot whiten an empty {p}x{n} matrix")));
    }
    let (xc, mean) = x.center_rows();
    let route = if allow_dual && n < p { Route::Dual } else { Route::Primal };
    let (sigma, out, w, kernel) = match route {
        Route::Primal => {
            let sigma = covariance(&xc, n, cfg.eps)?;
            let (w, kernel) = whiten_forward(&sigma, cfg)?;
            (sigma, w.matmul(&xc), w, kernel)
        }
        Route::Dual => {
            let gram = covariance(&xc.transpose(), n, cfg.eps)?;
            let (w, kernel) = match cfg.method {
                WhiteningMethod::Zca => whiten_forward(&gram, cfg)?,
                WhiteningMethod::Itn => {
                    let tr = gram.trace() + (p - n) as f64 * cfg.eps;
                    let (w, t) = itn_forward_with_trace(&gram, cfg.iterations, tr)?;
                    (w, WhitenerCache::Itn(t))
                }
            };
            (gram, xc.matmul(&w), w, kernel)
        }
    };
    if !out.is_finite() {
        return Err(NormError::NonFinite("whitened output".into()));
    }
    Ok((out, RowWhitenCache { xc, mean, w, sigma, kernel, route }))
}

/// Gradient through centering, covariance and the whitening kernel:
/// `∂X = W(∂X̂ − f1ᵀ) + (1/n)(∂Σ + ∂Σᵀ) X_C` with `f = ∂X̂ 1 / n`.
pub fn whiten_rows_backward(d_out: &Mat, cache: &RowWhitenCache, cfg: &WhiteningConfig) -> Result<Mat, NormError> {
    let (p, n) = cache.dims();
    if d_out.shape() != (p, n) {
        return Err(NormError::CacheMismatch(format!(
            "upstream gradient is {}x{}, cache holds {p}x{n}",
            d_out.rows(),
            d_out.cols()
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mut dxc = match cache.route {
        Route::Primal => {
            let d_w = d_out.matmul_t(&cache.xc);
            let d_sigma = whiten_backward(&d_w, &cache.kernel, cfg)?;
            let mut dxc = cache.w.t_matmul(d_out);
            let sym = d_sigma.add(&d_sigma.transpose());
            dxc.axpy(inv_n, &sym.matmul(&cache.xc));
            dxc
        }
        Route::Dual => {
            let d_m = cache.xc.t_matmul(d_out);
            let d_s = whiten_backward(&d_m, &cache.kernel, cfg)?;
            let mut dxc = d_out.matmul_t(&cache.w);
            let sym = d_s.add(&d_s.transpose());
            dxc.axpy(inv_n, &cache.xc.matmul(&sym));
            dxc
        }
    };
    let (centered, _) = dxc.center_rows();
    dxc = centered;
    if !dxc.is_finite() {
        return Err(NormError::NonFinite("whitening gradient".into()));
    }
    Ok(dxc)
}
