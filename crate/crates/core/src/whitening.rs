//! Whitening-matrix kernels `Σ ↦ Σ^{-1/2}` and their backward maps
//! `∂L/∂Σ^{-1/2} ↦ ∂L/∂Σ`.
//!
//! * ZCA: exact, through the eigendecomposition `Σ = D Λ Dᵀ`.
//! * ItN: Newton–Schulz iterations on the trace-normalized covariance,
//!   `P_k = ½(3P_{k−1} − P_{k−1}³ Σ_N)`, `Σ^{-1/2} ≈ P_T / √tr(Σ)`.
//!
//! Backward maps return a gradient with respect to a *symmetric* `Σ`; it is
//! only defined up to its antisymmetric part, so callers contract it with
//! symmetric perturbations or symmetrize it (`∂L/∂Σ + ∂L/∂Σᵀ`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{sym_eig, EigenDecomp, LinalgError, Mat, SYM_EIG_TOL};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_ITERATIONS: usize = 5;
pub const DEFAULT_EIG_TIE_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WhiteningError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("covariance is not positive definite (smallest eigenvalue {min_eigenvalue:e}); use a larger eps")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("covariance trace must be positive, got {0:e}")]
    NonPositiveTrace(f64),
    #[error("Newton iteration produced non-finite values at step {0}")]
    NonFiniteIteration(usize),
    #[error("dimension mismatch: upstream gradient is {got:?}, cache expects {want:?}")]
    DimensionMismatch { got: (usize, usize), want: (usize, usize) },
    #[error("invalid whitening config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WhiteningMethod {
    Zca,
    #[default]
    Itn,
}

impl fmt::Display for WhiteningMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WhiteningMethod::Zca => "zca",
            WhiteningMethod::Itn => "itn",
        })
    }
}

impl FromStr for WhiteningMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zca" => Ok(WhiteningMethod::Zca),
            "itn" => Ok(WhiteningMethod::Itn),
            other => Err(format!("unknown whitening method '{other}' (expected zca or itn)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WhiteningConfig {
    pub method: WhiteningMethod,
    pub eps: f64,
    /// Newton iterations `T` (ItN only).
    pub iterations: usize,
    /// Eigenvalue gap below which the ZCA backward treats a pair as tied.
    pub eig_tie_tol: f64,
}

impl Default for WhiteningConfig {
    fn default() -> Self {
        WhiteningConfig {
            method: WhiteningMethod::default(),
            eps: DEFAULT_EPS,
            iterations: DEFAULT_ITERATIONS,
            eig_tie_tol: DEFAULT_EIG_TIE_TOL,
        }
    }
}

impl WhiteningConfig {
    pub fn zca() -> Self {
        WhiteningConfig { method: WhiteningMethod::Zca, ..Default::default() }
    }

    pub fn itn(iterations: usize) -> Self {
        WhiteningConfig { method: WhiteningMethod::Itn, iterations, ..Default::default() }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn validate(&self) -> Result<(), WhiteningError> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(WhiteningError::InvalidConfig(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.iterations == 0 {
            return Err(WhiteningError::InvalidConfig("iteration count T must be >= 1".into()));
        }
        if !(self.eig_tie_tol >= 0.0) {
            return Err(WhiteningError::InvalidConfig("eig_tie_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Everything the ItN backward needs: `Σ_N`, `P_0..P_T` and `tr(Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItnTrace {
    pub sigma_n: Mat,
    pub p_list: Vec<Mat>,
    pub trace_sigma: f64,
}

impl ItnTrace {
    pub fn iterations(&self) -> usize {
        self.p_list.len() - 1
    }
}

/// Kernel-specific forward cache.
#[derive(Debug, Clone, PartialEq)]
pub enum WhitenerCache {
    Zca(EigenDecomp),
    Itn(ItnTrace),
}

impl WhitenerCache {
    pub fn dim(&self) -> usize {
        match self {
            WhitenerCache::Zca(e) => e.dim(),
            WhitenerCache::Itn(t) => t.sigma_n.rows(),
        }
    }
}

pub fn zca_forward(sigma: &Mat) -> Result<(Mat, EigenDecomp), WhiteningError> {
    let eig = sym_eig(sigma, SYM_EIG_TOL)?;
    let min = *eig.values.last().expect("non-empty");
    if min <= 0.0 {
        return Err(WhiteningError::NotPositiveDefinite { min_eigenvalue: min });
    }
    let w = eig.apply(|l| 1.0 / l.sqrt()).symmetrize();
    Ok((w, eig))
}

/// ZCA backward:
///
/// ```text
/// ∂L/∂Λ = diag(Dᵀ G D) ⊙ (−½ Λ^{-3/2})
/// ∂L/∂D = (G + Gᵀ) D Λ^{-1/2}
/// ∂L/∂Σ = D { Kᵀ ⊙ (Dᵀ ∂L/∂D) + (∂L/∂Λ)_diag } Dᵀ
/// ```
///
/// with `K_ij = 1/(λ_i − λ_j)` off the diagonal and zero on it or whenever
/// `|λ_i − λ_j| < tie_tol`.
pub fn zca_backward(d_w: &Mat, cache: &EigenDecomp, tie_tol: f64) -> Result<Mat, WhiteningError> {
    let n = cache.dim();
    if d_w.shape() != (n, n) {
        return Err(WhiteningError::DimensionMismatch { got: d_w.shape(), want: (n, n) });
    }
    let d = &cache.vectors;
    let lam = &cache.values;

    let projected = d.t_matmul(d_w).matmul(d);
    let sym_g = d_w.add(&d_w.transpose());
    let mut d_d = sym_g.matmul(d);
    for i in 0..n {
        for (j, v) in d_d.row_mut(i).iter_mut().enumerate() {
            *v /= lam[j].sqrt();
        }
    }
    let b = d.t_matmul(&d_d);

    let mut inner = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            inner[(i, j)] = if i == j {
                projected[(i, i)] * (-0.5 * lam[i].powf(-1.5))
            } else {
                // (Kᵀ)_ij = K_ji = 1/(λ_j − λ_i)
                let gap = lam[j] - lam[i];
                if gap.abs() < tie_tol {
                    0.0
                } else {
                    b[(i, j)] / gap
                }
            };
        }
    }
    Ok(d.matmul(&inner).matmul_t(d))
}

pub fn itn_forward(sigma: &Mat, iterations: usize) -> Result<(Mat, ItnTrace), WhiteningError> {
    itn_forward_with_trace(sigma, iterations, sigma.trace())
}

/// ItN with the normalizer `tr` supplied by the caller. `tr` must equal
/// `tr(Σ)` up to an additive constant for [`itn_backward`] to stay exact;
/// the dual route of row whitening uses this to reproduce the primal
/// normalization.
pub fn itn_forward_with_trace(sigma: &Mat, iterations: usize, tr: f64) -> Result<(Mat, ItnTrace), WhiteningError> {
    if !sigma.is_square() {
        return Err(LinalgError::DimensionMismatch(format!(
            "ItN needs a square covariance, got {}x{}",
            sigma.rows(),
            sigma.cols()
        ))
        .into());
    }
    if iterations == 0 {
        return Err(WhiteningError::InvalidConfig("iteration count T must be >= 1".into()));
    }
    if !(tr > 0.0) || !tr.is_finite() {
        return Err(WhiteningError::NonPositiveTrace(tr));
    }
    let n = sigma.rows();
    let sigma_n = sigma.scale(1.0 / tr);
    let mut p_list = Vec::with_capacity(iterations + 1);
    p_list.push(Mat::identity(n));
    for k in 1..=iterations {
        let p = &p_list[k - 1];
        let p3_sigma = p.matmul(p).matmul(p).matmul(&sigma_n);
        let mut next = p.scale(1.5);
        next.axpy(-0.5, &p3_sigma);
        if !next.is_finite() {
            return Err(WhiteningError::NonFiniteIteration(k));
        }
        p_list.push(next);
    }
    let w = p_list[iterations].scale(1.0 / tr.sqrt());
    Ok((w, ItnTrace { sigma_n, p_list, trace_sigma: tr }))
}

/// ItN backward. Runs the reverse recursion
///
/// ```text
/// ∂L/∂P_{k−1} = 3/2 ∂L/∂P_k − ½ ∂L/∂P_k (P²Σ_N)ᵀ − ½ (P²)ᵀ ∂L/∂P_k Σ_Nᵀ − ½ Pᵀ ∂L/∂P_k (P Σ_N)ᵀ
/// ```
///
/// (`P = P_{k−1}`) for `k = T..1`, accumulating
/// `∂L/∂Σ_N = −½ Σ_k (P_{k−1}³)ᵀ ∂L/∂P_k`, then undoes the trace
/// normalization, including the two `tr(·) I` correction terms.
pub fn itn_backward(d_w: &Mat, cache: &ItnTrace) -> Result<Mat, WhiteningError> {
    let n = cache.sigma_n.rows();
    if d_w.shape() != (n, n) {
        return Err(WhiteningError::DimensionMismatch { got: d_w.shape(), want: (n, n) });
    }
    let tr = cache.trace_sigma;
    let sn = &cache.sigma_n;
    let t = cache.iterations();

    let mut d_p = d_w.scale(1.0 / tr.sqrt());
    let mut d_sn = Mat::zeros(n, n);
    for k in (1..=t).rev() {
        let p = &cache.p_list[k - 1];
        let p2 = p.matmul(p);
        let p3 = p2.matmul(p);
        d_sn.axpy(-0.5, &p3.t_matmul(&d_p));

        let mut prev = d_p.scale(1.5);
        prev.axpy(-0.5, &d_p.matmul_t(&p2.matmul(sn)));
        prev.axpy(-0.5, &p2.t_matmul(&d_p).matmul_t(sn));
        prev.axpy(-0.5, &p.t_matmul(&d_p).matmul_t(&p.matmul(sn)));
        d_p = prev;
    }

    let sigma = sn.scale(tr);
    let mut d_sigma = d_sn.scale(1.0 / tr);
    let correction = d_sn.dot(&sigma) / (tr * tr) + d_w.dot(&cache.p_list[t]) / (2.0 * tr.powf(1.5));
    d_sigma.add_diag(-correction);
    Ok(d_sigma)
}

/// Dispatches to the configured kernel.
pub fn whiten_forward(sigma: &Mat, cfg: &WhiteningConfig) -> Result<(Mat, WhitenerCache), WhiteningError> {
    match cfg.method {
        WhiteningMethod::Zca => zca_forward(sigma).map(|(w, e)| (w, WhitenerCache::Zca(e))),
        WhiteningMethod::Itn => itn_forward(sigma, cfg.iterations).map(|(w, t)| (w, WhitenerCache::Itn(t))),
    }
}

pub fn whiten_backward(d_w: &Mat, cache: &WhitenerCache, cfg: &WhiteningConfig) -> Result<Mat, WhiteningError> {
    match cache {
        WhitenerCache::Zca(e) => zca_backward(d_w, e, cfg.eig_tie_tol),
        WhitenerCache::Itn(t) => itn_backward(d_w, t),
    }
}
