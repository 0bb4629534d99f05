//! Constraint numbers of the normalization output, feasibility ranges of the
//! batch size / group number, and a numerical rank certificate.
//!
//! A normalization `φ` forces its output `X̂ ∈ R^{d×m}` to satisfy a system
//! of equations (zero means, unit variances, identity covariances). The
//! constraint number `ζ(φ; X)` counts the independent ones; the output is
//! only free when `ζ ≤ χ = md`.
//!
//! | method | ζ(φ; X)      | ζ(φ; D), N samples | feasible range          |
//! |--------|--------------|--------------------|-------------------------|
//! | BN     | 2d           | 2Nd/m              | m ≥ 2                   |
//! | BW     | d(d+3)/2     | Nd(d+3)/(2m)       | m ≥ (d+3)/2             |
//! | GN     | 2gm          | 2gN                | g ≤ d/2                 |
//! | GW     | mg(g+3)/2    | Ng(g+3)/2          | g ≤ (√(8d+9) − 3)/2     |
//!
//! For convolutional inputs pass the effective sizes (`d = d'HW` for GN/GW,
//! `m = m'HW` for BN/BW).

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{numerical_rank, Mat};
use crate::norm::{
    bw_forward_train, group_norm_train, gw_forward_batch, standardize_train, GroupSpec, NormError, StandardizeAxis,
};
use crate::whitening::WhiteningConfig;

/// Singular values below `RANK_REL_TOL · σ_max` count as zero.
pub const RANK_REL_TOL: f64 = 1e-8;
pub const DEFAULT_RANK_TRIALS: usize = 5;
/// Regularizer used when projecting random inputs onto the constraint set.
const FEASIBLE_POINT_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("group count {g} does not divide {d} channels; nearest valid group count is {suggestion}")]
    GroupDivisibility { d: usize, g: usize, suggestion: usize },
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Norm(#[from] NormError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMethod {
    Bn,
    Bw,
    Gn,
    Gw,
}

impl NormMethod {
    pub const ALL: [NormMethod; 4] = [NormMethod::Bn, NormMethod::Bw, NormMethod::Gn, NormMethod::Gw];

    pub fn uses_groups(self) -> bool {
        matches!(self, NormMethod::Gn | NormMethod::Gw)
    }
}

impl fmt::Display for NormMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormMethod::Bn => "bn",
            NormMethod::Bw => "bw",
            NormMethod::Gn => "gn",
            NormMethod::Gw => "gw",
        })
    }
}

impl FromStr for NormMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bn" => Ok(NormMethod::Bn),
            "bw" => Ok(NormMethod::Bw),
            "gn" => Ok(NormMethod::Gn),
            "gw" => Ok(NormMethod::Gw),
            other => Err(format!("unknown method '{other}' (expected bn, bw, gn or gw)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub method: NormMethod,
    pub d: usize,
    pub m: usize,
    /// Group count; 1 for BN/BW.
    pub g: usize,
    pub zeta_batch: u64,
    /// Dataset-level count for `N` samples, when `N` was given. Not an
    /// integer unless `m` divides `N` (BN/BW).
    pub zeta_dataset: Option<f64>,
    pub chi: u64,
    pub feasible: bool,
}

/// Smallest batch size with `d(d+3)/2 ≤ md`, i.e. `⌈(d+3)/2⌉`.
pub fn bw_min_batch(d: usize) -> usize {
    (d + 4) / 2
}

/// Largest group count with `g(g+3)/2 ≤ d`, i.e. `⌊(√(8d+9) − 3)/2⌋`.
pub fn gw_max_groups(d: usize) -> usize {
    let mut g = 0;
    while (g + 1) * (g + 4) / 2 <= d {
        g += 1;
    }
    g
}

pub fn gn_max_groups(d: usize) -> usize {
    d / 2
}

fn check_groups(method: NormMethod, d: usize, g: usize) -> Result<usize, ConstraintError> {
    if !method.uses_groups() {
        return Ok(1);
    }
    if g == 0 {
        return Err(ConstraintError::InvalidArgument("group count must be positive".into()));
    }
    if d % g != 0 {
        return Err(ConstraintError::GroupDivisibility { d, g, suggestion: crate::norm::suggest_group_count(d, g) });
    }
    Ok(g)
}

pub fn constraint_count(
    method: NormMethod,
    d: usize,
    m: usize,
    g: usize,
    n: Option<usize>,
) -> Result<ConstraintReport, ConstraintError> {
    if d == 0 || m == 0 {
        return Err(ConstraintError::InvalidArgument(format!("d and m must be positive (d={d}, m={m})")));
    }
    let g = check_groups(method, d, g)?;
    let (d64, m64, g64) = (d as u64, m as u64, g as u64);
    let zeta_batch = match method {
        NormMethod::Bn => 2 * d64,
        NormMethod::Bw => d64 * (d64 + 3) / 2,
        NormMethod::Gn => 2 * g64 * m64,
        NormMethod::Gw => m64 * g64 * (g64 + 3) / 2,
    };
    let zeta_dataset = n.map(|n| {
        let (n, d, m, g) = (n as f64, d as f64, m as f64, g as f64);
        match method {
            NormMethod::Bn => 2.0 * n * d / m,
            NormMethod::Bw => n * d * (d + 3.0) / (2.0 * m),
            NormMethod::Gn => 2.0 * g * n,
            NormMethod::Gw => n * g * (g + 3.0) / 2.0,
        }
    });
    let chi = m64 * d64;
    Ok(ConstraintReport { method, d, m, g, zeta_batch, zeta_dataset, chi, feasible: zeta_batch <= chi })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bounded {
    /// Lower bound on the batch size `m`.
    BatchSize,
    /// Upper bound on the group count `g`.
    GroupCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityBound {
    pub method: NormMethod,
    pub d: usize,
    pub variable: Bounded,
    /// The real-valued threshold, e.g. `(d+3)/2`.
    pub threshold: f64,
    /// The tightest integer satisfying it (`m ≥ limit` or `g ≤ limit`).
    pub limit: usize,
    /// Practical limit for numerically stable whitening, where one applies.
    pub stability_limit: Option<usize>,
}

impl fmt::Display for FeasibilityBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let expr = match self.method {
            NormMethod::Bn => "m >= 2".to_string(),
            NormMethod::Bw => format!("m >= (d+3)/2 = {}", self.threshold),
            NormMethod::Gn => format!("g <= d/2 = {}", self.threshold),
            NormMethod::Gw => format!("g <= (sqrt(8d+9)-3)/2 = {:.4}", self.threshold),
        };
        let int = match self.variable {
            Bounded::BatchSize => format!("m >= {}", self.limit),
            Bounded::GroupCount => format!("g <= {}", self.limit),
        };
        write!(f, "{} with d={}: {expr}", self.method, self.d)?;
        if self.threshold != self.limit as f64 {
            write!(f, ", i.e. {int}")?;
        }
        if let Some(s) = self.stability_limit {
            match self.variable {
                Bounded::BatchSize => write!(f, " (m >= {s} for stable whitening)")?,
                Bounded::GroupCount => write!(f, " (g <= {s} for stable whitening)")?,
            }
        }
        Ok(())
    }
}

impl FeasibilityBound {
    pub fn admits(&self, value: usize) -> bool {
        match self.variable {
            Bounded::BatchSize => value >= self.limit,
            Bounded::GroupCount => value <= self.limit,
        }
    }
}

pub fn feasibility_bound(method: NormMethod, d: usize) -> FeasibilityBound {
    let df = d as f64;
    let (variable, threshold, limit, stability_limit) = match method {
        NormMethod::Bn => (Bounded::BatchSize, 2.0, 2, None),
        NormMethod::Bw => (Bounded::BatchSize, (df + 3.0) / 2.0, bw_min_batch(d), Some(d)),
        NormMethod::Gn => (Bounded::GroupCount, df / 2.0, gn_max_groups(d), None),
        NormMethod::Gw => (
            Bounded::GroupCount,
            ((8.0 * df + 9.0).sqrt() - 3.0) / 2.0,
            gw_max_groups(d),
            Some((df.sqrt().floor() as usize).min(gw_max_groups(d))),
        ),
    };
    FeasibilityBound { method, d, variable, threshold, limit, stability_limit }
}

/// Jacobian of the constraint map at `x̂` (one row per equation, one column
/// per entry of `x̂` in row-major order). Redundant equations are included;
/// the rank counts the independent ones.
pub fn constraint_jacobian(method: NormMethod, xhat: &Mat, g: usize) -> Result<Mat, ConstraintError> {
    let (d, m) = xhat.shape();
    let g = check_groups(method, d, g)?;
    let var = |i: usize, j: usize| i * m + j;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    match method {
        NormMethod::Bn => {
            for i in 0..d {
                rows.push((0..m).map(|j| (var(i, j), 1.0)).collect());
                rows.push((0..m).map(|j| (var(i, j), 2.0 * xhat[(i, j)])).collect());
            }
        }
        NormMethod::Bw => {
            for i in 0..d {
                rows.push((0..m).map(|j| (var(i, j), 1.0)).collect());
            }
            // (X̂X̂ᵀ)_ab − mδ_ab for a ≤ b
            for a in 0..d {
                for b in a..d {
                    let mut row = Vec::with_capacity(2 * m);
                    for j in 0..m {
                        row.push((var(a, j), xhat[(b, j)]));
                        row.push((var(b, j), xhat[(a, j)]));
                    }
                    rows.push(row);
                }
            }
        }
        NormMethod::Gn | NormMethod::Gw => {
            let c = d / g;
            for j in 0..m {
                for k in 0..g {
                    let chans = k * c..(k + 1) * c;
                    rows.push(chans.clone().map(|i| (var(i, j), 1.0)).collect());
                }
                if method == NormMethod::Gn {
                    for k in 0..g {
                        rows.push((k * c..(k + 1) * c).map(|i| (var(i, j), 2.0 * xhat[(i, j)])).collect());
                    }
                } else {
                    // (X̂_G X̂_Gᵀ)_ab − cδ_ab for groups a ≤ b of sample j
                    for a in 0..g {
                        for b in a..g {
                            let mut row = Vec::with_capacity(2 * c);
                            for r in 0..c {
                                row.push((var(a * c + r, j), xhat[(b * c + r, j)]));
                                row.push((var(b * c + r, j), xhat[(a * c + r, j)]));
                            }
                            rows.push(row);
                        }
                    }
                }
            }
        }
    }
    let mut jac = Mat::zeros(rows.len(), d * m);
    for (r, entries) in rows.iter().enumerate() {
        for &(col, v) in entries {
            jac[(r, col)] += v;
        }
    }
    Ok(jac)
}

/// A point of the constraint set: a random Gaussian batch pushed through the
/// normalization itself (ZCA for the whitening methods).
pub fn feasible_point(method: NormMethod, d: usize, m: usize, g: usize, seed: u64) -> Result<Mat, ConstraintError> {
    let g = check_groups(method, d, g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Mat::from_fn(d, m, |_, _| StandardNormal.sample(&mut rng));
    let cfg = WhiteningConfig::zca().with_eps(FEASIBLE_POINT_EPS);
    Ok(match method {
        NormMethod::Bn => standardize_train(&x, StandardizeAxis::PerRowOverCols, FEASIBLE_POINT_EPS)?.0,
        NormMethod::Bw => bw_forward_train(&x, &cfg, None)?.0,
        NormMethod::Gn => group_norm_train(&x, &GroupSpec::new(d, g)?, FEASIBLE_POINT_EPS)?.0,
        NormMethod::Gw => gw_forward_batch(&x, &GroupSpec::new(d, g)?, &cfg)?.0,
    })
}

/// Numerical rank of the constraint Jacobian, maximized over `trials`
/// random feasible points (seeds `seed..seed+trials`).
pub fn constraint_rank_oracle(
    method: NormMethod,
    d: usize,
    m: usize,
    g: usize,
    trials: usize,
    seed: u64,
) -> Result<usize, ConstraintError> {
    let report = constraint_count(method, d, m, g, None)?;
    if !report.feasible {
        return Err(ConstraintError::Infeasible(format!(
            "{}; zeta={} exceeds chi=md={}",
            feasibility_bound(method, d),
            report.zeta_batch,
            report.chi
        )));
    }
    if trials == 0 {
        return Err(ConstraintError::InvalidArgument("at least one trial is required".into()));
    }
    let mut best = 0;
    for t in 0..trials as u64 {
        let xhat = feasible_point(method, d, m, report.g, seed.wrapping_add(t))?;
        let jac = constraint_jacobian(method, &xhat, report.g)?;
        best = best.max(numerical_rank(&jac, RANK_REL_TOL));
    }
    Ok(best)
}
