//! Numerical certificates: grouped-output whitening constraints and finite
//! difference gradient checks of every normalization layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::linalg::{covariance, sym_eig, Mat, SYM_EIG_TOL};
use crate::norm::{group_divide, gw_forward, GroupSpec, NormError, NormKind, NormLayer};
use crate::whitening::WhiteningConfig;

/// Whitening eps for constraint checks: small enough that `Σ(Σ+εI)^{-1}`
/// is the identity to well below the check tolerances.
pub const CHECK_EPS: f64 = 1e-12;
pub const MEAN_TOL: f64 = 1e-8;
pub const COV_TOL: f64 = 1e-6;
/// Covariance tolerance for ItN with the default `T = 5`.
pub const ITN_COV_TOL: f64 = 5e-3;
/// Step of the five-point central difference stencil. Constant inputs use
/// `0.01·√eps` instead, since the layer is only smooth on that scale there.
pub const FD_STEP: f64 = 1e-3;
pub const GRAD_REL_TOL: f64 = 1e-4;
/// Entries with both analytic and numeric magnitude below this are skipped.
pub const GRAD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupViolation {
    /// `max_i |(X̂_G 1)_i|`.
    pub mean: f64,
    /// `max_ij |((1/c) X̂_G X̂_Gᵀ − I)_ij|`.
    pub cov: f64,
}

/// Violations of the grouped-output constraints for one GW output.
pub fn group_violation(xhat: &[f64], spec: &GroupSpec) -> Result<GroupViolation, NormError> {
    let z = group_divide(xhat, spec)?;
    let c = spec.channels_per_group() as f64;
    let mean = z.row_sums().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut cov = z.matmul_t(&z).scale(1.0 / c);
    cov.add_diag(-1.0);
    Ok(GroupViolation { mean, cov: cov.max_abs() })
}

/// Condition number of the grouped covariance `(1/c) X_G X_Gᵀ` (centered).
pub fn group_condition(x: &[f64], spec: &GroupSpec) -> Result<f64, NormError> {
    let (xc, _) = group_divide(x, spec)?.center_rows();
    let eig = sym_eig(&covariance(&xc, spec.channels_per_group(), 0.0)?, SYM_EIG_TOL)?;
    let (max, min) = (eig.values[0], *eig.values.last().expect("non-empty"));
    Ok(if min > 0.0 { max / min } else { f64::INFINITY })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WhitenCheckReport {
    pub d: usize,
    pub g: usize,
    pub samples: usize,
    /// Candidate inputs drawn, including those rejected by the κ filter.
    pub drawn: usize,
    pub max_mean_violation: f64,
    pub max_cov_violation: f64,
}

impl WhitenCheckReport {
    pub fn within(&self, mean_tol: f64, cov_tol: f64) -> bool {
        self.max_mean_violation < mean_tol && self.max_cov_violation < cov_tol
    }
}

/// GW on `samples` Gaussian inputs of dimension `d`. With `max_kappa`, inputs
/// whose grouped covariance has condition number `≥ max_kappa` are redrawn
/// (up to 1000 draws per accepted sample).
pub fn whiten_check(
    d: usize,
    g: usize,
    cfg: &WhiteningConfig,
    samples: usize,
    max_kappa: Option<f64>,
    seed: u64,
) -> Result<WhitenCheckReport, NormError> {
    let spec = GroupSpec::new(d, g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report =
        WhitenCheckReport { d, g, samples, drawn: 0, max_mean_violation: 0.0, max_cov_violation: 0.0 };
    for _ in 0..samples {
        let x = loop {
            report.drawn += 1;
            let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            match max_kappa {
                Some(k) if group_condition(&x, &spec)? >= k => {
                    if report.drawn > 1000 * samples {
                        return Err(NormError::InvalidArgument(format!("no input with kappa < {k} found")));
                    }
                }
                _ => break x,
            }
        };
        let (y, _) = gw_forward(&x, &spec, cfg)?;
        let v = group_violation(&y, &spec)?;
        report.max_mean_violation = report.max_mean_violation.max(v.mean);
        report.max_cov_violation = report.max_cov_violation.max(v.cov);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub layer: String,
    pub d: usize,
    pub m: usize,
    pub g: usize,
    pub seed: u64,
    /// Entries compared (those above [`GRAD_FLOOR`]).
    pub compared: usize,
    pub max_rel_err: f64,
    pub analytic_finite: bool,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.analytic_finite && self.max_rel_err < tol
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Compares the analytic input gradient of a training-mode layer (random
/// affine parameters, loss `⟨G, Y⟩` with random `G`) against the five-point
/// central difference `(f(−2h) − 8f(−h) + 8f(h) − f(2h)) / 12h`. With
/// `degenerate`, every channel of the input is constant across the batch.
pub fn grad_check(
    kind: NormKind,
    d: usize,
    m: usize,
    eps: f64,
    degenerate: bool,
    seed: u64,
) -> Result<GradCheckReport, NormError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = NormLayer::with_eps(kind, d, eps)?;
    if kind != NormKind::None {
        layer.state.gamma = (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.5 + z.abs()
            })
            .collect();
        layer.state.beta = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    }
    let x = if degenerate {
        let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        Mat::from_fn(d, m, |i, _| row[i])
    } else {
        gaussian(d, m, &mut rng)
    };
    let upstream = gaussian(d, m, &mut rng);

    let loss = |x: &Mat| -> Result<f64, NormError> {
        let (y, _) = layer.clone().forward_train(x)?;
        Ok(y.dot(&upstream))
    };
    let (_, cache) = layer.clone().forward_train(&x)?;
    let analytic = layer.backward(&upstream, cache)?.dx;
    let mut report = GradCheckReport {
        layer: kind.to_string(),
        d,
        m,
        g: kind.group_count(),
        seed,
        compared: 0,
        max_rel_err: 0.0,
        analytic_finite: analytic.is_finite(),
    };
    if !report.analytic_finite {
        report.max_rel_err = f64::NAN;
        return Ok(report);
    }
    let h = if degenerate { 0.01 * eps.sqrt() } else { FD_STEP };
    for i in 0..d {
        for j in 0..m {
            let at = |delta: f64| {
                let mut xp = x.clone();
                xp[(i, j)] += delta;
                loss(&xp)
            };
            let num = (at(-2.0 * h)? - 8.0 * at(-h)? + 8.0 * at(h)? - at(2.0 * h)?) / (12.0 * h);
            let ana = analytic[(i, j)];
            let scale = num.abs().max(ana.abs());
            if scale <= GRAD_FLOOR {
                continue;
            }
            report.compared += 1;
            report.max_rel_err = report.max_rel_err.max((num - ana).abs() / scale);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::whitening::WhiteningMethod;

    #[test]
    fn zca_groups_are_white() {
        let cfg = WhiteningConfig::zca().with_eps(CHECK_EPS);
        let r = whiten_check(16, 2, &cfg, 20, None, 1).unwrap();
        assert!(r.within(MEAN_TOL, COV_TOL), "{r:?}");
        assert_eq!(r.drawn, 20);
    }

    #[test]
    fn more_iterations_tighten_itn() {
        let at = |t| whiten_check(16, 2, &WhiteningConfig::itn(t).with_eps(CHECK_EPS), 20, None, 2).unwrap();
        assert!(at(1).max_cov_violation > at(5).max_cov_violation);
    }

    #[test]
    fn kappa_filter_redraws() {
        let cfg = WhiteningConfig::zca().with_eps(CHECK_EPS);
        let r = whiten_check(16, 2, &cfg, 10, Some(3.0), 3).unwrap();
        assert!(r.drawn > 10);
        assert!(whiten_check(16, 4, &cfg, 1, Some(100.0), 3).is_err(), "c = g = 4 is always rank deficient");
    }

    #[test]
    fn layers_pass_gradient_check() {
        for kind in [
            NormKind::Bn,
            NormKind::Ln,
            NormKind::Gn { groups: 2 },
            NormKind::bw(WhiteningMethod::Zca),
            NormKind::bw(WhiteningMethod::Itn),
            NormKind::gw(2, WhiteningMethod::Zca),
            NormKind::gw(2, WhiteningMethod::Itn),
        ] {
            let r = grad_check(kind, 4, 8, 1e-5, false, 0).unwrap();
            assert!(r.passes(GRAD_REL_TOL), "{r:?}");
            assert!(r.compared > 0);
        }
    }

    #[test]
    fn constant_input_stays_finite() {
        for kind in [NormKind::Bn, NormKind::gw(2, WhiteningMethod::Itn)] {
            let r = grad_check(kind, 4, 6, 1e-5, true, 1).unwrap();
            assert!(r.analytic_finite && r.passes(GRAD_REL_TOL), "{r:?}");
        }
    }
}
