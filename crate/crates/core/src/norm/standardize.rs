//! Standardization (zero mean, unit variance) along one axis of a `d × m`
//! batch: per row for BN, per column for LN, and per column of the grouped
//! batch `Π(X)` for GN.

use serde::{Deserialize, Serialize};

use super::group::{group_divide_batch, group_merge_batch, GroupSpec};
use super::NormError;
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StandardizeAxis {
    /// Each row is normalized over the columns (BN: per neuron, over the batch).
    PerRowOverCols,
    /// Each column is normalized over the rows (LN: per sample, over neurons).
    PerColOverRows,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StandardizeCache {
    pub axis: StandardizeAxis,
    /// Centered input `X − μ`.
    pub xc: Mat,
    pub mean: Vec<f64>,
    /// `(σ² + ε)^{-1/2}` per slice.
    pub inv_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupNormCache {
    pub spec: GroupSpec,
    pub inner: StandardizeCache,
}

pub fn standardize_train(x: &Mat, axis: StandardizeAxis, eps: f64) -> Result<(Mat, StandardizeCache), NormError> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(NormError::InvalidArgument(format!("eps must be finite and >= 0, got {eps}")));
    }
    let (slices, len) = match axis {
        StandardizeAxis::PerRowOverCols => (x.rows(), x.cols()),
        StandardizeAxis::PerColOverRows => (x.cols(), x.rows()),
    };
    if len < 2 {
        return Err(NormError::Infeasible(format!(
            "standardization over {len} value(s) is degenerate; the normalized axis needs at least 2 entries (m >= 2)"
        )));
    }
    let at = |s: usize, k: usize| match axis {
        StandardizeAxis::PerRowOverCols => (s, k),
        StandardizeAxis::PerColOverRows => (k, s),
    };

    let inv_len = 1.0 / len as f64;
    let mut mean = vec![0.0; slices];
    let mut inv_std = vec![0.0; slices];
    let mut xc = x.clone();
    for s in 0..slices {
        let mu = (0..len).map(|k| x[at(s, k)]).sum::<f64>() * inv_len;
        let mut var = 0.0;
        for k in 0..len {
            let v = x[at(s, k)] - mu;
            xc[at(s, k)] = v;
            var += v * v;
        }
        let denom = var * inv_len + eps;
        if !(denom > 0.0) {
            return Err(NormError::NonFinite(format!("zero variance with eps = {eps} in slice {s}")));
        }
        mean[s] = mu;
        inv_std[s] = 1.0 / denom.sqrt();
    }
    let mut out = xc.clone();
    for s in 0..slices {
        for k in 0..len {
            out[at(s, k)] *= inv_std[s];
        }
    }
    Ok((out, StandardizeCache { axis, xc, mean, inv_std }))
}

/// Exact gradient of the standardization map, eps included:
/// `∂x = s (g − mean(g) − x̂ · mean(g ⊙ x̂))` per slice.
pub fn standardize_backward(d_xhat: &Mat, cache: &StandardizeCache) -> Result<Mat, NormError> {
    if d_xhat.shape() != cache.xc.shape() {
        return Err(NormError::CacheMismatch(format!(
            "upstream gradient is {}x{}, cache holds {}x{}",
            d_xhat.rows(),
            d_xhat.cols(),
            cache.xc.rows(),
            cache.xc.cols()
        )));
    }
    let axis = cache.axis;
    let (slices, len) = match axis {
        StandardizeAxis::PerRowOverCols => (cache.xc.rows(), cache.xc.cols()),
        StandardizeAxis::PerColOverRows => (cache.xc.cols(), cache.xc.rows()),
    };
    let at = |s: usize, k: usize| match axis {
        StandardizeAxis::PerRowOverCols => (s, k),
        StandardizeAxis::PerColOverRows => (k, s),
    };
    let inv_len = 1.0 / len as f64;
    let mut dx = Mat::zeros(d_xhat.rows(), d_xhat.cols());
    for s in 0..slices {
        let sd = cache.inv_std[s];
        let mut mean_g = 0.0;
        let mut mean_gx = 0.0;
        for k in 0..len {
            let g = d_xhat[at(s, k)];
            mean_g += g;
            mean_gx += g * cache.xc[at(s, k)] * sd;
        }
        mean_g *= inv_len;
        mean_gx *= inv_len;
        for k in 0..len {
            let xhat = cache.xc[at(s, k)] * sd;
            dx[at(s, k)] = sd * (d_xhat[at(s, k)] - mean_g - xhat * mean_gx);
        }
    }
    Ok(dx)
}

/// GN: `Π⁻¹(LN(Π(X)))` with contiguous channel groups.
pub fn group_norm_train(x: &Mat, spec: &GroupSpec, eps: f64) -> Result<(Mat, GroupNormCache), NormError> {
    let z = group_divide_batch(x, spec)?;
    let (zhat, inner) = standardize_train(&z, StandardizeAxis::PerColOverRows, eps).map_err(|e| match e {
        NormError::Infeasible(_) => NormError::Infeasible(format!(
            "group normalization with {} channel(s) per group is degenerate; need g <= d/2 (d={}, g={})",
            spec.channels_per_group(),
            spec.d(),
            spec.groups()
        )),
        other => other,
    })?;
    Ok((group_merge_batch(&zhat, spec)?, GroupNormCache { spec: *spec, inner }))
}

pub fn group_norm_backward(d_xhat: &Mat, cache: &GroupNormCache) -> Result<Mat, NormError> {
    let dz = group_divide_batch(d_xhat, &cache.spec)?;
    let dzx = standardize_backward(&dz, &cache.inner)?;
    group_merge_batch(&dzx, &cache.spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn fd_max_rel_err(f: impl Fn(&Mat) -> Mat, x: &Mat, upstream: &Mat, analytic: &Mat) -> f64 {
        let h = 1e-5;
        let mut worst = 0.0_f64;
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                let mut p = x.clone();
                let mut q = x.clone();
                p[(i, j)] += h;
                q[(i, j)] -= h;
                let num = (upstream.dot(&f(&p)) - upstream.dot(&f(&q))) / (2.0 * h);
                let a = analytic[(i, j)];
                let scale = a.abs().max(num.abs());
                if scale > 1e-8 {
                    worst = worst.max((a - num).abs() / scale);
                }
            }
        }
        worst
    }

    #[test]
    fn already_standard_row_is_unchanged() {
        let x = Mat::from_rows(&[&[1.0, -1.0]]).unwrap();
        let (y, _) = standardize_train(&x, StandardizeAxis::PerRowOverCols, 0.0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn constant_row_maps_to_zero() {
        let x = Mat::from_rows(&[&[5.0, 5.0, 5.0, 5.0]]).unwrap();
        let (y, _) = standardize_train(&x, StandardizeAxis::PerRowOverCols, 1e-5).unwrap();
        assert!(y.max_abs() < 1e-12);
        assert!(standardize_train(&x, StandardizeAxis::PerRowOverCols, 0.0).is_err());
    }

    #[test]
    fn single_sample_batch_is_rejected() {
        let x = Mat::from_rows(&[&[1.0], &[2.0]]).unwrap();
        assert!(matches!(
            standardize_train(&x, StandardizeAxis::PerRowOverCols, 1e-5),
            Err(NormError::Infeasible(_))
        ));
        // LN over the 2 neurons of a single sample is fine
        assert!(standardize_train(&x, StandardizeAxis::PerColOverRows, 1e-5).is_ok());
    }

    #[test]
    fn random_rows_are_standardized() {
        let x = gaussian(8, 32, 1).scale(3.0);
        let (y, _) = standardize_train(&x, StandardizeAxis::PerRowOverCols, 1e-5).unwrap();
        for i in 0..8 {
            let row = y.row(i);
            let mean = row.iter().sum::<f64>() / 32.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
            assert!(mean.abs() < 1e-12);
            assert!((1.0 - 1e-3..=1.0).contains(&var), "var {var}");
        }
    }

    #[test]
    fn backward_zero_and_constant_upstream() {
        let x = gaussian(4, 6, 2);
        for axis in [StandardizeAxis::PerRowOverCols, StandardizeAxis::PerColOverRows] {
            let (_, cache) = standardize_train(&x, axis, 1e-5).unwrap();
            assert_eq!(standardize_backward(&Mat::zeros(4, 6), &cache).unwrap().max_abs(), 0.0);
            let dx = standardize_backward(&Mat::from_fn(4, 6, |_, _| 1.0), &cache).unwrap();
            assert!(dx.max_abs() < 1e-12);
            assert!(standardize_backward(&Mat::zeros(6, 4), &cache).is_err());
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = gaussian(6, 16, 3);
        let up = gaussian(6, 16, 4);
        for axis in [StandardizeAxis::PerRowOverCols, StandardizeAxis::PerColOverRows] {
            let (_, cache) = standardize_train(&x, axis, 1e-5).unwrap();
            let dx = standardize_backward(&up, &cache).unwrap();
            let err = fd_max_rel_err(|m| standardize_train(m, axis, 1e-5).unwrap().0, &x, &up, &dx);
            assert!(err < 1e-6, "{axis:?}: {err:e}");
        }
    }

    #[test]
    fn group_norm_with_one_group_is_layer_norm() {
        let x = gaussian(12, 5, 5);
        let spec = GroupSpec::new(12, 1).unwrap();
        let (gn, _) = group_norm_train(&x, &spec, 1e-5).unwrap();
        let (ln, _) = standardize_train(&x, StandardizeAxis::PerColOverRows, 1e-5).unwrap();
        assert!(gn.max_abs_diff(&ln) < 1e-12);
    }

    #[test]
    fn group_norm_standardizes_each_group() {
        let x = gaussian(12, 3, 6);
        let spec = GroupSpec::new(12, 3).unwrap();
        let (y, _) = group_norm_train(&x, &spec, 0.0).unwrap();
        for j in 0..3 {
            for grp in 0..3 {
                let vals: Vec<f64> = (0..4).map(|r| y[(grp * 4 + r, j)]).collect();
                let mean = vals.iter().sum::<f64>() / 4.0;
                let var = vals.iter().map(|v| v * v).sum::<f64>() / 4.0;
                assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
            }
        }
        let spec1 = GroupSpec::new(12, 12).unwrap();
        assert!(matches!(group_norm_train(&x, &spec1, 1e-5), Err(NormError::Infeasible(_))));
    }

    #[test]
    fn group_norm_backward_matches_finite_differences() {
        let x = gaussian(8, 4, 7);
        let up = gaussian(8, 4, 8);
        let spec = GroupSpec::new(8, 2).unwrap();
        let (_, cache) = group_norm_train(&x, &spec, 1e-5).unwrap();
        let dx = group_norm_backward(&up, &cache).unwrap();
        let err = fd_max_rel_err(|m| group_norm_train(m, &spec, 1e-5).unwrap().0, &x, &up, &dx);
        assert!(err < 1e-6, "{err:e}");
    }
}
