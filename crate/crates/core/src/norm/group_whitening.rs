//! Group whitening (GW): per sample, `x ↦ Π⁻¹(ψ(Π(x)))` where the `g × c`
//! grouped matrix is whitened over its `c` columns.

use log::Level;

use super::group::{group_divide, group_merge, GroupSpec};
use super::whiten_rows::{whiten_rows_backward, whiten_rows_train, RowWhitenCache};
use super::NormError;
use crate::constraints::gw_max_groups;
use crate::linalg::Mat;
use crate::whitening::WhiteningConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct GwCache {
    pub spec: GroupSpec,
    pub cfg: WhiteningConfig,
    pub inner: RowWhitenCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GwBatchCache {
    pub spec: GroupSpec,
    pub samples: Vec<GwCache>,
}

/// Validates `cfg` and logs range warnings at `level`.
pub(crate) fn check_config(spec: &GroupSpec, cfg: &WhiteningConfig, level: Level) -> Result<(), NormError> {
    cfg.validate()?;
    let (d, g) = (spec.d(), spec.groups());
    if g > gw_max_groups(d) {
        log::log!(
            level,
            "group whitening with g={g} exceeds the feasible range g <= (sqrt(8d+9)-3)/2 = {} for d={d}",
            gw_max_groups(d)
        );
    }
    if spec.channels_per_group() == 1 {
        log::log!(level, "group whitening with c=1 channel per group: every group collapses to zero");
    }
    Ok(())
}

fn forward_one(x: &[f64], spec: &GroupSpec, cfg: &WhiteningConfig) -> Result<(Vec<f64>, GwCache), NormError> {
    let xg = group_divide(x, spec)?;
    let (yg, inner) = whiten_rows_train(&xg, cfg, true)?;
    Ok((group_merge(&yg, spec)?, GwCache { spec: *spec, cfg: *cfg, inner }))
}

pub fn gw_forward(x: &[f64], spec: &GroupSpec, cfg: &WhiteningConfig) -> Result<(Vec<f64>, GwCache), NormError> {
    check_config(spec, cfg, Level::Warn)?;
    forward_one(x, spec, cfg)
}

pub fn gw_backward(d_out: &[f64], cache: &GwCache) -> Result<Vec<f64>, NormError> {
    if d_out.len() != cache.spec.d() {
        return Err(NormError::CacheMismatch(format!(
            "upstream gradient has {} entries, GW cache expects {}",
            d_out.len(),
            cache.spec.d()
        )));
    }
    let dg = group_divide(d_out, &cache.spec)?;
    let dxg = whiten_rows_backward(&dg, &cache.inner, &cache.cfg)?;
    group_merge(&dxg, &cache.spec)
}

/// GW applied to every column of a `d × m` batch.
pub fn gw_forward_batch(x: &Mat, spec: &GroupSpec, cfg: &WhiteningConfig) -> Result<(Mat, GwBatchCache), NormError> {
    if x.rows() != spec.d() {
        return Err(NormError::ShapeMismatch(format!("expected {} rows, got {}", spec.d(), x.rows())));
    }
    check_config(spec, cfg, Level::Debug)?;
    let mut out = Mat::zeros(x.rows(), x.cols());
    let mut samples = Vec::with_capacity(x.cols());
    for j in 0..x.cols() {
        let (y, cache) = forward_one(&x.col(j), spec, cfg)?;
        out.set_col(j, &y);
        samples.push(cache);
    }
    Ok((out, GwBatchCache { spec: *spec, samples }))
}

pub fn gw_backward_batch(d_out: &Mat, cache: &GwBatchCache) -> Result<Mat, NormError> {
    if d_out.shape() != (cache.spec.d(), cache.samples.len()) {
        return Err(NormError::CacheMismatch(format!(
            "upstream gradient is {}x{}, GW cache holds {}x{}",
            d_out.rows(),
            d_out.cols(),
            cache.spec.d(),
            cache.samples.len()
        )));
    }
    let mut dx = Mat::zeros(d_out.rows(), d_out.cols());
    for (j, c) in cache.samples.iter().enumerate() {
        dx.set_col(j, &gw_backward(&d_out.col(j), c)?);
    }
    Ok(dx)
}
