//! Batch whitening (BW): whitening of the `d × m` batch across the batch
//! axis, optionally in independent blocks of `c_bw` channels.

use log::debug;

use super::whiten_rows::{whiten_rows_backward, whiten_rows_train, RowWhitenCache};
use super::NormError;
use crate::constraints::bw_min_batch;
use crate::linalg::Mat;
use crate::whitening::{WhiteningConfig, WhiteningMethod};

#[derive(Debug, Clone, PartialEq)]
pub struct BwCache {
    pub cfg: WhiteningConfig,
    /// Channels per whitening block.
    pub block: usize,
    pub blocks: Vec<RowWhitenCache>,
}

impl BwCache {
    pub fn channels(&self) -> usize {
        self.block * self.blocks.len()
    }

    pub fn batch_mean(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|b| b.mean.iter().copied()).collect()
    }

    /// Block-diagonal `d × d` whitening matrix used by this batch.
    pub fn whitener(&self) -> Mat {
        self.block_diag(|b| &b.w)
    }

    /// Block-diagonal `d × d` batch covariance (eps included).
    pub fn covariance(&self) -> Mat {
        self.block_diag(|b| &b.sigma)
    }

    fn block_diag<'a>(&'a self, pick: impl Fn(&'a RowWhitenCache) -> &'a Mat) -> Mat {
        let d = self.channels();
        let mut out = Mat::zeros(d, d);
        for (k, b) in self.blocks.iter().enumerate() {
            let m = pick(b);
            for i in 0..self.block {
                for j in 0..self.block {
                    out[(k * self.block + i, k * self.block + j)] = m[(i, j)];
                }
            }
        }
        out
    }
}

/// BW forward in training mode. `group_channels = Some(c)` whitens each
/// block of `c` consecutive channels separately; `Some(1)` is BN.
pub fn bw_forward_train(
    x: &Mat,
    cfg: &WhiteningConfig,
    group_channels: Option<usize>,
) -> Result<(Mat, BwCache), NormError> {
    let (d, m) = x.shape();
    if m < 2 {
        return Err(NormError::Infeasible(format!("batch whitening needs m >= 2 samples, got m={m}")));
    }
    let block = group_channels.unwrap_or(d);
    if block == 0 || d % block != 0 {
        return Err(NormError::InvalidArgument(format!("{block} channels per whitening group does not divide d={d}")));
    }
    if cfg.method == WhiteningMethod::Zca && m < bw_min_batch(block) {
        debug!(
            "batch whitening with m={m} < (c+3)/2 = {} for c={block} channels per group: the output constraints outnumber its entries",
            bw_min_batch(block)
        );
    }

    let mut out = Mat::zeros(d, m);
    let mut blocks = Vec::with_capacity(d / block);
    for k in 0..d / block {
        let (y, cache) = whiten_rows_train(&x.row_block(k * block, block), cfg, false)?;
        out.set_row_block(k * block, &y);
        blocks.push(cache);
    }
    Ok((out, BwCache { cfg: *cfg, block, blocks }))
}

pub fn bw_backward(d_out: &Mat, cache: &BwCache) -> Result<Mat, NormError> {
    let d = cache.channels();
    let m = cache.blocks.first().map_or(0, |b| b.dims().1);
    if d_out.shape() != (d, m) {
        return Err(NormError::CacheMismatch(format!(
            "upstream gradient is {}x{}, BW cache holds {d}x{m}",
            d_out.rows(),
            d_out.cols()
        )));
    }
    let mut dx = Mat::zeros(d, m);
    for (k, b) in cache.blocks.iter().enumerate() {
        let g = whiten_rows_backward(&d_out.row_block(k * cache.block, cache.block), b, &cache.cfg)?;
        dx.set_row_block(k * cache.block, &g);
    }
    Ok(dx)
}
