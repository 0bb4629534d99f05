//! Normalization layers: BN, LN, GN (standardization), BW and GW
//! (whitening), their running statistics, affine parameters and state
//! serialization.

use thiserror::Error;

use crate::linalg::LinalgError;
use crate::whitening::WhiteningError;

pub mod affine;
pub mod batch_whitening;
pub mod conv;
pub mod group;
pub mod group_whitening;
pub mod layer;
pub mod running;
pub mod standardize;
pub mod state_io;
pub mod whiten_rows;

pub use affine::{affine_backward, affine_forward, AffineCache};
pub use batch_whitening::{bw_backward, bw_forward_train, BwCache};
pub use conv::{gw_cost, gw_relative_cost, reroll_conv, unroll_conv, ConvShape, Tensor4, UnrollMode};
pub use group::{group_divide, group_divide_batch, group_merge, group_merge_batch, suggest_group_count, GroupSpec};
pub use group_whitening::{gw_backward, gw_backward_batch, gw_forward, gw_forward_batch, GwBatchCache, GwCache};
pub use layer::{ForwardCache, LayerGrads, NormKind, NormLayer};
pub use running::{bn_eval, bw_eval, update_running, BwStatsMode, LayerState, Mode, RunningWhitener};
pub use standardize::{
    group_norm_backward, group_norm_train, standardize_backward, standardize_train, GroupNormCache, StandardizeAxis,
    StandardizeCache,
};
pub use whiten_rows::{whiten_rows_backward, whiten_rows_train, Route, RowWhitenCache};

pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Whitening(#[from] WhiteningError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("group count {g} does not divide {d} channels; nearest valid group count is {suggestion}")]
    GroupDivisibility { d: usize, g: usize, suggestion: usize },
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("momentum must lie in (0, 1], got {0}")]
    InvalidMomentum(f64),
    #[error("running statistics were never updated; run at least one training forward before eval")]
    StatsNotInitialized,
    #[error("cache does not match this backward call: {0}")]
    CacheMismatch(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed state file: {0}")]
    Format(String),
}

impl From<std::io::Error> for NormError {
    fn from(e: std::io::Error) -> Self {
        NormError::Io(e.to_string())
    }
}
