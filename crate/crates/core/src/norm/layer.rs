//! A normalization layer over `d × m` activations: one of the six transforms
//! followed by per-channel affine parameters, with train/eval modes.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::affine::{affine_backward, affine_forward, AffineCache};
use super::batch_whitening::{bw_backward, bw_forward_train, BwCache};
use super::group::GroupSpec;
use super::group_whitening::{check_config, gw_backward_batch, gw_forward_batch, GwBatchCache};
use super::running::{bn_eval, bw_eval, BwStatsMode, LayerState, Mode, RunningWhitener};
use super::standardize::{
    group_norm_backward, group_norm_train, standardize_backward, standardize_train, GroupNormCache, StandardizeAxis,
    StandardizeCache,
};
use super::NormError;
use crate::linalg::Mat;
use crate::whitening::{WhiteningConfig, WhiteningMethod, DEFAULT_EIG_TIE_TOL, DEFAULT_EPS, DEFAULT_ITERATIONS};

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NormKind {
    /// No normalization and no affine parameters.
    None,
    Bn,
    Ln,
    Gn {
        groups: usize,
    },
    Bw {
        #[serde(default)]
        method: WhiteningMethod,
        #[serde(default = "default_iterations")]
        iterations: usize,
        /// Channels per whitening block; `None` whitens all channels jointly.
        #[serde(default)]
        group_channels: Option<usize>,
        #[serde(default)]
        stats: BwStatsMode,
    },
    Gw {
        groups: usize,
        #[serde(default)]
        method: WhiteningMethod,
        #[serde(default = "default_iterations")]
        iterations: usize,
    },
}

impl NormKind {
    pub fn bw(method: WhiteningMethod) -> Self {
        NormKind::Bw { method, iterations: DEFAULT_ITERATIONS, group_channels: None, stats: BwStatsMode::Whitener }
    }

    pub fn gw(groups: usize, method: WhiteningMethod) -> Self {
        NormKind::Gw { groups, method, iterations: DEFAULT_ITERATIONS }
    }

    /// Group number reported in result tables; 0 where not applicable.
    pub fn group_count(&self) -> usize {
        match *self {
            NormKind::Gn { groups } | NormKind::Gw { groups, .. } => groups,
            _ => 0,
        }
    }
}

/// Short labels: `none`, `bn`, `ln`, `gn`, `bw-zca`, `bw-itn`, `gw-zca`, `gw-itn`.
impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormKind::None => f.write_str("none"),
            NormKind::Bn => f.write_str("bn"),
            NormKind::Ln => f.write_str("ln"),
            NormKind::Gn { .. } => f.write_str("gn"),
            NormKind::Bw { method, .. } => write!(f, "bw-{method}"),
            NormKind::Gw { method, .. } => write!(f, "gw-{method}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum NormCache {
    Identity,
    Standardize(StandardizeCache),
    Group(GroupNormCache),
    Bw(BwCache),
    Gw(GwBatchCache),
}

/// Intermediates of one training-mode forward, consumed by [`NormLayer::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    kind: NormKind,
    shape: (usize, usize),
    norm: NormCache,
    affine: Option<AffineCache>,
}

impl ForwardCache {
    pub fn kind(&self) -> NormKind {
        self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub dx: Mat,
    /// Empty for [`NormKind::None`].
    pub d_gamma: Vec<f64>,
    pub d_beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormLayer {
    kind: NormKind,
    eps: f64,
    group: Option<GroupSpec>,
    pub state: LayerState,
}

impl NormLayer {
    pub fn new(kind: NormKind, d: usize) -> Result<Self, NormError> {
        NormLayer::with_eps(kind, d, DEFAULT_EPS)
    }

    pub fn with_eps(kind: NormKind, d: usize, eps: f64) -> Result<Self, NormError> {
        if d == 0 {
            return Err(NormError::InvalidArgument("layer width must be positive".into()));
        }
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(NormError::InvalidArgument(format!("eps must be > 0, got {eps}")));
        }
        let group = match kind {
            NormKind::Gn { groups } | NormKind::Gw { groups, .. } => Some(GroupSpec::new(d, groups)?),
            NormKind::Bw { group_channels: Some(c), .. } => Some(GroupSpec::with_group_channels(d, c)?),
            _ => None,
        };
        let state = match kind {
            NormKind::Bn => LayerState::batch_norm(d),
            NormKind::Bw { stats, .. } => LayerState::batch_whitening(d, stats),
            _ => LayerState::stateless(d),
        };
        let layer = NormLayer { kind, eps, group, state };
        if let Some(cfg) = layer.whitening_config() {
            cfg.validate()?;
            if let (NormKind::Gw { .. }, Some(spec)) = (kind, &layer.group) {
                check_config(spec, &cfg, log::Level::Warn)?;
            }
        }
        Ok(layer)
    }

    pub fn kind(&self) -> NormKind {
        self.kind
    }

    pub fn channels(&self) -> usize {
        self.state.channels()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.state.mode = mode;
    }

    pub fn whitening_config(&self) -> Option<WhiteningConfig> {
        match self.kind {
            NormKind::Bw { method, iterations, .. } | NormKind::Gw { method, iterations, .. } => {
                Some(WhiteningConfig { method, eps: self.eps, iterations, eig_tie_tol: DEFAULT_EIG_TIE_TOL })
            }
            _ => None,
        }
    }

    fn check_input(&self, x: &Mat) -> Result<(), NormError> {
        if x.rows() != self.channels() {
            return Err(NormError::ShapeMismatch(format!(
                "layer has {} channels, input has {} rows",
                self.channels(),
                x.rows()
            )));
        }
        Ok(())
    }

    fn normalize_train(&self, x: &Mat) -> Result<(Mat, NormCache), NormError> {
        Ok(match self.kind {
            NormKind::None => (x.clone(), NormCache::Identity),
            NormKind::Bn => {
                let (y, c) = standardize_train(x, StandardizeAxis::PerRowOverCols, self.eps)?;
                (y, NormCache::Standardize(c))
            }
            NormKind::Ln => {
                let (y, c) = standardize_train(x, StandardizeAxis::PerColOverRows, self.eps)?;
                (y, NormCache::Standardize(c))
            }
            NormKind::Gn { .. } => {
                let (y, c) = group_norm_train(x, self.group.as_ref().expect("group spec"), self.eps)?;
                (y, NormCache::Group(c))
            }
            NormKind::Bw { group_channels, .. } => {
                let cfg = self.whitening_config().expect("whitening layer");
                let (y, c) = bw_forward_train(x, &cfg, group_channels)?;
                (y, NormCache::Bw(c))
            }
            NormKind::Gw { .. } => {
                let cfg = self.whitening_config().expect("whitening layer");
                let (y, c) = gw_forward_batch(x, self.group.as_ref().expect("group spec"), &cfg)?;
                (y, NormCache::Gw(c))
            }
        })
    }

    /// Training-mode forward: batch statistics, running-statistics update,
    /// then the affine map.
    pub fn forward_train(&mut self, x: &Mat) -> Result<(Mat, ForwardCache), NormError> {
        self.check_input(x)?;
        let (xhat, norm) = self.normalize_train(x)?;
        match &norm {
            NormCache::Standardize(c) if self.kind == NormKind::Bn => {
                self.state.update(&c.mean, &RunningWhitener::InvStd(c.inv_std.clone()))?;
            }
            NormCache::Bw(c) => {
                let stat = match self.state.running_whitener {
                    RunningWhitener::Covariance(_) => RunningWhitener::Covariance(c.covariance()),
                    _ => RunningWhitener::Whitener(c.whitener()),
                };
                self.state.update(&c.batch_mean(), &stat)?;
            }
            _ => {}
        }
        let (y, affine) = self.apply_affine(xhat)?;
        Ok((y, ForwardCache { kind: self.kind, shape: x.shape(), norm, affine }))
    }

    /// Eval-mode forward: frozen running statistics for BN/BW; LN, GN and GW
    /// are per-sample and identical in both modes.
    pub fn forward_eval(&self, x: &Mat) -> Result<Mat, NormError> {
        self.check_input(x)?;
        let xhat = match self.kind {
            NormKind::Bn => bn_eval(x, &self.state)?,
            NormKind::Bw { group_channels, .. } => {
                bw_eval(x, &self.state, &self.whitening_config().expect("whitening layer"), group_channels)?
            }
            _ => self.normalize_train(x)?.0,
        };
        Ok(self.apply_affine(xhat)?.0)
    }

    /// Dispatches on the state's mode; the cache is `None` in eval mode.
    pub fn forward(&mut self, x: &Mat) -> Result<(Mat, Option<ForwardCache>), NormError> {
        match self.state.mode {
            Mode::Train => self.forward_train(x).map(|(y, c)| (y, Some(c))),
            Mode::Eval => self.forward_eval(x).map(|y| (y, None)),
        }
    }

    fn apply_affine(&self, xhat: Mat) -> Result<(Mat, Option<AffineCache>), NormError> {
        if self.kind == NormKind::None {
            return Ok((xhat, None));
        }
        let (y, c) = affine_forward(&xhat, &self.state.gamma, &self.state.beta)?;
        Ok((y, Some(c)))
    }

    pub fn backward(&self, d_y: &Mat, cache: ForwardCache) -> Result<LayerGrads, NormError> {
        if cache.kind != self.kind || d_y.shape() != cache.shape {
            return Err(NormError::CacheMismatch(format!(
                "cache from {} {:?}, backward called on {} with gradient {:?}",
                cache.kind,
                cache.shape,
                self.kind,
                d_y.shape()
            )));
        }
        let (d_xhat, d_gamma, d_beta) = match &cache.affine {
            Some(a) => affine_backward(d_y, a)?,
            None => (d_y.clone(), Vec::new(), Vec::new()),
        };
        let dx = match &cache.norm {
            NormCache::Identity => d_xhat,
            NormCache::Standardize(c) => standardize_backward(&d_xhat, c)?,
            NormCache::Group(c) => group_norm_backward(&d_xhat, c)?,
            NormCache::Bw(c) => bw_backward(&d_xhat, c)?,
            NormCache::Gw(c) => gw_backward_batch(&d_xhat, c)?,
        };
        Ok(LayerGrads { dx, d_gamma, d_beta })
    }
}
