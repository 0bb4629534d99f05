//! Per-layer learnable parameters and running (population) statistics.
//!
//! The running update is the exponential average
//! `s ← (1 − λ) s + λ s_batch`, applied to the mean and to the
//! inverse standard deviation (BN), the whitening matrix (BW) or, in
//! [`BwStatsMode::Covariance`], to the covariance that is whitened at eval.

use serde::{Deserialize, Serialize};

use super::{NormError, DEFAULT_MOMENTUM};
use crate::linalg::Mat;
use crate::whitening::{whiten_forward, WhiteningConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BwStatsMode {
    /// Average the batch whitening matrices.
    #[default]
    Whitener,
    /// Average the batch covariances and whiten the average at eval.
    Covariance,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunningWhitener {
    /// Stateless layers (LN, GN, GW) need no population statistics.
    None,
    InvStd(Vec<f64>),
    Whitener(Mat),
    Covariance(Mat),
}

impl RunningWhitener {
    fn kind(&self) -> &'static str {
        match self {
            RunningWhitener::None => "none",
            RunningWhitener::InvStd(_) => "inv_std",
            RunningWhitener::Whitener(_) => "whitener",
            RunningWhitener::Covariance(_) => "covariance",
        }
    }

    fn len(&self) -> usize {
        match self {
            RunningWhitener::None => 0,
            RunningWhitener::InvStd(v) => v.len(),
            RunningWhitener::Whitener(m) | RunningWhitener::Covariance(m) => m.as_slice().len(),
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            RunningWhitener::None => &[],
            RunningWhitener::InvStd(v) => v,
            RunningWhitener::Whitener(m) | RunningWhitener::Covariance(m) => m.as_slice(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_whitener: RunningWhitener,
    pub momentum: f64,
    pub mode: Mode,
    /// Number of running-statistics updates applied so far.
    pub updates: u64,
}

impl LayerState {
    fn with_stats(d: usize, running_whitener: RunningWhitener) -> Self {
        LayerState {
            gamma: vec![1.0; d],
            beta: vec![0.0; d],
            running_mean: vec![0.0; d],
            running_whitener,
            momentum: DEFAULT_MOMENTUM,
            mode: Mode::Train,
            updates: 0,
        }
    }

    pub fn stateless(d: usize) -> Self {
        LayerState::with_stats(d, RunningWhitener::None)
    }

    pub fn batch_norm(d: usize) -> Self {
        LayerState::with_stats(d, RunningWhitener::InvStd(vec![1.0; d]))
    }

    pub fn batch_whitening(d: usize, stats: BwStatsMode) -> Self {
        LayerState::with_stats(
            d,
            match stats {
                BwStatsMode::Whitener => RunningWhitener::Whitener(Mat::identity(d)),
                BwStatsMode::Covariance => RunningWhitener::Covariance(Mat::identity(d)),
            },
        )
    }

    pub fn with_momentum(mut self, momentum: f64) -> Result<Self, NormError> {
        check_momentum(momentum)?;
        self.momentum = momentum;
        Ok(self)
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn has_running_stats(&self) -> bool {
        !matches!(self.running_whitener, RunningWhitener::None)
    }

    /// In-place running update with the state's own momentum.
    pub fn update(&mut self, batch_mean: &[f64], batch_stat: &RunningWhitener) -> Result<(), NormError> {
        *self = update_running(self, batch_mean, batch_stat, self.momentum)?;
        Ok(())
    }
}

fn check_momentum(lambda: f64) -> Result<(), NormError> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(NormError::InvalidMomentum(lambda))
    }
}

fn blend(old: &[f64], new: &[f64], lambda: f64) -> Vec<f64> {
    old.iter().zip(new).map(|(o, n)| (1.0 - lambda) * o + lambda * n).collect()
}

pub fn update_running(
    state: &LayerState,
    batch_mean: &[f64],
    batch_stat: &RunningWhitener,
    lambda: f64,
) -> Result<LayerState, NormError> {
    check_momentum(lambda)?;
    if batch_mean.len() != state.running_mean.len() {
        return Err(NormError::ShapeMismatch(format!(
            "batch mean has {} entries, state holds {}",
            batch_mean.len(),
            state.running_mean.len()
        )));
    }
    if batch_stat.kind() != state.running_whitener.kind() || batch_stat.len() != state.running_whitener.len() {
        return Err(NormError::ShapeMismatch(format!(
            "batch statistic {} ({} values) does not match running {} ({} values)",
            batch_stat.kind(),
            batch_stat.len(),
            state.running_whitener.kind(),
            state.running_whitener.len()
        )));
    }
    let mixed = blend(state.running_whitener.values(), batch_stat.values(), lambda);
    let running_whitener = match &state.running_whitener {
        RunningWhitener::None => RunningWhitener::None,
        RunningWhitener::InvStd(_) => RunningWhitener::InvStd(mixed),
        RunningWhitener::Whitener(m) => RunningWhitener::Whitener(Mat::from_vec(m.rows(), m.cols(), mixed)?),
        RunningWhitener::Covariance(m) => RunningWhitener::Covariance(Mat::from_vec(m.rows(), m.cols(), mixed)?),
    };
    Ok(LayerState {
        running_mean: blend(&state.running_mean, batch_mean, lambda),
        running_whitener,
        updates: state.updates + 1,
        ..state.clone()
    })
}

fn check_eval_input(x: &Mat, state: &LayerState) -> Result<(), NormError> {
    if state.updates == 0 {
        return Err(NormError::StatsNotInitialized);
    }
    if x.rows() != state.running_mean.len() {
        return Err(NormError::ShapeMismatch(format!(
            "input has {} channels, state holds {}",
            x.rows(),
            state.running_mean.len()
        )));
    }
    Ok(())
}

/// BN at inference: `(x − μ̂) ⊙ ŝ` per channel with the frozen statistics.
pub fn bn_eval(x: &Mat, state: &LayerState) -> Result<Mat, NormError> {
    check_eval_input(x, state)?;
    let RunningWhitener::InvStd(inv_std) = &state.running_whitener else {
        return Err(NormError::InvalidArgument(format!(
            "bn_eval needs running inverse std, state holds {}",
            state.running_whitener.kind()
        )));
    };
    Ok(Mat::from_fn(x.rows(), x.cols(), |i, j| (x[(i, j)] - state.running_mean[i]) * inv_std[i]))
}

/// BW at inference: `Ŵ (X − μ̂ 1ᵀ)`. In covariance mode `Ŵ = ψ(Σ̂)` with
/// the configured kernel, block by block when `group_channels` is set;
/// otherwise the running whitener is used as is.
pub fn bw_eval(
    x: &Mat,
    state: &LayerState,
    cfg: &WhiteningConfig,
    group_channels: Option<usize>,
) -> Result<Mat, NormError> {
    check_eval_input(x, state)?;
    let w = match &state.running_whitener {
        RunningWhitener::Whitener(w) => w.clone(),
        RunningWhitener::Covariance(sigma) => {
            let d = sigma.rows();
            let block = group_channels.unwrap_or(d);
            if block == 0 || d % block != 0 {
                return Err(NormError::InvalidArgument(format!("{block} channels per group does not divide d={d}")));
            }
            let mut w = Mat::zeros(d, d);
            for k in 0..d / block {
                let sub = Mat::from_fn(block, block, |i, j| sigma[(k * block + i, k * block + j)]);
                let wk = whiten_forward(&sub, cfg)?.0;
                for i in 0..block {
                    for j in 0..block {
                        w[(k * block + i, k * block + j)] = wk[(i, j)];
                    }
                }
            }
            w
        }
        other => {
            return Err(NormError::InvalidArgument(format!(
                "bw_eval needs a running whitener or covariance, state holds {}",
                other.kind()
            )))
        }
    };
    let xc = Mat::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] - state.running_mean[i]);
    Ok(w.matmul(&xc))
}
