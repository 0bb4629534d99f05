//! Experiment description, read from TOML.
//!
//! ```toml
//! [model]
//! hidden = [256, 256, 256, 256]   # hidden widths, each Linear → Norm → ReLU; [] is a linear classifier
//! eps = 1e-5                      # optional, normalization eps
//!
//! [data]
//! source = "idx"                  # "idx" or "blobs"
//! images = "mnist/images-idx3-ubyte.gz"   # relative to the config file
//! labels = "mnist/labels-idx1-ubyte.gz"
//! limit = 10000                   # optional, first N samples
//! val_fraction = 0.0              # optional, tail fraction held out for EVAL-mode validation
//! random_labels = false           # optional, replace labels with uniform draws
//! label_seed = 0                  # optional, seed for the random labels
//! # source = "blobs" takes n, dim, classes, separation (3.0) and seed (0)
//!
//! [train]
//! epochs = 10
//! momentum = 0.0                  # optional, SGD momentum
//!
//! [grid]
//! norms = [{ kind = "bn" }, { kind = "gw", groups = 16, method = "zca" }]
//! groups = [16, 64]               # optional, replaces the group number of gn/gw entries
//! batch_sizes = [16]
//! learning_rates = [0.1, 0.5]
//! seeds = [0, 1, 2]
//! ```
//!
//! Norm entries take the fields of [`NormKind`]: `kind` is one of `none`,
//! `bn`, `ln`, `gn`, `bw`, `gw`; whitening entries accept `method`
//! (`zca`/`itn`) and `iterations`; `bw` also accepts `group_channels` and
//! `stats` (`whitener`/`covariance`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::{gaussian_blobs, load_idx, make_random_labels, Dataset};
use super::HarnessError;
use crate::norm::NormKind;
use crate::whitening::DEFAULT_EPS;

fn default_eps() -> f64 {
    DEFAULT_EPS
}

fn default_separation() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { hidden: vec![256; 4], eps: DEFAULT_EPS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
    Blobs {
        n: usize,
        dim: usize,
        classes: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    #[serde(flatten)]
    pub source: DataSource,
    #[serde(default)]
    pub val_fraction: f64,
    #[serde(default)]
    pub random_labels: bool,
    #[serde(default)]
    pub label_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: usize,
    #[serde(default)]
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub norms: Vec<NormKind>,
    #[serde(default)]
    pub groups: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub model: ModelSpec,
    pub data: DataSpec,
    pub train: TrainSpec,
    pub grid: GridSpec,
}

/// One cell of the grid for one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub norm: NormKind,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

fn with_groups(kind: NormKind, g: usize) -> Option<NormKind> {
    match kind {
        NormKind::Gn { .. } => Some(NormKind::Gn { groups: g }),
        NormKind::Gw { method, iterations, .. } => Some(NormKind::Gw { groups: g, method, iterations }),
        _ => None,
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Parses the file and resolves relative data paths against its directory.
    pub fn from_toml_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut spec = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DataSource::Idx { images, labels, .. } = &mut spec.data.source {
            for p in [images, labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: &str| Err(HarnessError::Config(msg.into()));
        if self.model.hidden.contains(&0) {
            return bad("model.hidden widths must be positive");
        }
        if !(self.model.eps > 0.0) {
            return bad("model.eps must be > 0");
        }
        if self.train.epochs == 0 {
            return bad("train.epochs must be >= 1");
        }
        if !(0.0..1.0).contains(&self.train.momentum) {
            return bad("train.momentum must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            return bad("data.val_fraction must lie in [0, 1)");
        }
        let g = &self.grid;
        if g.norms.is_empty() || g.batch_sizes.is_empty() || g.learning_rates.is_empty() {
            return bad("grid.norms, grid.batch_sizes and grid.learning_rates must be non-empty");
        }
        if g.seeds.is_empty() {
            return bad("grid.seeds needs at least one seed");
        }
        if g.batch_sizes.contains(&0) || g.groups.contains(&0) {
            return bad("batch sizes and group numbers must be >= 1");
        }
        if g.learning_rates.iter().any(|lr| !lr.is_finite() || *lr < 0.0) {
            return bad("learning rates must be finite and >= 0");
        }
        Ok(())
    }

    /// Norm variants after applying the `groups` override.
    pub fn norms(&self) -> Vec<NormKind> {
        let mut out = Vec::new();
        for &n in &self.grid.norms {
            match with_groups(n, 0) {
                Some(_) if !self.grid.groups.is_empty() => {
                    out.extend(self.grid.groups.iter().filter_map(|&g| with_groups(n, g)))
                }
                _ => out.push(n),
            }
        }
        let mut seen = Vec::with_capacity(out.len());
        out.retain(|n| {
            let fresh = !seen.contains(n);
            seen.push(*n);
            fresh
        });
        out
    }

    /// Every (norm, batch size, learning rate, seed) combination in grid order.
    pub fn cells(&self) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for norm in self.norms() {
            for &batch_size in &self.grid.batch_sizes {
                for &lr in &self.grid.learning_rates {
                    for &seed in &self.grid.seeds {
                        out.push(RunConfig { norm, batch_size, lr, seed });
                    }
                }
            }
        }
        out
    }

    /// The training set and the optional held-out validation set.
    pub fn load_data(&self) -> Result<(Dataset, Option<Dataset>), HarnessError> {
        let mut ds = match &self.data.source {
            DataSource::Idx { images, labels, limit } => load_idx(images, labels, *limit)?,
            &DataSource::Blobs { n, dim, classes, separation, seed } => gaussian_blobs(n, dim, classes, separation, seed)?,
        };
        if self.data.random_labels {
            ds = make_random_labels(&ds, ds.num_classes, self.data.label_seed)?;
        }
        Ok(ds.split_tail(self.data.val_fraction))
    }
}
