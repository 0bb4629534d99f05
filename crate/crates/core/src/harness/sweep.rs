//! Parallel grid runs, long-format result rows and the best-over-learning-rate
//! reduction.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentSpec, RunConfig};
use super::train::{train_run, RunStatus, TrainCurve};
use super::HarnessError;
use crate::constraints::{constraint_count, feasibility_bound, NormMethod};
use crate::norm::NormKind;

/// One line of the long-format table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: String,
    pub m: usize,
    pub g: usize,
    pub lr: f64,
    pub seed: u64,
    pub epoch: usize,
    /// `train` or `val`.
    pub split: String,
    /// Empty for the marker row of a failed or diverged run.
    pub accuracy: Option<f64>,
    /// `ok`, `diverged: …` or `failed: …`.
    pub status: String,
}

fn row_key(r: &SweepRow) -> impl Ord + '_ {
    (&r.method, r.g, r.m, OrdF64(r.lr), r.seed, r.epoch, &r.split)
}

#[derive(PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Warnings for cells whose batch size or group number admits no free
/// output (`ζ > χ`) or lies beyond the stable whitening range.
pub fn feasibility_warnings(cfg: &RunConfig, width: usize) -> Vec<String> {
    let m = cfg.batch_size;
    let (method, d, g) = match cfg.norm {
        NormKind::None => return Vec::new(),
        NormKind::Bn => (NormMethod::Bn, width, 1),
        NormKind::Ln => (NormMethod::Gn, width, 1),
        NormKind::Gn { groups } => (NormMethod::Gn, width, groups),
        NormKind::Bw { group_channels, .. } => (NormMethod::Bw, group_channels.unwrap_or(width), 1),
        NormKind::Gw { groups, .. } => (NormMethod::Gw, width, groups),
    };
    let mut out = Vec::new();
    let bound = feasibility_bound(method, d);
    match constraint_count(method, d, m, g, None) {
        Ok(r) if !r.feasible => {
            out.push(format!("{} m={m} g={g}: zeta={} exceeds chi={}; {bound}", cfg.norm, r.zeta_batch, r.chi))
        }
        Ok(_) => {
            let value = if method.uses_groups() { g } else { m };
            if let Some(s) = bound.stability_limit {
                let stable = if method.uses_groups() { value <= s } else { value >= s };
                if !stable {
                    out.push(format!("{} m={m} g={g}: outside the stable whitening range; {bound}", cfg.norm));
                }
            }
        }
        Err(e) => out.push(format!("{} m={m} g={g}: {e}", cfg.norm)),
    }
    out
}

/// Runs every cell × seed on a pool of `jobs` threads (0 picks the rayon
/// default). Curves come back in grid order regardless of scheduling.
pub fn sweep(spec: &ExperimentSpec, jobs: usize) -> Result<Vec<TrainCurve>, HarnessError> {
    spec.validate()?;
    let (train_set, val_set) = spec.load_data()?;
    let cells = spec.cells();
    for cfg in &cells {
        for w in spec.model.hidden.iter().flat_map(|&width| feasibility_warnings(cfg, width)) {
            log::warn!("{w}");
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        cells
            .par_iter()
            .map(|cfg| {
                let curve = train_run(&spec.model, &spec.train, &train_set, val_set.as_ref(), cfg);
                log::info!(
                    "{} m={} g={} lr={} seed={}: {:?}",
                    cfg.norm,
                    cfg.batch_size,
                    cfg.norm.group_count(),
                    cfg.lr,
                    cfg.seed,
                    curve.status
                );
                curve
            })
            .collect()
    }))
}

/// Flattens curves into sorted long-format rows. Each completed epoch gives
/// a `train` row and, with a validation set, a `val` row; a failed or
/// diverged run adds one marker row with an empty accuracy at the epoch it
/// stopped in.
pub fn curve_rows(curves: &[TrainCurve]) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for c in curves {
        let base = |epoch: usize, split: &str, accuracy: Option<f64>, status: String| SweepRow {
            method: c.config.norm.to_string(),
            m: c.config.batch_size,
            g: c.config.norm.group_count(),
            lr: c.config.lr,
            seed: c.config.seed,
            epoch,
            split: split.into(),
            accuracy,
            status,
        };
        for e in &c.epochs {
            rows.push(base(e.epoch, "train", Some(e.train_accuracy), "ok".into()));
            if let Some(v) = e.val_accuracy {
                rows.push(base(e.epoch, "val", Some(v), "ok".into()));
            }
        }
        let marker = match &c.status {
            RunStatus::Ok => None,
            RunStatus::Diverged(msg) => Some(format!("diverged: {msg}")),
            RunStatus::Failed(msg) => Some(format!("failed: {msg}")),
        };
        if let Some(status) = marker {
            rows.push(base(c.epochs.len() + 1, "train", None, status));
        }
    }
    rows.sort_by(|a, b| row_key(a).cmp(&row_key(b)));
    rows
}

pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Best accuracy of one (method, m, g, seed, split) over all epochs and
/// learning rates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestRow {
    pub method: String,
    pub m: usize,
    pub g: usize,
    pub seed: u64,
    pub split: String,
    pub lr: f64,
    pub accuracy: f64,
}

/// Reduces sweep rows to the best learning rate per configuration. Rows
/// without an accuracy are skipped; ties keep the smaller learning rate.
pub fn best_over_learning_rates(rows: &[SweepRow]) -> Vec<BestRow> {
    let mut best: BTreeMap<(String, usize, usize, u64, String), (f64, f64)> = BTreeMap::new();
    for r in rows {
        let Some(acc) = r.accuracy else { continue };
        let key = (r.method.clone(), r.g, r.m, r.seed, r.split.clone());
        best.entry(key)
            .and_modify(|(lr, a)| {
                if acc > *a || (acc == *a && r.lr < *lr) {
                    *lr = r.lr;
                    *a = acc;
                }
            })
            .or_insert((r.lr, acc));
    }
    best.into_iter()
        .map(|((method, g, m, seed, split), (lr, accuracy))| BestRow { method, m, g, seed, split, lr, accuracy })
        .collect()
}
