//! Minibatch SGD over one grid cell.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{ExperimentSpec, ModelSpec, RunConfig, TrainSpec};
use super::data::Dataset;
use super::mlp::{argmax_columns, Mlp};
use super::HarnessError;
use crate::norm::Mode;

/// Columns per EVAL-mode forward when scoring a validation set.
const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Running accuracy over the epoch's TRAIN-mode minibatches.
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    /// Non-finite loss or gradient; the curve stops at the last full epoch.
    Diverged(String),
    /// The configuration could not run at all (e.g. indivisible groups).
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainCurve {
    pub config: RunConfig,
    pub hidden: Vec<usize>,
    pub epochs: Vec<EpochStats>,
    pub final_val_accuracy: Option<f64>,
    pub status: RunStatus,
}

impl TrainCurve {
    pub fn final_train_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_accuracy)
    }

    pub fn best_train_accuracy(&self) -> Option<f64> {
        self.epochs.iter().map(|e| e.train_accuracy).reduce(f64::max)
    }
}

/// Fraction of correctly classified samples, evaluated in EVAL mode.
pub fn evaluate(net: &Mlp, data: &Dataset) -> Result<f64, HarnessError> {
    let mut correct = 0;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(data.len())).collect();
        let (x, y) = data.gather(&idx);
        let pred = argmax_columns(&net.forward_eval(&x)?);
        correct += pred.iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}

fn run_epochs(
    net: &mut Mlp,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &RunConfig,
    opts: &TrainSpec,
    epochs: &mut Vec<EpochStats>,
) -> Result<(), HarnessError> {
    let m = cfg.batch_size;
    let batches = train_set.len() / m;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        net.set_mode(Mode::Train);
        let (mut loss, mut correct) = (0.0, 0);
        for b in 0..batches {
            let (x, y) = train_set.gather(&order[b * m..(b + 1) * m]);
            let s = net.train_step(&x, &y, cfg.lr, opts.momentum)?;
            loss += s.loss;
            correct += s.correct;
        }
        let val_accuracy = match val_set {
            Some(v) => {
                net.set_mode(Mode::Eval);
                Some(evaluate(net, v)?)
            }
            None => None,
        };
        epochs.push(EpochStats {
            epoch,
            train_loss: loss / batches as f64,
            train_accuracy: correct as f64 / (batches * m) as f64,
            val_accuracy,
        });
    }
    Ok(())
}

/// Trains one cell. Shuffling uses a stream derived from the seed, the
/// incomplete last minibatch of each epoch is dropped, and a divergence
/// truncates the curve instead of failing.
pub fn train_run(
    model: &ModelSpec,
    opts: &TrainSpec,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &RunConfig,
) -> TrainCurve {
    let mut curve = TrainCurve {
        config: *cfg,
        hidden: model.hidden.clone(),
        epochs: Vec::new(),
        final_val_accuracy: None,
        status: RunStatus::Ok,
    };
    if cfg.batch_size == 0 || train_set.len() < cfg.batch_size {
        curve.status = RunStatus::Failed(format!("batch size {} with {} samples", cfg.batch_size, train_set.len()));
        return curve;
    }
    let mut net = match Mlp::new(train_set.dim(), &model.hidden, train_set.num_classes, cfg.norm, model.eps, cfg.seed) {
        Ok(n) => n,
        Err(e) => {
            curve.status = RunStatus::Failed(e.to_string());
            return curve;
        }
    };
    match run_epochs(&mut net, train_set, val_set, cfg, opts, &mut curve.epochs) {
        Ok(()) => {}
        Err(HarnessError::Diverged(msg)) => curve.status = RunStatus::Diverged(msg),
        Err(HarnessError::Norm(e)) => curve.status = RunStatus::Diverged(e.to_string()),
        Err(e) => curve.status = RunStatus::Failed(e.to_string()),
    }
    curve.final_val_accuracy = curve.epochs.last().and_then(|e| e.val_accuracy);
    curve
}

/// Runs every cell of the grid sequentially, in grid order.
pub fn train(spec: &ExperimentSpec) -> Result<Vec<TrainCurve>, HarnessError> {
    spec.validate()?;
    let (train_set, val_set) = spec.load_data()?;
    Ok(spec
        .cells()
        .iter()
        .map(|cfg| train_run(&spec.model, &spec.train, &train_set, val_set.as_ref(), cfg))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::gaussian_blobs;
    use crate::linalg::Mat;
    use crate::norm::NormKind;

    fn opts(epochs: usize) -> TrainSpec {
        TrainSpec { epochs, momentum: 0.0 }
    }

    #[test]
    fn linear_classifier_separates_two_blobs() {
        let blobs = gaussian_blobs(200, 2, 2, 1.0, 1).unwrap();
        let labels: Vec<usize> = (0..200).map(|k| k % 2).collect();
        let features = Mat::from_fn(2, 200, |i, k| {
            let side = if labels[k] == 0 { -1.0 } else { 1.0 };
            if i == 0 { side * (1.0 + blobs.features[(0, k)].abs()) } else { blobs.features[(1, k)] }
        });
        let data = Dataset::new(features, labels, 2).unwrap();
        let model = ModelSpec { hidden: vec![], eps: 1e-5 };
        let cfg = RunConfig { norm: NormKind::None, batch_size: 10, lr: 0.1, seed: 0 };
        let curve = train_run(&model, &opts(20), &data, None, &cfg);
        assert_eq!(curve.status, RunStatus::Ok);
        assert_eq!(curve.final_train_accuracy(), Some(1.0));
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let data = gaussian_blobs(120, 6, 3, 2.0, 2).unwrap();
        let (tr, va) = data.split_tail(0.25);
        let model = ModelSpec { hidden: vec![8, 8], eps: 1e-5 };
        let cfg = RunConfig { norm: NormKind::Bn, batch_size: 8, lr: 0.05, seed: 3 };
        let a = train_run(&model, &opts(3), &tr, va.as_ref(), &cfg);
        let b = train_run(&model, &opts(3), &tr, va.as_ref(), &cfg);
        assert_eq!(a.status, RunStatus::Ok);
        assert!(a.final_val_accuracy.is_some());
        let bits = |c: &TrainCurve| {
            c.epochs.iter().flat_map(|e| [e.train_loss.to_bits(), e.train_accuracy.to_bits()]).collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn divergence_truncates_the_curve() {
        let data = gaussian_blobs(64, 4, 2, 1.0, 4).unwrap();
        let model = ModelSpec { hidden: vec![16, 16], eps: 1e-5 };
        let cfg = RunConfig { norm: NormKind::None, batch_size: 8, lr: 1e200, seed: 0 };
        let curve = train_run(&model, &opts(50), &data, None, &cfg);
        assert!(matches!(curve.status, RunStatus::Diverged(_)), "{:?}", curve.status);
        assert!(curve.epochs.len() < 50);
    }

    #[test]
    fn bad_group_count_is_a_failed_run() {
        let data = gaussian_blobs(32, 4, 2, 1.0, 5).unwrap();
        let model = ModelSpec { hidden: vec![6], eps: 1e-5 };
        let cfg = RunConfig { norm: NormKind::Gn { groups: 4 }, batch_size: 8, lr: 0.1, seed: 0 };
        let curve = train_run(&model, &opts(1), &data, None, &cfg);
        assert!(matches!(curve.status, RunStatus::Failed(_)));
        assert!(curve.epochs.is_empty());
    }
}
