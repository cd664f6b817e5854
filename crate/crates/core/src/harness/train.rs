use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{LossKind, RunConfig};
use super::data::{load_dataset, Dataset};
use super::early_stop::{patience_epochs, EarlyStopping};
use crate::error::{Error, Result};
use crate::metrics::{self, ActivationPattern, ProbeSet, TrajectorySeries};
use crate::nn::{Batch, Mode, Model, Targets};
use crate::optim::Optimizer;
use crate::rng::{self, Stream};
use crate::tensor::Tensor;
use crate::Model64;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the train-mode predictions made while fitting the epoch.
    pub train_score: f64,
    pub val_score: f64,
    /// 1-based index of the epoch's final batch.
    pub last_batch: usize,
}

/// Outcome of one run. Contains no wall-clock data, so two runs of the same
/// config serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub best_val_score: f64,
    pub best_epoch: usize,
    /// Last epoch that ran.
    pub early_stop_epoch: usize,
    pub early_stopped: bool,
    pub patience: usize,
    pub epochs_run: usize,
    pub batches: usize,
    pub batches_per_epoch: usize,
    pub final_train_loss: f64,
    pub auc_w: Option<f64>,
    pub auc_p: Option<f64>,
    pub rho: Option<f64>,
    /// `ok`, `degenerate: no activation change`, or `metrics disabled`.
    pub rho_status: String,
    pub sma_window: usize,
    pub probe_size: usize,
    pub param_count: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub split: String,
    pub unknown_categories: usize,
    pub config: RunConfig,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    /// `None` when metric capture is disabled.
    pub dw: Option<TrajectorySeries<f64>>,
    pub da: Option<TrajectorySeries<f64>>,
    pub epochs: Vec<EpochRecord>,
    /// Training loss of every batch, in order.
    pub losses: Vec<f64>,
    pub model: Model64,
    pub wall_clock_secs: f64,
}

/// State recorded up to the point a run failed.
#[derive(Debug, Clone)]
pub struct PartialRun {
    pub config: RunConfig,
    pub raw_dw: Vec<f64>,
    pub raw_da: Vec<f64>,
    pub sma_window: usize,
    pub epochs: Vec<EpochRecord>,
    pub losses: Vec<f64>,
}

#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: Option<PartialRun>,
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        Self { error, partial: None }
    }
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn gather(ds: &Dataset, idx: &[usize]) -> Result<(Tensor<f64>, Vec<usize>)> {
    let d = ds.features();
    let mut x = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        x.extend_from_slice(ds.inputs.row(i));
    }
    Ok((Tensor::new(vec![idx.len(), d], x)?, idx.iter().map(|&i| ds.labels[i]).collect()))
}

fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor<f64>> {
    let mut t = vec![0.0; labels.len() * classes];
    for (r, &l) in labels.iter().enumerate() {
        t[r * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], t)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn correct(output: &Tensor<f64>, labels: &[usize]) -> usize {
    labels.iter().enumerate().filter(|&(r, &l)| argmax(output.row(r)) == l).count()
}

/// Eval-mode accuracy on `idx`.
pub(crate) fn accuracy(model: &Model64, ds: &Dataset, idx: &[usize]) -> Result<f64> {
    let mut hits = 0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, y) = gather(ds, chunk)?;
        hits += correct(&model.predict(&x)?, &y);
    }
    Ok(hits as f64 / idx.len() as f64)
}

/// Loads the configured dataset and trains on it.
pub fn run_training(cfg: &RunConfig) -> Result<RunOutcome, RunFailure> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    run_training_on(cfg, &ds)
}

struct Recorder {
    probe: ProbeSet<f64>,
    pattern: ActivationPattern,
    raw_dw: Vec<f64>,
    raw_da: Vec<f64>,
}

/// Trains `cfg`'s model on an already loaded dataset.
///
/// Per batch: forward/backward in train mode, fold batch-norm statistics,
/// optimizer step, then (with metrics on) `Δw` from the flat parameters
/// before and after the step and `Δa` from eval-mode probe patterns before
/// and after it. Probe passes draw no randomness, so metric capture never
/// changes the training trajectory.
pub fn run_training_on(cfg: &RunConfig, ds: &Dataset) -> Result<RunOutcome, RunFailure> {
    let started = Instant::now();
    cfg.validate()?;
    let network = cfg.build_network(ds.features(), ds.classes)?;
    if cfg.metrics && network.relu_layers().is_empty() {
        return Err(Error::Config("activation metrics need at least one ReLU layer".into()).into());
    }
    let mut model = Model::<f64>::init(network, &mut rng::stream(cfg.seed, Stream::Init));
    let mut optimizer = Optimizer::new(cfg.optimizer_config(), &model.params)?;
    let mut shuffle_rng = rng::stream(cfg.seed, Stream::Shuffle);
    let mut dropout_rng = rng::stream(cfg.seed, Stream::Dropout);

    let batches_per_epoch = ds.train.len().div_ceil(cfg.batch_size);
    let sma_window = metrics::sma_window(batches_per_epoch, cfg.sma_fraction);
    let probe_size = metrics::probe_size(cfg.batch_size, cfg.probe_fraction).min(ds.val.len());
    let patience = patience_epochs(cfg.epochs, cfg.patience_fraction);
    let loss_kind = cfg.loss.into();

    let mut recorder = if cfg.metrics {
        let mut pool = ds.val.clone();
        rng::shuffle(&mut rng::stream(cfg.seed, Stream::Probe), &mut pool);
        let (x, _) = gather(ds, &pool[..probe_size])?;
        let probe = ProbeSet::new(x)?;
        let pattern = metrics::capture_pattern(&model, &probe)?;
        Some(Recorder { probe, pattern, raw_dw: Vec::new(), raw_da: Vec::new() })
    } else {
        None
    };

    let mut stopper = EarlyStopping::new(patience, cfg.min_improvement);
    let mut epochs = Vec::new();
    let mut losses = Vec::new();
    let mut order = ds.train.clone();
    let mut batch_index = 0;
    let mut early_stopped = false;

    let fail = |error: Error, rec: &Option<Recorder>, epochs: &[EpochRecord], losses: &[f64]| RunFailure {
        error,
        partial: Some(PartialRun {
            config: cfg.clone(),
            raw_dw: rec.as_ref().map(|r| r.raw_dw.clone()).unwrap_or_default(),
            raw_da: rec.as_ref().map(|r| r.raw_da.clone()).unwrap_or_default(),
            sma_window,
            epochs: epochs.to_vec(),
            losses: losses.to_vec(),
        }),
    };

    for epoch in 1..=cfg.epochs {
        rng::shuffle(&mut shuffle_rng, &mut order);
        let mut epoch_loss = 0.0;
        let mut hits = 0;
        for chunk in order.chunks(cfg.batch_size) {
            batch_index += 1;
            let (x, y) = gather(ds, chunk)?;
            let values;
            let targets = match cfg.loss {
                LossKind::CrossEntropy => Targets::Classes(&y),
                LossKind::Mse => {
                    values = one_hot(&y, ds.classes)?;
                    Targets::Values(&values)
                }
            };
            let batch = Batch { index: batch_index, inputs: &x, targets };
            let out = match model.backward(&batch, loss_kind, Mode::Train, Some(&mut dropout_rng)) {
                Ok(o) => o,
                Err(e @ Error::NonFiniteLoss { .. }) => {
                    return Err(fail(Error::Divergence(e.to_string()), &recorder, &epochs, &losses));
                }
                Err(e) => return Err(e.into()),
            };
            losses.push(out.loss);
            epoch_loss += out.loss;
            hits += correct(&out.trace.output, &y);
            model.absorb_batch_stats(&out.trace);
            let before = recorder.as_ref().map(|_| model.params.flat().to_vec());
            match optimizer.step(&mut model.params, &out.gradient) {
                Ok(()) => {}
                Err(e @ Error::NonFiniteGradient { .. }) => {
                    let msg = format!("batch {batch_index}: {e}");
                    return Err(fail(Error::Divergence(msg), &recorder, &epochs, &losses));
                }
                Err(e) => return Err(e.into()),
            }
            if let (Some(rec), Some(before)) = (recorder.as_mut(), before) {
                rec.raw_dw.push(metrics::delta_w(&before, model.params.flat())?);
                let pattern = metrics::capture_pattern(&model, &rec.probe)?;
                rec.raw_da.push(metrics::delta_a(&rec.pattern, &pattern)?);
                rec.pattern = pattern;
            }
        }
        let val_score = accuracy(&model, ds, &ds.val)?;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / order.chunks(cfg.batch_size).len() as f64,
            train_score: hits as f64 / order.len() as f64,
            val_score,
            last_batch: batch_index,
        };
        log::info!(
            "epoch {epoch}/{}: train loss {:.5}, train acc {:.4}, val acc {val_score:.4}",
            cfg.epochs,
            record.train_loss,
            record.train_score
        );
        epochs.push(record);
        if stopper.observe(epoch, val_score) {
            early_stopped = epoch < cfg.epochs;
            if early_stopped {
                log::info!("early stop after epoch {epoch} (best {} at epoch {})", stopper.best().unwrap_or(0.0), stopper.best_epoch());
            }
            break;
        }
    }

    let (dw, da, auc_w, auc_p, rho, rho_status) = match recorder {
        Some(rec) => {
            let dw = TrajectorySeries::build(rec.raw_dw, sma_window)?;
            let da = TrajectorySeries::build(rec.raw_da, sma_window)?;
            let auc_w = dw.auc()?;
            let auc_p = da.auc()?;
            let (rho, status) = match metrics::speedup_ratio(auc_w, auc_p) {
                Ok(r) => (Some(r), "ok".to_owned()),
                Err(e @ Error::NoActivationChange) => (None, e.to_string()),
                Err(e) => return Err(e.into()),
            };
            (Some(dw), Some(da), Some(auc_w), Some(auc_p), rho, status)
        }
        None => (None, None, None, None, None, "metrics disabled".to_owned()),
    };

    let last = epochs.last().expect("at least one epoch");
    let summary = RunSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        best_val_score: stopper.best().unwrap_or(0.0),
        best_epoch: stopper.best_epoch(),
        early_stop_epoch: last.epoch,
        early_stopped,
        patience,
        epochs_run: epochs.len(),
        batches: batch_index,
        batches_per_epoch,
        final_train_loss: last.train_loss,
        auc_w,
        auc_p,
        rho,
        rho_status,
        sma_window,
        probe_size: if cfg.metrics { probe_size } else { 0 },
        param_count: model.params.flat_len(),
        train_samples: ds.train.len(),
        val_samples: ds.val.len(),
        split: ds.split.clone(),
        unknown_categories: ds.unknown_categories,
        config: cfg.clone(),
    };
    Ok(RunOutcome { summary, dw, da, epochs, losses, model, wall_clock_secs: started.elapsed().as_secs_f64() })
}
