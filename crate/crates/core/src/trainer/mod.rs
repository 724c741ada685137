//! Model training and everything around it, from baselines to search.

mod baseline;
mod checkpoint;
mod metrics;
mod search;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baseline::{fit_baseline, BaselineKind, BaselinePredictor};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, TrainingMeta, FORMAT_VERSION, MAGIC};
pub use metrics::{mae, rmse, EvalReport, HorizonScore, STEP_MINUTES};
pub use search::{
    ablate, grid_points, grid_search, rank_results, AblationOutcome, GridOutcome, GridPoint, GridResult, GRID_SIZE,
};

use crate::folding::{Datasets, FoldError, FoldedSample, Normalizer, SampleSet};
use crate::model::{ModelConfig, ModelError, Mpstn, NormalizedAdjacency};
use crate::synthgen::derive_seed;
use crate::tensor::{clip_global_norm, lr_at_epoch, AdamConfig, OptimizerState, ParamSet, Tensor, TensorError};
use metrics::ErrorAccumulator;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error("model/data mismatch: {0}")]
    Mismatch(String),
    #[error("metric: {0}")]
    Metric(String),
    #[error("baseline coverage: {0}")]
    Uncovered(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fold(#[from] FoldError),
    #[error("training diverged in epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Parameters from the best epoch completed before the failure (the
        /// initial parameters if none completed).
        last_good: Box<Checkpoint>,
    },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient norm cap.
    pub grad_clip: f64,
    /// Stop after this many epochs without a validation improvement; 0 never stops early.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            base_lr: 0.001,
            batch_size: 8,
            seed: 2016,
            grad_clip: 5.0,
            patience: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(TrainError::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
            return Err(TrainError::Config(format!("grad_clip must be positive, got {}", self.grad_clip)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-sample L1 loss over the epoch, in normalised units.
    pub train_l1: f64,
    /// Validation MAE averaged over horizons, in persons per interval.
    pub val_mae: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// The epoch with the lowest validation MAE.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Anything that maps a sample to raw-unit `[S, 2 * horizons]` predictions.
pub trait Predictor: Sync {
    fn label(&self) -> String;
    fn predict(&self, set: &SampleSet, sample: &FoldedSample) -> Result<Tensor, TrainError>;
}

/// A trained network together with the normaliser it was trained under.
#[derive(Clone, Debug)]
pub struct ModelPredictor {
    pub model: Mpstn,
    pub normalizer: Normalizer,
    pub label: String,
}

impl ModelPredictor {
    pub fn from_checkpoint(checkpoint: &Checkpoint, adjacency: NormalizedAdjacency) -> Result<Self, TrainError> {
        Ok(Self {
            model: Mpstn::from_params(checkpoint.config.clone(), checkpoint.params.clone(), adjacency)?,
            normalizer: checkpoint.normalizer.clone(),
            label: checkpoint.config.variant.label().to_string(),
        })
    }
}

impl Predictor for ModelPredictor {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn predict(&self, _set: &SampleSet, sample: &FoldedSample) -> Result<Tensor, TrainError> {
        let mut window = sample.window.clone();
        self.normalizer.apply(&mut window);
        let mut out = self.model.predict(&window, sample.rain_flag)?;
        self.normalizer.invert(&mut out);
        Ok(out)
    }
}

/// Rejects a model whose shape does not fit the samples.
pub fn check_compatible(config: &ModelConfig, set: &SampleSet) -> Result<(), TrainError> {
    let corpus = set.corpus();
    let want = (corpus.station_count(), set.periods(), corpus.intervals_per_day(), set.horizons());
    let have = (config.stations, config.periods, config.intervals_per_day, config.horizons);
    if want != have {
        return Err(TrainError::Mismatch(format!(
            "model expects (stations, periods, intervals, horizons) = {have:?} but the data has {want:?}"
        )));
    }
    Ok(())
}

/// Scores raw-unit predictions against every sample's targets.
pub fn evaluate(predictor: &dyn Predictor, set: &SampleSet) -> Result<EvalReport, TrainError> {
    if set.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let pairs = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let sample = set.sample(i);
            let pred = predictor.predict(set, &sample)?;
            if pred.numel() != sample.targets.numel() {
                return Err(TrainError::Mismatch(format!(
                    "prediction has {} values but targets have {}",
                    pred.numel(),
                    sample.targets.numel()
                )));
            }
            Ok((pred, sample.targets))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let mut acc = ErrorAccumulator::new(set.horizons());
    for (pred, target) in &pairs {
        acc.add(pred.data(), target.data());
    }
    Ok(acc.report(&predictor.label()))
}

/// Evaluates a checkpoint on samples drawn from a corpus with matching shape.
pub fn evaluate_checkpoint(checkpoint: &Checkpoint, set: &SampleSet) -> Result<EvalReport, TrainError> {
    check_compatible(&checkpoint.config, set)?;
    let adjacency = NormalizedAdjacency::from_network(&set.corpus().network);
    evaluate(&ModelPredictor::from_checkpoint(checkpoint, adjacency)?, set)
}

fn normalized_pair(sample: &FoldedSample, normalizer: &Normalizer) -> (Tensor, Tensor) {
    let mut window = sample.window.clone();
    normalizer.apply(&mut window);
    let mut targets = sample.targets.clone();
    normalizer.apply(&mut targets);
    (window, targets)
}

/// Mini-batch L1 training with validation-based model selection.
///
/// The shuffle order of epoch `e` depends only on `(seed, e)`, so variants
/// trained with the same seed see the same sample stream.
pub fn train(datasets: &Datasets, config: &ModelConfig, train_config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_config.validate()?;
    config.validate()?;
    if datasets.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if datasets.validation.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    check_compatible(config, &datasets.train)?;
    check_compatible(config, &datasets.validation)?;

    let normalizer = Normalizer::fit(&datasets.train)?;
    let adjacency = NormalizedAdjacency::from_network(&datasets.train.corpus().network);
    let mut model = Mpstn::new(config.clone(), adjacency, derive_seed(train_config.seed, 0))?;
    let mut optimizer = OptimizerState::new(AdamConfig::default(), &model.params);
    let snapshot = |params: &ParamSet, epoch: usize, val_mae: Option<f64>| Checkpoint {
        config: config.clone(),
        normalizer: normalizer.clone(),
        params: params.clone(),
        meta: TrainingMeta { epoch, val_mae },
    };
    let mut best = snapshot(&model.params, 0, None);
    let mut best_val = f64::INFINITY;
    let mut log = Vec::with_capacity(train_config.epochs);
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..datasets.train.len()).collect();

    for epoch in 1..=train_config.epochs {
        let lr = lr_at_epoch(train_config.base_lr, epoch - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(train_config.seed, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(train_config.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let sample = datasets.train.sample(i);
                    let (window, targets) = normalized_pair(&sample, &normalizer);
                    model.loss_and_grads(&window, sample.rain_flag, &targets)
                })
                .collect::<Result<Vec<_>, ModelError>>()?;
            let mut grads = model.params.zeros_like();
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(TrainError::Diverged {
                        epoch,
                        reason: format!("training loss became {loss}"),
                        last_good: Box::new(best),
                    });
                }
                loss_sum += loss;
                grads.add_assign(g);
            }
            grads.scale(1.0 / batch.len() as f64);
            clip_global_norm(&mut grads, train_config.grad_clip);
            if let Err(e) = optimizer.step(&mut model.params, &grads, lr) {
                let reason = match e {
                    TensorError::NonFiniteGradient(name) => format!("non-finite gradient in `{name}`"),
                    other => other.to_string(),
                };
                return Err(TrainError::Diverged {
                    epoch,
                    reason,
                    last_good: Box::new(best),
                });
            }
        }
        let train_l1 = loss_sum / order.len() as f64;
        let predictor = ModelPredictor {
            model: model.clone(),
            normalizer: normalizer.clone(),
            label: config.variant.label().to_string(),
        };
        let val_mae = evaluate(&predictor, &datasets.validation)?.mean_mae();
        if !val_mae.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                reason: format!("validation MAE became {val_mae}"),
                last_good: Box::new(best),
            });
        }
        log::info!("epoch {epoch:>3}  lr {lr:.6}  train_l1 {train_l1:.6}  val_mae {val_mae:.4}");
        log.push(EpochRecord {
            epoch,
            lr,
            train_l1,
            val_mae,
        });
        if val_mae < best_val {
            best_val = val_mae;
            best = snapshot(&model.params, epoch, Some(val_mae));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if train_config.patience > 0 && since_best >= train_config.patience {
            log::info!("no validation improvement for {since_best} epochs; stopping");
            return Ok(TrainOutcome {
                checkpoint: best,
                log,
                stopped_early: true,
            });
        }
    }
    Ok(TrainOutcome {
        checkpoint: best,
        log,
        stopped_early: false,
    })
}

pub fn write_epoch_log<W: Write>(log: &[EpochRecord], out: W) -> Result<(), TrainError> {
    let mut w = crate::io::csv_writer(out);
    w.write_record(["epoch", "lr", "train_l1", "val_mae"])?;
    for r in log {
        w.serialize((r.epoch, r.lr, r.train_l1, r.val_mae))?;
    }
    w.flush()?;
    Ok(())
}

/// Rows `horizon_min,mae,rmse,variant` for every report in order.
pub fn write_eval_reports<W: Write>(reports: &[EvalReport], out: W) -> Result<(), TrainError> {
    let mut w = crate::io::csv_writer(out);
    w.write_record(["horizon_min", "mae", "rmse", "variant"])?;
    for r in reports {
        for h in &r.horizons {
            w.serialize((h.horizon_min, h.mae, h.rmse, &r.variant))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Markdown table with one row per horizon and MAE/RMSE columns per report.
pub fn markdown_table(reports: &[EvalReport]) -> String {
    let mut s = String::from("| Horizon |");
    for r in reports {
        s.push_str(&format!(" {} MAE | {} RMSE |", r.variant, r.variant));
    }
    s.push_str("\n|---|");
    s.push_str(&"---:|---:|".repeat(reports.len()));
    s.push('\n');
    let rows = reports.first().map_or(0, |r| r.horizons.len());
    for k in 0..rows {
        s.push_str(&format!("| {}min |", reports[0].horizons[k].horizon_min));
        for r in reports {
            s.push_str(&format!(" {:.3} | {:.3} |", r.horizons[k].mae, r.horizons[k].rmse));
        }
        s.push('\n');
    }
    s
}

/// Parses the output of [`write_eval_reports`], grouping rows by variant in
/// order of first appearance.
pub fn read_eval_reports<R: std::io::Read>(input: R) -> Result<Vec<EvalReport>, TrainError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.iter().collect::<Vec<_>>().join(",");
    if headers != "horizon_min,mae,rmse,variant" {
        return Err(TrainError::Config(format!("unexpected report header `{headers}`")));
    }
    let mut reports: Vec<EvalReport> = Vec::new();
    for row in reader.deserialize::<(usize, f64, f64, String)>() {
        let (horizon_min, mae, rmse, variant) = row?;
        let score = HorizonScore { horizon_min, mae, rmse };
        match reports.iter_mut().find(|r| r.variant == variant) {
            Some(r) => r.horizons.push(score),
            None => reports.push(EvalReport {
                variant,
                horizons: vec![score],
            }),
        }
    }
    Ok(reports)
}
