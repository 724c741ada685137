use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;

use mpstn::folding::{build_dataset, Corpus, Datasets, Normalizer, CHANNELS};
use mpstn::io::{csv_writer, load_corpus, save_corpus, DataError, EDGES_FILE, FLOWS_FILE, WEATHER_FILE};
use mpstn::model::{ModelConfig, Mpstn, NormalizedAdjacency};
use mpstn::synthgen::{self, GenConfig};
use mpstn::trainer::{
    self, evaluate, evaluate_checkpoint, fit_baseline, grid_points, markdown_table, read_eval_reports,
    write_epoch_log, write_eval_reports, BaselineKind, Checkpoint, EvalReport, ModelPredictor, Predictor,
    TrainError, STEP_MINUTES,
};

use crate::config::{read_json, ExperimentConfig};
use crate::manifest::ManifestBuilder;
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "checkpoint.mpstn";
pub const EPOCH_LOG_FILE: &str = "epoch_log.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const GRID_FILE: &str = "grid.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_TABLE_FILE: &str = "ablation.md";
pub const REPORT_FILE: &str = "report.md";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const DRY_RUN_FILE: &str = "dry_run.csv";

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::Diverged { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", dir.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn output_error(path: &Path) -> impl Fn(TrainError) -> CliError + '_ {
    move |e| CliError::Data(format!("cannot write {}: {e}", path.display()))
}

/// Runs `body`, then records the manifest as complete or partial.
fn with_manifest(
    out: &Path,
    manifest: &mut ManifestBuilder,
    body: impl FnOnce(&mut ManifestBuilder) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let result = body(manifest);
    manifest.write(out, result.as_ref().err())?;
    result
}

pub fn gen(config_path: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let config: GenConfig = read_json(config_path)?;
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    ensure_dir(out)?;
    let mut manifest = ManifestBuilder::new("gen", &config, Some(config.seed));
    if let Some(p) = config_path {
        manifest.input(p);
    }
    with_manifest(out, &mut manifest, |m| {
        let corpus = synthgen::generate(&config).map_err(|e| CliError::Config(e.to_string()))?;
        for p in save_corpus(out, &corpus.flows, &corpus.weather, &corpus.network)? {
            m.output(p);
        }
        log::info!(
            "wrote {} stations x {} days x {} intervals to {}",
            config.stations,
            config.days,
            config.intervals_per_day,
            out.display()
        );
        Ok(())
    })
}

struct Prepared {
    experiment: ExperimentConfig,
    corpus: Arc<Corpus>,
    model: ModelConfig,
    datasets: Datasets,
}

fn prepare(data: &Path, config_path: Option<&Path>, manifest_inputs: &mut Vec<PathBuf>) -> Result<Prepared, CliError> {
    let experiment: ExperimentConfig = read_json(config_path)?;
    experiment.train.validate()?;
    let corpus = Arc::new(load_corpus(data)?);
    let model = experiment.model.resolve(&corpus);
    model.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let split = experiment.data.split(&corpus);
    let d = &experiment.data;
    let build = |stride| build_dataset(Arc::clone(&corpus), &split, model.periods, model.horizons, stride);
    let map = |e: mpstn::folding::FoldError| CliError::Data(e.to_string());
    let datasets = Datasets {
        train: build(d.train_stride).map_err(map)?.train,
        validation: build(d.validation_stride).map_err(map)?.validation,
        test: build(d.test_stride).map_err(map)?.test,
    };
    log::info!(
        "samples: {} train, {} validation, {} test",
        datasets.train.len(),
        datasets.validation.len(),
        datasets.test.len()
    );
    manifest_inputs.extend([FLOWS_FILE, WEATHER_FILE, EDGES_FILE].map(|f| data.join(f)));
    if let Some(p) = config_path {
        manifest_inputs.push(p.to_path_buf());
    }
    Ok(Prepared {
        experiment,
        corpus,
        model,
        datasets,
    })
}

fn resolved(p: &Prepared) -> serde_json::Value {
    json!({ "experiment": p.experiment, "model": p.model })
}

fn register_inputs(manifest: &mut ManifestBuilder, inputs: Vec<PathBuf>) {
    for i in inputs {
        manifest.input(i);
    }
}

pub fn train(data: &Path, config_path: Option<&Path>, out: &Path, dry_run: bool) -> Result<(), CliError> {
    let mut inputs = Vec::new();
    let p = prepare(data, config_path, &mut inputs)?;
    ensure_dir(out)?;
    let command = if dry_run { "train --dry-run" } else { "train" };
    let mut manifest = ManifestBuilder::new(command, &resolved(&p), Some(p.experiment.train.seed));
    register_inputs(&mut manifest, inputs);
    if dry_run {
        return with_manifest(out, &mut manifest, |m| dry_run_all(&p, out, m));
    }
    with_manifest(out, &mut manifest, |m| {
        match trainer::train(&p.datasets, &p.model, &p.experiment.train) {
            Ok(outcome) => {
                let log_path = out.join(EPOCH_LOG_FILE);
                write_epoch_log(&outcome.log, create(&log_path)?).map_err(output_error(&log_path))?;
                m.output(&log_path);
                let ckpt = out.join(CHECKPOINT_FILE);
                outcome
                    .checkpoint
                    .save(&ckpt)
                    .map_err(|e| CliError::Data(e.to_string()))?;
                m.output(&ckpt);
                log::info!(
                    "best epoch {} with validation MAE {:.4}",
                    outcome.checkpoint.meta.epoch,
                    outcome.checkpoint.meta.val_mae.unwrap_or(f64::NAN)
                );
                Ok(())
            }
            Err(TrainError::Diverged {
                epoch,
                reason,
                last_good,
            }) => {
                let ckpt = out.join("last_good.mpstn");
                last_good.save(&ckpt).map_err(|e| CliError::Data(e.to_string()))?;
                m.output(&ckpt);
                Err(CliError::Numerical(format!(
                    "training diverged in epoch {epoch}: {reason}; last good parameters saved to {}",
                    ckpt.display()
                )))
            }
            Err(e) => Err(e.into()),
        }
    })
}

/// Builds and runs every search-space configuration on one training sample.
fn dry_run_all(p: &Prepared, out: &Path, m: &mut ManifestBuilder) -> Result<(), CliError> {
    let sample = p.datasets.train.sample(0);
    let normalizer = Normalizer::fit(&p.datasets.train).map_err(|e| CliError::Data(e.to_string()))?;
    let mut window = sample.window.clone();
    normalizer.apply(&mut window);
    let adjacency = NormalizedAdjacency::from_network(&p.corpus.network);
    let path = out.join(DRY_RUN_FILE);
    let mut w = csv_writer(create(&path)?);
    let csv_err = |e: csv::Error| CliError::Data(format!("cannot write {}: {e}", path.display()));
    w.write_record(["index", "gnn_layers", "batch_size", "weather_embed_dim", "feature_dim", "output_shape", "status"])
        .map_err(csv_err)?;
    let mut failures = 0;
    for (i, point) in grid_points().into_iter().enumerate() {
        let (config, _) = point.apply(&p.model, &p.experiment.train);
        let result = Mpstn::new(config, adjacency.clone(), 0).and_then(|model| model.predict(&window, sample.rain_flag));
        let (shape, status) = match result {
            Ok(y) if y.shape() == [p.model.stations, CHANNELS * p.model.horizons] => {
                (format!("{:?}", y.shape()), "ok".to_string())
            }
            Ok(y) => (format!("{:?}", y.shape()), "unexpected output shape".to_string()),
            Err(e) => (String::new(), e.to_string()),
        };
        if status != "ok" {
            failures += 1;
        }
        println!(
            "{:>2} layers={} batch={:>2} embed={} features={:>3}  {shape} {status}",
            i, point.gnn_layers, point.batch_size, point.weather_embed_dim, point.feature_dim
        );
        w.serialize((
            i,
            point.gnn_layers,
            point.batch_size,
            point.weather_embed_dim,
            point.feature_dim,
            shape,
            status,
        ))
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))?;
    drop(w);
    m.output(&path);
    if failures > 0 {
        return Err(CliError::Data(format!("{failures} configurations failed the shape check")));
    }
    Ok(())
}

fn load_checkpoint_for(path: &Path, p: &Prepared) -> Result<Checkpoint, CliError> {
    let ckpt = Checkpoint::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    trainer::check_compatible(&ckpt.config, &p.datasets.test)?;
    Ok(ckpt)
}

/// Baselines always see every training interval, whatever the training stride.
fn baseline_reports(p: &Prepared) -> Result<Vec<EvalReport>, CliError> {
    let split = p.experiment.data.split(&p.corpus);
    let full = build_dataset(Arc::clone(&p.corpus), &split, p.model.periods, p.model.horizons, 1)
        .map_err(|e| CliError::Data(e.to_string()))?;
    BaselineKind::ALL
        .into_iter()
        .map(|kind| {
            let b = fit_baseline(kind, &full.train)?;
            Ok(evaluate(&b, &p.datasets.test)?)
        })
        .collect()
}

pub fn eval(data: &Path, checkpoint: &Path, config_path: Option<&Path>, out: &Path, baselines: bool) -> Result<(), CliError> {
    let mut inputs = vec![checkpoint.to_path_buf()];
    let p = prepare(data, config_path, &mut inputs)?;
    let ckpt = load_checkpoint_for(checkpoint, &p)?;
    ensure_dir(out)?;
    let mut manifest = ManifestBuilder::new("eval", &resolved(&p), Some(p.experiment.train.seed));
    register_inputs(&mut manifest, inputs);
    with_manifest(out, &mut manifest, |m| {
        let mut reports = vec![evaluate_checkpoint(&ckpt, &p.datasets.test)?.with_variant("mpstn")];
        if baselines {
            reports.extend(baseline_reports(&p)?);
        }
        let path = out.join(EVAL_FILE);
        write_eval_reports(&reports, create(&path)?).map_err(output_error(&path))?;
        m.output(&path);
        print!("{}", markdown_table(&reports));
        Ok(())
    })
}

pub fn grid(data: &Path, config_path: Option<&Path>, out: &Path, budget: usize) -> Result<(), CliError> {
    if budget == 0 {
        return Err(CliError::Usage("--budget must be at least 1".into()));
    }
    let mut inputs = Vec::new();
    let p = prepare(data, config_path, &mut inputs)?;
    ensure_dir(out)?;
    let mut config = resolved(&p);
    config["budget"] = json!(budget);
    let mut manifest = ManifestBuilder::new("grid", &config, Some(p.experiment.train.seed));
    register_inputs(&mut manifest, inputs);
    with_manifest(out, &mut manifest, |m| {
        let outcome = trainer::grid_search(&p.datasets, &p.model, &p.experiment.train, budget)?;
        let path = out.join(GRID_FILE);
        let mut w = csv_writer(create(&path)?);
        let csv_err = |e: csv::Error| CliError::Data(format!("cannot write {}: {e}", path.display()));
        w.write_record([
            "rank",
            "index",
            "gnn_layers",
            "batch_size",
            "weather_embed_dim",
            "feature_dim",
            "seed",
            "val_mae",
            "best_epoch",
            "error",
        ])
        .map_err(csv_err)?;
        for (rank, r) in outcome.results.iter().enumerate() {
            w.serialize((
                rank + 1,
                r.index,
                r.point.gnn_layers,
                r.point.batch_size,
                r.point.weather_embed_dim,
                r.point.feature_dim,
                r.seed,
                r.val_mae,
                r.best_epoch,
                r.error.as_deref().unwrap_or(""),
            ))
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::Data(e.to_string()))?;
        drop(w);
        m.output(&path);
        match &outcome.best {
            Some(best) => {
                let ckpt = out.join("best.mpstn");
                best.save(&ckpt).map_err(|e| CliError::Data(e.to_string()))?;
                m.output(&ckpt);
                Ok(())
            }
            None => Err(CliError::Numerical("every grid point failed to train".into())),
        }
    })
}

pub fn ablate(data: &Path, config_path: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let mut inputs = Vec::new();
    let p = prepare(data, config_path, &mut inputs)?;
    ensure_dir(out)?;
    let mut manifest = ManifestBuilder::new("ablate", &resolved(&p), Some(p.experiment.train.seed));
    register_inputs(&mut manifest, inputs);
    with_manifest(out, &mut manifest, |m| {
        let outcome = trainer::ablate(&p.datasets, &p.model, &p.experiment.train)?;
        for ((report, ckpt), log) in outcome.reports.iter().zip(&outcome.checkpoints).zip(&outcome.logs) {
            let log_path = out.join(format!("{}_{EPOCH_LOG_FILE}", report.variant));
            write_epoch_log(log, create(&log_path)?).map_err(output_error(&log_path))?;
            m.output(&log_path);
            let path = out.join(format!("{}.mpstn", report.variant));
            ckpt.save(&path).map_err(|e| CliError::Data(e.to_string()))?;
            m.output(&path);
        }
        let path = out.join(ABLATION_FILE);
        write_eval_reports(&outcome.reports, create(&path)?).map_err(output_error(&path))?;
        m.output(&path);
        let table = format!("## Ablation (test split)\n\n{}", markdown_table(&outcome.reports));
        let md = out.join(ABLATION_TABLE_FILE);
        crate::write_atomic(&md, table.as_bytes())?;
        m.output(&md);
        print!("{table}");
        Ok(())
    })
}

pub fn report(
    data: &Path,
    checkpoint: &Path,
    config_path: Option<&Path>,
    ablation: Option<&Path>,
    out: &Path,
) -> Result<(), CliError> {
    let mut inputs = vec![checkpoint.to_path_buf()];
    let p = prepare(data, config_path, &mut inputs)?;
    let ckpt = load_checkpoint_for(checkpoint, &p)?;
    let ablation_reports = match ablation {
        Some(path) => {
            let f = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            inputs.push(path.to_path_buf());
            Some(read_eval_reports(f).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?)
        }
        None => None,
    };
    ensure_dir(out)?;
    let mut manifest = ManifestBuilder::new("report", &resolved(&p), Some(p.experiment.train.seed));
    register_inputs(&mut manifest, inputs);
    with_manifest(out, &mut manifest, |m| {
        let adjacency = NormalizedAdjacency::from_network(&p.corpus.network);
        let predictor = ModelPredictor::from_checkpoint(&ckpt, adjacency)?;
        let mut reports = vec![evaluate(&predictor, &p.datasets.test)?.with_variant("mpstn")];
        reports.extend(baseline_reports(&p)?);
        let mut md = format!(
            "## Test-split errors (persons per interval)\n\n{}",
            markdown_table(&reports)
        );
        if let Some(ab) = &ablation_reports {
            md.push_str(&format!("\n## Ablation\n\n{}", markdown_table(ab)));
        }
        let md_path = out.join(REPORT_FILE);
        crate::write_atomic(&md_path, md.as_bytes())?;
        m.output(&md_path);

        let path = out.join(PREDICTIONS_FILE);
        write_predictions(&p, &predictor, &path)?;
        m.output(&path);
        print!("{md}");
        Ok(())
    })
}

/// One row per (sample, station, channel, horizon), keyed by the target time.
fn write_predictions(p: &Prepared, predictor: &ModelPredictor, path: &Path) -> Result<(), CliError> {
    let mut w = csv_writer(create(path)?);
    let csv_err = |e: csv::Error| CliError::Data(format!("cannot write {}: {e}", path.display()));
    w.write_record([
        "station_id",
        "date",
        "interval_index",
        "horizon_min",
        "channel",
        "predicted",
        "actual",
    ])
    .map_err(csv_err)?;
    let test = &p.datasets.test;
    let h = test.horizons();
    for i in 0..test.len() {
        let sample = test.sample(i);
        let pred = predictor.predict(test, &sample)?;
        for (st, series) in p.corpus.stations.iter().enumerate() {
            for c in 0..CHANNELS {
                for k in 0..h {
                    let at = p.corpus.time_at(sample.time_index + k);
                    let off = (st * CHANNELS + c) * h + k;
                    w.serialize((
                        &series.station_id,
                        at.date.to_string(),
                        at.interval,
                        (k + 1) * STEP_MINUTES,
                        if c == 0 { "inflow" } else { "outflow" },
                        pred.data()[off],
                        sample.targets.data()[off],
                    ))
                    .map_err(csv_err)?;
                }
            }
        }
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(())
}
