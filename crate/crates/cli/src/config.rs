//! Experiment configuration files.

use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use mpstn::folding::{Corpus, DateRange, SplitSpec};
use mpstn::model::{ModelConfig, Variant};
use mpstn::trainer::TrainConfig;

use crate::CliError;

/// Reads a JSON file, rejecting unknown keys; a missing path gives defaults.
pub fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// First training date; the corpus start when absent.
    pub start_date: Option<NaiveDate>,
    pub train_days: usize,
    pub validation_days: usize,
    pub test_days: usize,
    pub excluded_dates: Vec<NaiveDate>,
    /// Each listed date excludes its whole Monday-to-Sunday week.
    pub excluded_weeks: Vec<NaiveDate>,
    /// Keep every n-th prediction time; trades coverage for speed.
    pub train_stride: usize,
    pub validation_stride: usize,
    pub test_stride: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            start_date: None,
            train_days: 70,
            validation_days: 7,
            test_days: 13,
            excluded_dates: Vec::new(),
            excluded_weeks: Vec::new(),
            train_stride: 1,
            validation_stride: 1,
            test_stride: 1,
        }
    }
}

impl DataSection {
    pub fn split(&self, corpus: &Corpus) -> SplitSpec {
        let start = self.start_date.unwrap_or(corpus.start_date());
        let mut excluded = self.excluded_dates.clone();
        for d in &self.excluded_weeks {
            let monday = *d - chrono::Days::new(d.weekday().num_days_from_monday() as u64);
            excluded.extend(DateRange { start: monday, days: 7 }.dates());
        }
        excluded.sort();
        excluded.dedup();
        SplitSpec::consecutive(start, self.train_days, self.validation_days, self.test_days).with_excluded(excluded)
    }
}

/// Model hyperparameters; station count and day length come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub periods: usize,
    pub gnn_layers: usize,
    pub feature_dim: usize,
    pub weather_embed_dim: usize,
    pub horizons: usize,
    pub variant: Variant,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            periods: m.periods,
            gnn_layers: m.gnn_layers,
            feature_dim: m.feature_dim,
            weather_embed_dim: m.weather_embed_dim,
            horizons: m.horizons,
            variant: m.variant,
        }
    }
}

impl ModelSection {
    pub fn resolve(&self, corpus: &Corpus) -> ModelConfig {
        ModelConfig {
            periods: self.periods,
            intervals_per_day: corpus.intervals_per_day(),
            stations: corpus.station_count(),
            gnn_layers: self.gnn_layers,
            feature_dim: self.feature_dim,
            weather_embed_dim: self.weather_embed_dim,
            horizons: self.horizons,
            variant: self.variant,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
}
