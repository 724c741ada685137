use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{evaluate_checkpoint, train, Checkpoint, EpochRecord, EvalReport, TrainConfig, TrainError};
use crate::folding::Datasets;
use crate::model::{
    ModelConfig, Variant, BATCH_SIZE_CHOICES, FEATURE_DIM_CHOICES, GNN_LAYER_CHOICES, WEATHER_EMBED_CHOICES,
};
use crate::synthgen::derive_seed;

pub const GRID_SIZE: usize =
    GNN_LAYER_CHOICES.len() * BATCH_SIZE_CHOICES.len() * WEATHER_EMBED_CHOICES.len() * FEATURE_DIM_CHOICES.len();

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPoint {
    pub gnn_layers: usize,
    pub batch_size: usize,
    pub weather_embed_dim: usize,
    pub feature_dim: usize,
}

impl GridPoint {
    pub fn apply(&self, model: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        (
            ModelConfig {
                gnn_layers: self.gnn_layers,
                weather_embed_dim: self.weather_embed_dim,
                feature_dim: self.feature_dim,
                ..model.clone()
            },
            TrainConfig {
                batch_size: self.batch_size,
                ..train.clone()
            },
        )
    }
}

/// The full search space, layers varying slowest and feature width fastest.
pub fn grid_points() -> Vec<GridPoint> {
    let mut out = Vec::with_capacity(GRID_SIZE);
    for gnn_layers in GNN_LAYER_CHOICES {
        for batch_size in BATCH_SIZE_CHOICES {
            for weather_embed_dim in WEATHER_EMBED_CHOICES {
                for feature_dim in FEATURE_DIM_CHOICES {
                    out.push(GridPoint {
                        gnn_layers,
                        batch_size,
                        weather_embed_dim,
                        feature_dim,
                    });
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    /// Position in [`grid_points`] order.
    pub index: usize,
    pub point: GridPoint,
    pub seed: u64,
    pub val_mae: Option<f64>,
    pub best_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    /// Ranked best first; failed points last in grid order.
    pub results: Vec<GridResult>,
    pub best: Option<Checkpoint>,
}

/// Orders by validation MAE, then smaller feature width, then fewer layers.
pub fn rank_results(results: &mut [GridResult]) {
    results.sort_by(compare);
}

fn compare(a: &GridResult, b: &GridResult) -> Ordering {
    match (a.val_mae, b.val_mae) {
        (Some(x), Some(y)) => x
            .total_cmp(&y)
            .then(a.point.feature_dim.cmp(&b.point.feature_dim))
            .then(a.point.gnn_layers.cmp(&b.point.gnn_layers))
            .then(a.index.cmp(&b.index)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.index.cmp(&b.index),
    }
}

/// Trains the first `budget` grid points; a failing point is recorded and
/// the search carries on.
pub fn grid_search(
    datasets: &Datasets,
    base: &ModelConfig,
    train_config: &TrainConfig,
    budget: usize,
) -> Result<GridOutcome, TrainError> {
    if budget == 0 {
        return Err(TrainError::Config("grid budget must be at least 1".into()));
    }
    let mut results = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut best_key: Option<GridResult> = None;
    for (index, point) in grid_points().into_iter().enumerate().take(budget) {
        let (model_config, mut point_train) = point.apply(base, train_config);
        point_train.seed = derive_seed(train_config.seed, index as u64);
        log::info!("grid point {}/{}: {point:?}", index + 1, budget.min(GRID_SIZE));
        let mut result = GridResult {
            index,
            point,
            seed: point_train.seed,
            val_mae: None,
            best_epoch: None,
            error: None,
        };
        match train(datasets, &model_config, &point_train) {
            Ok(outcome) => {
                result.val_mae = outcome.checkpoint.meta.val_mae;
                result.best_epoch = Some(outcome.checkpoint.meta.epoch);
                if best_key.as_ref().is_none_or(|b| compare(&result, b) == Ordering::Less) {
                    best_key = Some(result.clone());
                    best = Some(outcome.checkpoint);
                }
            }
            Err(e) => {
                log::warn!("grid point {index} failed: {e}");
                result.error = Some(e.to_string());
            }
        }
        results.push(result);
    }
    rank_results(&mut results);
    Ok(GridOutcome { results, best })
}

#[derive(Clone, Debug)]
pub struct AblationOutcome {
    /// One entry per variant, in `Variant::ALL` order.
    pub reports: Vec<EvalReport>,
    pub checkpoints: Vec<Checkpoint>,
    pub logs: Vec<Vec<EpochRecord>>,
}

/// Trains the three variants with identical seeds and reports test errors.
pub fn ablate(datasets: &Datasets, base: &ModelConfig, train_config: &TrainConfig) -> Result<AblationOutcome, TrainError> {
    let mut out = AblationOutcome {
        reports: Vec::new(),
        checkpoints: Vec::new(),
        logs: Vec::new(),
    };
    for variant in Variant::ALL {
        let config = ModelConfig {
            variant,
            ..base.clone()
        };
        log::info!("ablation variant {}", variant.label());
        let outcome = train(datasets, &config, train_config)?;
        let report = evaluate_checkpoint(&outcome.checkpoint, &datasets.test)?.with_variant(variant.label());
        out.reports.push(report);
        out.checkpoints.push(outcome.checkpoint);
        out.logs.push(outcome.log);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn space_has_54_distinct_points() {
        let pts = grid_points();
        assert_eq!(pts.len(), 54);
        assert_eq!(GRID_SIZE, 54);
        for (i, a) in pts.iter().enumerate() {
            assert!(pts[i + 1..].iter().all(|b| b != a));
        }
        assert_eq!(
            pts[0],
            GridPoint {
                gnn_layers: 1,
                batch_size: 4,
                weather_embed_dim: 2,
                feature_dim: 64
            }
        );
    }

    fn result(index: usize, feature_dim: usize, gnn_layers: usize, val: Option<f64>) -> GridResult {
        GridResult {
            index,
            point: GridPoint {
                gnn_layers,
                batch_size: 4,
                weather_embed_dim: 2,
                feature_dim,
            },
            seed: 0,
            val_mae: val,
            best_epoch: None,
            error: None,
        }
    }

    #[test]
    fn ranking_and_tie_breaks() {
        let mut rs = vec![
            result(0, 256, 1, Some(1.0)),
            result(1, 64, 4, Some(1.0)),
            result(2, 64, 2, Some(1.0)),
            result(3, 128, 1, None),
            result(4, 128, 1, Some(0.5)),
        ];
        rank_results(&mut rs);
        let order: Vec<usize> = rs.iter().map(|r| r.index).collect();
        assert_eq!(order, vec![4, 2, 1, 0, 3]);
        let vals: Vec<f64> = rs.iter().filter_map(|r| r.val_mae).collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    }
}
