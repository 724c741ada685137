use serde::{Deserialize, Serialize};

use super::TrainError;

/// Minutes per forecast step.
pub const STEP_MINUTES: usize = 15;

fn check_lengths(pred: &[f64], actual: &[f64]) -> Result<(), TrainError> {
    if pred.is_empty() || pred.len() != actual.len() {
        return Err(TrainError::Metric(format!(
            "need equal non-empty inputs, got {} predictions and {} actuals",
            pred.len(),
            actual.len()
        )));
    }
    Ok(())
}

pub fn mae(pred: &[f64], actual: &[f64]) -> Result<f64, TrainError> {
    check_lengths(pred, actual)?;
    let total: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum();
    Ok(total / pred.len() as f64)
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64, TrainError> {
    check_lengths(pred, actual)?;
    let total: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum();
    Ok((total / pred.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonScore {
    pub horizon_min: usize,
    pub mae: f64,
    pub rmse: f64,
}

/// Per-horizon errors in persons per interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub horizons: Vec<HorizonScore>,
}

impl EvalReport {
    pub fn mean_mae(&self) -> f64 {
        self.horizons.iter().map(|h| h.mae).sum::<f64>() / self.horizons.len() as f64
    }

    pub fn mean_rmse(&self) -> f64 {
        self.horizons.iter().map(|h| h.rmse).sum::<f64>() / self.horizons.len() as f64
    }

    pub fn with_variant(mut self, variant: impl Into<String>) -> Self {
        self.variant = variant.into();
        self
    }
}

/// Accumulates absolute and squared errors per horizon.
#[derive(Clone, Debug)]
pub(crate) struct ErrorAccumulator {
    abs: Vec<f64>,
    sq: Vec<f64>,
    count: usize,
}

impl ErrorAccumulator {
    pub fn new(horizons: usize) -> Self {
        Self {
            abs: vec![0.0; horizons],
            sq: vec![0.0; horizons],
            count: 0,
        }
    }

    /// Adds one `[S, 2, H]` prediction/target pair.
    pub fn add(&mut self, pred: &[f64], actual: &[f64]) {
        let h = self.abs.len();
        debug_assert_eq!(pred.len(), actual.len());
        for (k, (p, a)) in pred.iter().zip(actual).enumerate() {
            let e = p - a;
            self.abs[k % h] += e.abs();
            self.sq[k % h] += e * e;
        }
        self.count += pred.len() / h;
    }

    pub fn report(&self, variant: &str) -> EvalReport {
        let n = self.count as f64;
        EvalReport {
            variant: variant.to_string(),
            horizons: (0..self.abs.len())
                .map(|k| HorizonScore {
                    horizon_min: (k + 1) * STEP_MINUTES,
                    mae: self.abs[k] / n,
                    rmse: (self.sq[k] / n).sqrt(),
                })
                .collect(),
        }
    }
}
