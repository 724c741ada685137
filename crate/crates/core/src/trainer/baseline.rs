use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Predictor, TrainError};
use crate::folding::{FoldedSample, SampleSet, CHANNELS};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    HistoricalAverage,
    SeasonalNaive,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 2] = [BaselineKind::HistoricalAverage, BaselineKind::SeasonalNaive];

    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::HistoricalAverage => "historical_average",
            BaselineKind::SeasonalNaive => "seasonal_naive",
        }
    }
}

impl FromStr for BaselineKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| TrainError::Config(format!("unknown baseline `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselinePredictor {
    pub kind: BaselineKind,
    pub intervals_per_day: usize,
    /// `[station][channel][time of day]` training means; empty for seasonal naive.
    pub means: Vec<[Vec<f64>; CHANNELS]>,
}

/// Fits a baseline from the training split.
///
/// Historical averages use every distinct interval the training samples
/// cover (prediction time plus horizons), each counted once.
pub fn fit_baseline(kind: BaselineKind, train: &SampleSet) -> Result<BaselinePredictor, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    let corpus = train.corpus();
    let t = corpus.intervals_per_day();
    if kind == BaselineKind::SeasonalNaive {
        return Ok(BaselinePredictor {
            kind,
            intervals_per_day: t,
            means: Vec::new(),
        });
    }
    let covered: BTreeSet<usize> = train
        .time_indices()
        .iter()
        .flat_map(|&i| i..i + train.horizons())
        .collect();
    let mut counts = vec![0usize; t];
    for &i in &covered {
        counts[i % t] += 1;
    }
    if let Some(tod) = counts.iter().position(|&c| c == 0) {
        return Err(TrainError::Uncovered(format!(
            "no training observation at interval {tod} of the day"
        )));
    }
    let means = corpus
        .stations
        .iter()
        .map(|st| {
            std::array::from_fn(|c| {
                let ch = st.channel(c);
                let mut sum = vec![0.0; t];
                for &i in &covered {
                    sum[i % t] += ch[i];
                }
                sum.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect()
            })
        })
        .collect();
    Ok(BaselinePredictor {
        kind,
        intervals_per_day: t,
        means,
    })
}

impl BaselinePredictor {
    pub fn predict_sample(&self, set: &SampleSet, sample: &FoldedSample) -> Result<Tensor, TrainError> {
        let corpus = set.corpus();
        let s = corpus.station_count();
        let h = set.horizons();
        let t = self.intervals_per_day;
        if t != corpus.intervals_per_day() || (!self.means.is_empty() && self.means.len() != s) {
            return Err(TrainError::Mismatch("baseline was fitted on a different corpus layout".into()));
        }
        let idx = sample.time_index;
        let mut out = Vec::with_capacity(s * CHANNELS * h);
        for (st, series) in corpus.stations.iter().enumerate() {
            for c in 0..CHANNELS {
                for k in 0..h {
                    let target = idx + k;
                    out.push(match self.kind {
                        BaselineKind::HistoricalAverage => self.means[st][c][target % t],
                        BaselineKind::SeasonalNaive => {
                            let back = target.checked_sub(t).ok_or_else(|| {
                                TrainError::Uncovered(format!("no observation one day before index {target}"))
                            })?;
                            series.channel(c)[back]
                        }
                    });
                }
            }
        }
        Ok(Tensor::new(vec![s, CHANNELS * h], out).expect("prediction shape"))
    }
}

impl Predictor for BaselinePredictor {
    fn label(&self) -> String {
        self.kind.label().to_string()
    }

    fn predict(&self, set: &SampleSet, sample: &FoldedSample) -> Result<Tensor, TrainError> {
        self.predict_sample(set, sample)
    }
}
