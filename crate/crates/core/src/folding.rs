//! Period folding of flow histories and dataset assembly.
//!
//! A window ending at a prediction time is the trailing `periods x T`
//! intervals, laid out as `periods` rows of one day each: row 0 is the oldest
//! chunk and row `periods - 1` ends immediately before the prediction time,
//! so column `t` always refers to the same time-of-day offset.

use std::ops::Range;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synthgen::{NetworkSpec, WeatherSeries};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 2;
pub const INFLOW: usize = 0;
pub const OUTFLOW: usize = 1;

/// Standard deviations below this are replaced by 1.0 so a constant channel
/// normalises to zeros instead of dividing by (almost) zero.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FoldError {
    #[error("insufficient history: earliest feasible prediction time is {earliest}")]
    InsufficientHistory { earliest: PredictionTime },
    #[error("prediction time {0} lies outside the recorded series")]
    OutOfRange(PredictionTime),
    #[error("invalid flow series `{station}`: {reason}")]
    InvalidSeries { station: String, reason: String },
    #[error("inconsistent corpus: {0}")]
    InconsistentCorpus(String),
    #[error("weather is missing for dates: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "))]
    WeatherGaps(Vec<NaiveDate>),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("normalizer needs at least 2 training samples, got {0}")]
    TooFewSamples(usize),
}

pub type Result<T> = std::result::Result<T, FoldError>;

/// A date plus the index of a within-day interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PredictionTime {
    pub date: NaiveDate,
    pub interval: usize,
}

impl std::fmt::Display for PredictionTime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} interval {}", self.date, self.interval)
    }
}

/// One station's inflow/outflow counts, `intervals_per_day` per recorded day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSeries {
    pub station_id: String,
    pub start_date: NaiveDate,
    pub intervals_per_day: usize,
    pub inflow: Vec<f64>,
    pub outflow: Vec<f64>,
}

impl FlowSeries {
    pub fn new(
        station_id: impl Into<String>,
        start_date: NaiveDate,
        intervals_per_day: usize,
        inflow: Vec<f64>,
        outflow: Vec<f64>,
    ) -> Result<Self> {
        let station_id = station_id.into();
        let invalid = |reason: String| FoldError::InvalidSeries {
            station: station_id.clone(),
            reason,
        };
        if intervals_per_day == 0 {
            return Err(invalid("intervals_per_day must be positive".into()));
        }
        if inflow.len() != outflow.len() {
            return Err(invalid(format!(
                "inflow has {} values, outflow {}",
                inflow.len(),
                outflow.len()
            )));
        }
        if !inflow.len().is_multiple_of(intervals_per_day) {
            return Err(invalid(format!(
                "length {} is not a whole number of {intervals_per_day}-interval days",
                inflow.len()
            )));
        }
        if let Some(bad) = inflow.iter().chain(&outflow).find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid(format!("count {bad} is not a non-negative number")));
        }
        Ok(Self {
            station_id,
            start_date,
            intervals_per_day,
            inflow,
            outflow,
        })
    }

    pub fn len(&self) -> usize {
        self.inflow.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inflow.is_empty()
    }

    pub fn days(&self) -> usize {
        self.len() / self.intervals_per_day
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        if c == INFLOW {
            &self.inflow
        } else {
            &self.outflow
        }
    }

    /// Position of `at` on the series' continuous interval timeline. May be
    /// `len()` (the instant right after the last recorded interval).
    pub fn time_index(&self, at: PredictionTime) -> Option<usize> {
        if at.interval >= self.intervals_per_day || at.date < self.start_date {
            return None;
        }
        let day = (at.date - self.start_date).num_days() as usize;
        let idx = day * self.intervals_per_day + at.interval;
        (idx <= self.len()).then_some(idx)
    }

    pub fn time_at(&self, index: usize) -> PredictionTime {
        PredictionTime {
            date: self.start_date + chrono::Days::new((index / self.intervals_per_day) as u64),
            interval: index % self.intervals_per_day,
        }
    }
}

/// Folds the `periods * T` intervals preceding `at` into a `[2, periods, T]`
/// tensor (channel 0 inflow, channel 1 outflow).
pub fn fold_window(series: &FlowSeries, at: PredictionTime, periods: usize) -> Result<Tensor> {
    let idx = series.time_index(at).ok_or(FoldError::OutOfRange(at))?;
    let t = series.intervals_per_day;
    let span = periods * t;
    if periods == 0 || idx < span {
        return Err(FoldError::InsufficientHistory {
            earliest: series.time_at(span.max(t)),
        });
    }
    let mut data = Vec::with_capacity(CHANNELS * span);
    for c in 0..CHANNELS {
        data.extend_from_slice(&series.channel(c)[idx - span..idx]);
    }
    Ok(Tensor::new(vec![CHANNELS, periods, t], data).expect("window shape"))
}

/// Inverse of the fold layout: the two channels as flat chronological sequences.
pub fn unfold(window: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let half = window.numel() / CHANNELS;
    let (a, b) = window.data().split_at(half);
    (a.to_vec(), b.to_vec())
}

/// All stations of one network over a shared calendar.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub stations: Vec<FlowSeries>,
    pub weather: WeatherSeries,
    pub network: NetworkSpec,
}

impl Corpus {
    pub fn new(stations: Vec<FlowSeries>, weather: WeatherSeries, network: NetworkSpec) -> Result<Self> {
        let first = stations
            .first()
            .ok_or_else(|| FoldError::InconsistentCorpus("no stations".into()))?;
        for s in &stations[1..] {
            if s.intervals_per_day != first.intervals_per_day
                || s.start_date != first.start_date
                || s.len() != first.len()
            {
                return Err(FoldError::InconsistentCorpus(format!(
                    "station `{}` does not share the calendar of `{}`",
                    s.station_id, first.station_id
                )));
            }
        }
        if network.station_count() != stations.len() {
            return Err(FoldError::InconsistentCorpus(format!(
                "network has {} stations, flows have {}",
                network.station_count(),
                stations.len()
            )));
        }
        Ok(Self {
            stations,
            weather,
            network,
        })
    }

    pub fn station_count(&self) -> usize {
        self.stations.len()
    }

    pub fn intervals_per_day(&self) -> usize {
        self.stations[0].intervals_per_day
    }

    pub fn start_date(&self) -> NaiveDate {
        self.stations[0].start_date
    }

    pub fn days(&self) -> usize {
        self.stations[0].days()
    }

    pub fn len(&self) -> usize {
        self.stations[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn date_of_day(&self, day: usize) -> NaiveDate {
        self.start_date() + chrono::Days::new(day as u64)
    }

    pub fn time_at(&self, index: usize) -> PredictionTime {
        self.stations[0].time_at(index)
    }

    pub fn missing_weather(&self) -> Vec<NaiveDate> {
        (0..self.days())
            .map(|d| self.date_of_day(d))
            .filter(|d| self.weather.is_rain(*d).is_none())
            .collect()
    }
}

/// `days` consecutive dates from `start`; zero days is an empty range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub days: usize,
}

impl DateRange {
    pub fn end_exclusive(&self) -> NaiveDate {
        self.start + chrono::Days::new(self.days as u64)
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        d >= self.start && d < self.end_exclusive()
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.days).map(|i| self.start + chrono::Days::new(i as u64))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: DateRange,
    pub validation: DateRange,
    pub test: DateRange,
    pub excluded: Vec<NaiveDate>,
}

impl SplitSpec {
    /// Back-to-back split blocks starting at `start`.
    pub fn consecutive(start: NaiveDate, train_days: usize, val_days: usize, test_days: usize) -> Self {
        let train = DateRange { start, days: train_days };
        let validation = DateRange {
            start: train.end_exclusive(),
            days: val_days,
        };
        let test = DateRange {
            start: validation.end_exclusive(),
            days: test_days,
        };
        Self {
            train,
            validation,
            test,
            excluded: Vec::new(),
        }
    }

    pub fn with_excluded(mut self, excluded: Vec<NaiveDate>) -> Self {
        self.excluded = excluded;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.end_exclusive() > self.validation.start || self.validation.end_exclusive() > self.test.start {
            return Err(FoldError::InvalidSplit(
                "ranges must be disjoint and ordered train < validation < test".into(),
            ));
        }
        Ok(())
    }
}

/// One training example with all stations jointly.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldedSample {
    pub prediction_time: PredictionTime,
    /// Position of the prediction time on the corpus timeline.
    pub time_index: usize,
    /// `[S, 2, periods, T]`, raw counts.
    pub window: Tensor,
    pub rain_flag: u8,
    /// `[S, 2, horizons]`, raw counts.
    pub targets: Tensor,
    pub window_span: Range<usize>,
    pub target_span: Range<usize>,
}

/// An ordered set of prediction times over a shared corpus; samples are
/// materialised on demand so the corpus is stored once.
#[derive(Clone, Debug)]
pub struct SampleSet {
    corpus: Arc<Corpus>,
    periods: usize,
    horizons: usize,
    times: Vec<usize>,
}

impl SampleSet {
    pub fn new(corpus: Arc<Corpus>, periods: usize, horizons: usize, times: Vec<usize>) -> Self {
        Self {
            corpus,
            periods,
            horizons,
            times,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn horizons(&self) -> usize {
        self.horizons
    }

    pub fn time_indices(&self) -> &[usize] {
        &self.times
    }

    pub fn prediction_time(&self, i: usize) -> PredictionTime {
        self.corpus.time_at(self.times[i])
    }

    /// Keeps only the samples at the given positions (in the given order).
    pub fn subset(&self, positions: &[usize]) -> Self {
        Self {
            corpus: Arc::clone(&self.corpus),
            periods: self.periods,
            horizons: self.horizons,
            times: positions.iter().map(|&p| self.times[p]).collect(),
        }
    }

    pub fn sample(&self, i: usize) -> FoldedSample {
        let idx = self.times[i];
        let corpus = &self.corpus;
        let t = corpus.intervals_per_day();
        let span = self.periods * t;
        let s = corpus.station_count();
        let mut window = Vec::with_capacity(s * CHANNELS * span);
        let mut targets = Vec::with_capacity(s * CHANNELS * self.horizons);
        for st in &corpus.stations {
            for c in 0..CHANNELS {
                let ch = st.channel(c);
                window.extend_from_slice(&ch[idx - span..idx]);
            }
            for c in 0..CHANNELS {
                targets.extend_from_slice(&st.channel(c)[idx..idx + self.horizons]);
            }
        }
        let prediction_time = corpus.time_at(idx);
        let rain_flag = corpus.weather.is_rain(prediction_time.date).unwrap_or(false) as u8;
        FoldedSample {
            prediction_time,
            time_index: idx,
            window: Tensor::new(vec![s, CHANNELS, self.periods, t], window).expect("window shape"),
            rain_flag,
            targets: Tensor::new(vec![s, CHANNELS, self.horizons], targets).expect("target shape"),
            window_span: idx - span..idx,
            target_span: idx..idx + self.horizons,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = FoldedSample> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }
}

#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: SampleSet,
    pub validation: SampleSet,
    pub test: SampleSet,
}

/// Enumerates prediction times for each split.
///
/// A time qualifies when its date is in the split range and not excluded, its
/// absolute interval index is a multiple of `stride`, a full `periods * T` history
/// precedes it and `horizons` recorded intervals follow it.
pub fn build_dataset(
    corpus: Arc<Corpus>,
    split: &SplitSpec,
    periods: usize,
    horizons: usize,
    stride: usize,
) -> Result<Datasets> {
    split.validate()?;
    if periods == 0 || horizons == 0 || stride == 0 {
        return Err(FoldError::InvalidSplit(
            "periods, horizons and stride must be positive".into(),
        ));
    }
    let missing = corpus.missing_weather();
    if !missing.is_empty() {
        return Err(FoldError::WeatherGaps(missing));
    }
    let t = corpus.intervals_per_day();
    let start = corpus.start_date();
    let len = corpus.len();
    let times_for = |range: &DateRange| -> Vec<usize> {
        let mut out = Vec::new();
        for date in range.dates() {
            if date < start || split.excluded.contains(&date) {
                continue;
            }
            let day = (date - start).num_days() as usize;
            for interval in 0..t {
                let idx = day * t + interval;
                if idx.is_multiple_of(stride) && idx >= periods * t && idx + horizons <= len {
                    out.push(idx);
                }
            }
        }
        out
    };
    let make = |range: &DateRange| SampleSet::new(Arc::clone(&corpus), periods, horizons, times_for(range));
    Ok(Datasets {
        train: make(&split.train),
        validation: make(&split.validation),
        test: make(&split.test),
    })
}

/// Per-station, per-channel z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<[f64; CHANNELS]>,
    pub std: Vec<[f64; CHANNELS]>,
}

impl Normalizer {
    /// Fits on the observations at each training sample's prediction time,
    /// so every statistic comes from training-period data only.
    pub fn fit(train: &SampleSet) -> Result<Self> {
        if train.len() < 2 {
            return Err(FoldError::TooFewSamples(train.len()));
        }
        let corpus = train.corpus();
        let n = train.len() as f64;
        let mut mean = Vec::with_capacity(corpus.station_count());
        let mut std = Vec::with_capacity(corpus.station_count());
        for st in &corpus.stations {
            let mut m = [0.0; CHANNELS];
            let mut s = [0.0; CHANNELS];
            for c in 0..CHANNELS {
                let ch = st.channel(c);
                let mu = train.time_indices().iter().map(|&i| ch[i]).sum::<f64>() / n;
                let var = train.time_indices().iter().map(|&i| (ch[i] - mu).powi(2)).sum::<f64>() / n;
                m[c] = mu;
                s[c] = var.sqrt();
                if s[c] < STD_FLOOR {
                    log::warn!(
                        "station `{}` channel {c} has zero variance on the training split; std floored",
                        st.station_id
                    );
                    s[c] = 1.0;
                }
            }
            mean.push(m);
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    pub fn station_count(&self) -> usize {
        self.mean.len()
    }

    /// Normalises a `[S, 2, ...]` tensor in place.
    pub fn apply(&self, x: &mut Tensor) {
        self.map(x, |v, mu, sd| (v - mu) / sd);
    }

    /// Undoes [`Normalizer::apply`] on a `[S, 2, ...]` tensor (or its `[S, 2*k]` flattening).
    pub fn invert(&self, x: &mut Tensor) {
        self.map(x, |v, mu, sd| v * sd + mu);
    }

    fn map(&self, x: &mut Tensor, f: impl Fn(f64, f64, f64) -> f64) {
        let s = self.station_count();
        assert_eq!(x.shape()[0], s, "normalizer station count");
        let per_station = x.numel() / s;
        let per_channel = per_station / CHANNELS;
        for (st, block) in x.data_mut().chunks_mut(per_station).enumerate() {
            for (c, chunk) in block.chunks_mut(per_channel).enumerate() {
                let (mu, sd) = (self.mean[st][c], self.std[st][c]);
                chunk.iter_mut().for_each(|v| *v = f(*v, mu, sd));
            }
        }
    }
}
