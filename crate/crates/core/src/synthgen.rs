//! Synthetic multi-station ridership with known daily structure.
//!
//! Commuters travel home → work in the morning and back in the evening. Each
//! has a preferred entry time and a per-day jitter around it, so flows are
//! strongly periodic across days while individual intervals stay noisy.
//! Weekends and rain days thin out activity. Each exit lags its entry by a
//! travel time that grows with the hop count between the two stations.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::folding::FlowSeries;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("unknown topology `{0}` (expected line, tree or two-line-with-interchange)")]
    UnknownTopology(String),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    Line,
    Tree,
    TwoLineWithInterchange,
}

impl FromStr for Topology {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "line" => Ok(Self::Line),
            "tree" => Ok(Self::Tree),
            "two-line-with-interchange" => Ok(Self::TwoLineWithInterchange),
            other => Err(SynthError::UnknownTopology(other.to_string())),
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Line => "line",
            Self::Tree => "tree",
            Self::TwoLineWithInterchange => "two-line-with-interchange",
        })
    }
}

/// Stations `0..station_count` joined by undirected physical links.
///
/// Edges are stored once each as `(a, b)` with `a < b`, sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    station_count: usize,
    edges: Vec<(usize, usize)>,
}

impl NetworkSpec {
    pub fn new(station_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, SynthError> {
        if station_count == 0 {
            return Err(SynthError::InvalidNetwork("no stations".into()));
        }
        let mut norm = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(SynthError::InvalidNetwork(format!("self-edge at station {a}")));
            }
            if a >= station_count || b >= station_count {
                return Err(SynthError::InvalidNetwork(format!(
                    "edge ({a}, {b}) references a station outside 0..{station_count}"
                )));
            }
            norm.push((a.min(b), a.max(b)));
        }
        norm.sort_unstable();
        norm.dedup();
        let net = Self {
            station_count,
            edges: norm,
        };
        let unreachable = net.hop_distances_from(0).iter().filter(|d| d.is_none()).count();
        if unreachable > 0 {
            return Err(SynthError::InvalidNetwork(format!(
                "graph is disconnected ({unreachable} stations unreachable from station 0)"
            )));
        }
        Ok(net)
    }

    pub fn station_count(&self) -> usize {
        self.station_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.station_count];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Dense 0/1 adjacency matrix, row-major `S x S`.
    pub fn adjacency(&self) -> Vec<f64> {
        let s = self.station_count;
        let mut a = vec![0.0; s * s];
        for &(i, j) in &self.edges {
            a[i * s + j] = 1.0;
            a[j * s + i] = 1.0;
        }
        a
    }

    fn hop_distances_from(&self, source: usize) -> Vec<Option<usize>> {
        let adj = self.neighbours();
        let mut dist = vec![None; self.station_count];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &v in &adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// All-pairs hop counts. The graph is connected, so every entry is defined.
    pub fn hop_distances(&self) -> Vec<Vec<usize>> {
        (0..self.station_count)
            .map(|s| self.hop_distances_from(s).into_iter().map(|d| d.unwrap()).collect())
            .collect()
    }
}

pub fn generate_network(kind: Topology, stations: usize, seed: u64) -> Result<NetworkSpec, SynthError> {
    if stations < 2 {
        return Err(SynthError::InvalidConfig(format!("need at least 2 stations, got {stations}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<(usize, usize)> = match kind {
        Topology::Line => (1..stations).map(|i| (i - 1, i)).collect(),
        // random recursive tree
        Topology::Tree => (1..stations).map(|i| (rng.random_range(0..i), i)).collect(),
        Topology::TwoLineWithInterchange => {
            if stations < 4 {
                return Err(SynthError::InvalidConfig(format!(
                    "two-line-with-interchange needs at least 4 stations, got {stations}"
                )));
            }
            // line A: 0..a, line B threads the remaining stations through an
            // interior station of line A (an end station when A is too short).
            let a = stations.div_ceil(2);
            let hub = if a > 2 { rng.random_range(1..a - 1) } else { rng.random_range(0..a) };
            let mut edges: Vec<(usize, usize)> = (1..a).map(|i| (i - 1, i)).collect();
            let branch: Vec<usize> = (a..stations).collect();
            let split = branch.len() / 2;
            let mut line_b: Vec<usize> = branch[..split].to_vec();
            line_b.push(hub);
            line_b.extend_from_slice(&branch[split..]);
            edges.extend(line_b.windows(2).map(|w| (w[0], w[1])));
            edges
        }
    };
    NetworkSpec::new(stations, edges)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Commuter {
    pub home: usize,
    pub work: usize,
    /// Minutes after midnight.
    pub am_entry_mean: f64,
    pub am_entry_sd: f64,
    pub pm_entry_mean: f64,
    pub pm_entry_sd: f64,
    pub travel_minutes: f64,
    pub weekday_activity: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommuterPopulation {
    pub commuters: Vec<Commuter>,
}

impl CommuterPopulation {
    pub fn validate(&self, config: &GenConfig) -> Result<(), SynthError> {
        let (lo, hi) = config.day_bounds_minutes();
        for (i, c) in self.commuters.iter().enumerate() {
            let bad = |what: &str| Err(SynthError::InvalidConfig(format!("commuter {i}: {what}")));
            if c.home >= config.stations || c.work >= config.stations {
                return bad("station out of range");
            }
            if !(lo..hi).contains(&c.am_entry_mean) || !(lo..hi).contains(&c.pm_entry_mean) {
                return bad("preferred entry time outside the service day");
            }
            if c.am_entry_sd < 0.0 || c.pm_entry_sd < 0.0 {
                return bad("negative entry-time spread");
            }
            if c.travel_minutes <= 0.0 {
                return bad("travel time must be positive");
            }
            if !(0.0..=1.0).contains(&c.weekday_activity) {
                return bad("activity probability outside [0, 1]");
            }
        }
        Ok(())
    }
}

/// Draws commuters with station-level home/work attractiveness so that
/// stations differ in volume and in their morning/evening balance.
pub fn generate_population(network: &NetworkSpec, config: &GenConfig) -> CommuterPopulation {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let s = network.station_count();
    let hops = network.hop_distances();
    let home_weight: Vec<f64> = (0..s).map(|_| rng.random_range(0.2..1.0)).collect();
    let work_weight: Vec<f64> = (0..s).map(|_| rng.random_range(0.2..1.0)).collect();
    let pick = |rng: &mut ChaCha8Rng, w: &[f64], skip: Option<usize>| -> usize {
        let total: f64 = w.iter().enumerate().filter(|(i, _)| Some(*i) != skip).map(|(_, x)| x).sum();
        let mut u = rng.random_range(0.0..total);
        for (i, x) in w.iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            if u < *x {
                return i;
            }
            u -= x;
        }
        (0..w.len()).rev().find(|&i| Some(i) != skip).unwrap()
    };
    let commuters = (0..config.commuters)
        .map(|_| {
            let home = pick(&mut rng, &home_weight, None);
            let work = pick(&mut rng, &work_weight, Some(home));
            Commuter {
                home,
                work,
                am_entry_mean: rng.random_range(420.0..570.0),
                am_entry_sd: rng.random_range(5.0..15.0),
                pm_entry_mean: rng.random_range(1020.0..1170.0),
                pm_entry_sd: rng.random_range(5.0..20.0),
                travel_minutes: 2.0 + 2.5 * hops[home][work] as f64,
                weekday_activity: rng.random_range(0.8..0.98),
            }
        })
        .collect();
    CommuterPopulation { commuters }
}

/// Daily rain flags plus the demand multiplier applied on rain days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeatherSeries {
    pub rain: BTreeMap<NaiveDate, bool>,
    pub rain_multiplier: f64,
}

impl WeatherSeries {
    pub fn new(rain: BTreeMap<NaiveDate, bool>, rain_multiplier: f64) -> Self {
        Self { rain, rain_multiplier }
    }

    pub fn is_rain(&self, date: NaiveDate) -> Option<bool> {
        self.rain.get(&date).copied()
    }

    pub fn generate(config: &GenConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5851_f42d_4c95_7f2d);
        let rain = (0..config.days)
            .map(|d| (config.date_of_day(d), rng.random_bool(config.rain_probability)))
            .collect();
        Self::new(rain, config.rain_multiplier)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub seed: u64,
    pub days: usize,
    pub intervals_per_day: usize,
    pub stations: usize,
    pub commuters: usize,
    /// Poisson mean of background (non-commuter) counts per station and interval.
    pub noise_level: f64,
    pub rain_probability: f64,
    pub rain_multiplier: f64,
    pub topology: Topology,
    pub start_date: NaiveDate,
    pub interval_minutes: u32,
    /// Minutes after midnight at which interval 0 begins.
    pub day_start_minute: u32,
    /// Activity probability on Saturdays and Sundays relative to weekdays.
    pub weekend_activity_factor: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 2016,
            days: 90,
            intervals_per_day: 73,
            stations: 10,
            commuters: 2000,
            noise_level: 1.0,
            rain_probability: 0.3,
            rain_multiplier: 0.8,
            topology: Topology::TwoLineWithInterchange,
            start_date: NaiveDate::from_ymd_opt(2016, 7, 1).unwrap(),
            interval_minutes: 15,
            day_start_minute: 330,
            weekend_activity_factor: 0.25,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::InvalidConfig(m));
        if self.days == 0 || self.intervals_per_day == 0 || self.interval_minutes == 0 {
            return fail("days, intervals_per_day and interval_minutes must be positive".into());
        }
        if self.stations < 2 {
            return fail(format!("need at least 2 stations, got {}", self.stations));
        }
        let end = self.day_start_minute + self.interval_minutes * self.intervals_per_day as u32;
        if end > 24 * 60 {
            return fail(format!("service day ends at minute {end}, past midnight"));
        }
        if !self.noise_level.is_finite() || self.noise_level < 0.0 {
            return fail("noise_level must be a non-negative number".into());
        }
        if !(0.0..=1.0).contains(&self.rain_probability) {
            return fail("rain_probability must lie in [0, 1]".into());
        }
        if !(self.rain_multiplier > 0.0 && self.rain_multiplier <= 1.0) {
            return fail("rain_multiplier must lie in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.weekend_activity_factor) {
            return fail("weekend_activity_factor must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn date_of_day(&self, day: usize) -> NaiveDate {
        self.start_date + chrono::Days::new(day as u64)
    }

    /// `[start, end)` of the service day in minutes after midnight.
    pub fn day_bounds_minutes(&self) -> (f64, f64) {
        let start = self.day_start_minute as f64;
        (start, start + (self.interval_minutes as usize * self.intervals_per_day) as f64)
    }

    /// Interval index of a minute-of-day, clipped to the service day.
    fn interval_of(&self, minute: f64) -> usize {
        let rel = (minute - self.day_start_minute as f64) / self.interval_minutes as f64;
        (rel.floor().max(0.0) as usize).min(self.intervals_per_day - 1)
    }
}

pub fn is_weekend(date: NaiveDate) -> bool {
    matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

/// Everything one generator run produces.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub config: GenConfig,
    pub network: NetworkSpec,
    pub population: CommuterPopulation,
    pub weather: WeatherSeries,
    pub flows: Vec<FlowSeries>,
}

impl SyntheticCorpus {
    /// Drops the generator internals, keeping what a recorded corpus has.
    pub fn into_corpus(self) -> Result<crate::folding::Corpus, crate::folding::FoldError> {
        crate::folding::Corpus::new(self.flows, self.weather, self.network)
    }
}

pub fn generate(config: &GenConfig) -> Result<SyntheticCorpus, SynthError> {
    config.validate()?;
    let network = generate_network(config.topology, config.stations, config.seed)?;
    let population = generate_population(&network, config);
    let weather = WeatherSeries::generate(config);
    let flows = generate_flows(&network, &population, &weather, config)?;
    Ok(SyntheticCorpus {
        config: config.clone(),
        network,
        population,
        weather,
        flows,
    })
}

/// Independent child seed for stream `index` of `seed` (splitmix64 finaliser).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws an entry minute from a normal truncated to the service day.
fn entry_minute(rng: &mut ChaCha8Rng, mean: f64, sd: f64, bounds: (f64, f64)) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    let normal = Normal::new(mean, sd).expect("finite spread");
    for _ in 0..64 {
        let m = normal.sample(rng);
        if m >= bounds.0 && m < bounds.1 {
            return m;
        }
    }
    mean
}

pub fn generate_flows(
    network: &NetworkSpec,
    population: &CommuterPopulation,
    weather: &WeatherSeries,
    config: &GenConfig,
) -> Result<Vec<FlowSeries>, SynthError> {
    config.validate()?;
    if network.station_count() != config.stations {
        return Err(SynthError::InvalidConfig(format!(
            "network has {} stations but config asks for {}",
            network.station_count(),
            config.stations
        )));
    }
    population.validate(config)?;
    let t = config.intervals_per_day;
    let s = config.stations;
    let bounds = config.day_bounds_minutes();
    let mut inflow = vec![vec![0.0; config.days * t]; s];
    let mut outflow = vec![vec![0.0; config.days * t]; s];
    let noise = (config.noise_level > 0.0).then(|| Poisson::new(config.noise_level).expect("positive mean"));

    for day in 0..config.days {
        let date = config.date_of_day(day);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, day as u64));
        let rain = weather.is_rain(date).unwrap_or(false);
        let mut scale = if is_weekend(date) { config.weekend_activity_factor } else { 1.0 };
        if rain {
            scale *= weather.rain_multiplier;
        }
        let base = day * t;
        for c in &population.commuters {
            if !rng.random_bool((c.weekday_activity * scale).clamp(0.0, 1.0)) {
                continue;
            }
            for (from, to, mean, sd) in [
                (c.home, c.work, c.am_entry_mean, c.am_entry_sd),
                (c.work, c.home, c.pm_entry_mean, c.pm_entry_sd),
            ] {
                let enter = entry_minute(&mut rng, mean, sd, bounds);
                inflow[from][base + config.interval_of(enter)] += 1.0;
                outflow[to][base + config.interval_of(enter + c.travel_minutes)] += 1.0;
            }
        }
        if let Some(noise) = &noise {
            for st in 0..s {
                for i in 0..t {
                    inflow[st][base + i] += noise.sample(&mut rng);
                    outflow[st][base + i] += noise.sample(&mut rng);
                }
            }
        }
    }

    inflow
        .into_iter()
        .zip(outflow)
        .enumerate()
        .map(|(st, (i, o))| {
            FlowSeries::new(station_label(st), config.start_date, t, i, o)
                .map_err(|e| SynthError::InvalidConfig(e.to_string()))
        })
        .collect()
}

/// Stable textual id for generated station `index`.
pub fn station_label(index: usize) -> String {
    format!("S{index:03}")
}

/// Shuffled copy of `0..n`, handy for permutation tests.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

/// Day-to-day coefficient of variation of one station's inflow, for the
/// whole block `[first, first + width)` and for each interval in it, over the
/// days selected by `include_day`.
pub fn block_variation(
    series: &FlowSeries,
    first: usize,
    width: usize,
    include_day: impl Fn(usize) -> bool,
) -> (f64, Vec<f64>) {
    let t = series.intervals_per_day;
    let days: Vec<usize> = (0..series.days()).filter(|&d| include_day(d)).collect();
    let cv = |xs: &[f64]| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        var.sqrt() / mean
    };
    let block: Vec<f64> = days
        .iter()
        .map(|&d| series.inflow[d * t + first..d * t + first + width].iter().sum())
        .collect();
    let per_interval = (0..width)
        .map(|k| {
            let xs: Vec<f64> = days.iter().map(|&d| series.inflow[d * t + first + k]).collect();
            cv(&xs)
        })
        .collect();
    (cv(&block), per_interval)
}
