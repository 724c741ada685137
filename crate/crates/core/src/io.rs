//! Reading and writing the CSV files that make up a corpus.
//!
//! All files carry a header row, use UTF-8 and LF line endings. Stations are
//! numbered in order of first appearance in `flows.csv`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Deserialize;
use thiserror::Error;

use crate::folding::{Corpus, FlowSeries, FoldError};
use crate::synthgen::{NetworkSpec, SynthError, WeatherSeries};

pub const FLOWS_FILE: &str = "flows.csv";
pub const WEATHER_FILE: &str = "weather.csv";
pub const EDGES_FILE: &str = "edges.csv";

pub const FLOWS_HEADER: [&str; 5] = ["station_id", "date", "interval_index", "inflow", "outflow"];
pub const WEATHER_HEADER: [&str; 2] = ["date", "rain"];
pub const EDGES_HEADER: [&str; 2] = ["station_a", "station_b"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing data file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: expected header `{expected}`, found `{found}`", path.display())]
    Header { path: PathBuf, expected: String, found: String },
    #[error("{}:{line}: {reason}", path.display())]
    Row { path: PathBuf, line: u64, reason: String },
    #[error("{}: {reason}", path.display())]
    Content { path: PathBuf, reason: String },
    #[error(transparent)]
    Network(#[from] SynthError),
    #[error(transparent)]
    Fold(#[from] FoldError),
}

/// Writes through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

/// CSV writer with LF record terminators.
pub fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// Integral counts are written without a fractional part.
pub fn format_count(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn open_reader(path: &Path, expected: &[&str]) -> Result<csv::Reader<File>, DataError> {
    let file = File::open(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            DataError::MissingFile(path.to_path_buf())
        } else {
            DataError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let found = reader
        .headers()
        .map_err(|e| DataError::Content {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    let expected = expected.join(",");
    if found != expected {
        return Err(DataError::Header {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(reader)
}

fn rows<T: for<'de> Deserialize<'de>>(
    path: &Path,
    expected: &[&str],
) -> Result<Vec<(u64, T)>, DataError> {
    let mut reader = open_reader(path, expected)?;
    let mut out = Vec::new();
    for rec in reader.deserialize::<T>() {
        match rec {
            Ok(row) => out.push((out.len() as u64 + 2, row)),
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                return Err(DataError::Row {
                    path: path.to_path_buf(),
                    line,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct FlowRow {
    station_id: String,
    date: NaiveDate,
    interval_index: usize,
    inflow: f64,
    outflow: f64,
}

#[derive(Deserialize)]
struct WeatherRow {
    date: NaiveDate,
    rain: u8,
}

#[derive(Deserialize)]
struct EdgeRow {
    station_a: String,
    station_b: String,
}

/// Reads per-station series; every station must cover the same dates and
/// every interval of each date exactly once.
pub fn read_flows(path: &Path) -> Result<Vec<FlowSeries>, DataError> {
    let rows: Vec<(u64, FlowRow)> = rows(path, &FLOWS_HEADER)?;
    let content = |reason: String| DataError::Content {
        path: path.to_path_buf(),
        reason,
    };
    if rows.is_empty() {
        return Err(content("no flow rows".into()));
    }
    let t = rows.iter().map(|(_, r)| r.interval_index).max().unwrap() + 1;
    let first = rows.iter().map(|(_, r)| r.date).min().unwrap();
    let last = rows.iter().map(|(_, r)| r.date).max().unwrap();
    let days = (last - first).num_days() as usize + 1;

    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut values: Vec<(Vec<f64>, Vec<f64>, Vec<bool>)> = Vec::new();
    for (line, r) in &rows {
        let bad = |reason: String| DataError::Row {
            path: path.to_path_buf(),
            line: *line,
            reason,
        };
        if !(r.inflow.is_finite() && r.outflow.is_finite() && r.inflow >= 0.0 && r.outflow >= 0.0) {
            return Err(bad("flows must be finite and non-negative".into()));
        }
        let st = *index.entry(r.station_id.clone()).or_insert_with(|| {
            order.push(r.station_id.clone());
            values.push((vec![0.0; days * t], vec![0.0; days * t], vec![false; days * t]));
            order.len() - 1
        });
        let k = (r.date - first).num_days() as usize * t + r.interval_index;
        let (inflow, outflow, seen) = &mut values[st];
        if seen[k] {
            return Err(bad(format!(
                "duplicate row for station `{}` on {} interval {}",
                r.station_id, r.date, r.interval_index
            )));
        }
        seen[k] = true;
        inflow[k] = r.inflow;
        outflow[k] = r.outflow;
    }
    order
        .into_iter()
        .zip(values)
        .map(|(id, (inflow, outflow, seen))| {
            if let Some(k) = seen.iter().position(|s| !s) {
                let date = first + chrono::Days::new((k / t) as u64);
                return Err(content(format!(
                    "station `{id}` has no row for {date} interval {}",
                    k % t
                )));
            }
            FlowSeries::new(id, first, t, inflow, outflow).map_err(DataError::from)
        })
        .collect()
}

pub fn read_weather(path: &Path, rain_multiplier: f64) -> Result<WeatherSeries, DataError> {
    let mut rain = BTreeMap::new();
    for (line, r) in rows::<WeatherRow>(path, &WEATHER_HEADER)? {
        let bad = |reason: String| DataError::Row {
            path: path.to_path_buf(),
            line,
            reason,
        };
        if r.rain > 1 {
            return Err(bad(format!("rain must be 0 or 1, got {}", r.rain)));
        }
        if rain.insert(r.date, r.rain == 1).is_some() {
            return Err(bad(format!("duplicate date {}", r.date)));
        }
    }
    Ok(WeatherSeries::new(rain, rain_multiplier))
}

/// Reads undirected edges between station ids from `stations`.
pub fn read_edges(path: &Path, stations: &[String]) -> Result<NetworkSpec, DataError> {
    let lookup: HashMap<&str, usize> = stations.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut edges = Vec::new();
    for (line, r) in rows::<EdgeRow>(path, &EDGES_HEADER)? {
        let find = |id: &str| {
            lookup.get(id).copied().ok_or_else(|| DataError::Row {
                path: path.to_path_buf(),
                line,
                reason: format!("unknown station `{id}`"),
            })
        };
        edges.push((find(&r.station_a)?, find(&r.station_b)?));
    }
    Ok(NetworkSpec::new(stations.len(), edges)?)
}

/// Loads the three corpus files from `dir`.
pub fn load_corpus(dir: &Path) -> Result<Corpus, DataError> {
    let paths = [FLOWS_FILE, WEATHER_FILE, EDGES_FILE].map(|f| dir.join(f));
    if let Some(missing) = paths.iter().find(|p| !p.exists()) {
        return Err(DataError::MissingFile(missing.clone()));
    }
    let flows = read_flows(&paths[0])?;
    // the multiplier only matters to the generator
    let weather = read_weather(&paths[1], 1.0)?;
    let ids: Vec<String> = flows.iter().map(|f| f.station_id.clone()).collect();
    let network = read_edges(&paths[2], &ids)?;
    Ok(Corpus::new(flows, weather, network)?)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> DataError + '_ {
    move |e| DataError::Content {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

pub fn write_flows(path: &Path, flows: &[FlowSeries]) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv_writer(std::io::BufWriter::new(file));
    let err = csv_err(path);
    w.write_record(FLOWS_HEADER).map_err(&err)?;
    for series in flows {
        let t = series.intervals_per_day;
        for k in 0..series.len() {
            let date = series.start_date + chrono::Days::new((k / t) as u64);
            w.write_record([
                series.station_id.clone(),
                date.to_string(),
                (k % t).to_string(),
                format_count(series.inflow[k]),
                format_count(series.outflow[k]),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn write_weather(path: &Path, weather: &WeatherSeries) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv_writer(file);
    let err = csv_err(path);
    w.write_record(WEATHER_HEADER).map_err(&err)?;
    for (date, rain) in &weather.rain {
        w.write_record([date.to_string(), (*rain as u8).to_string()]).map_err(&err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_edges(path: &Path, network: &NetworkSpec, station_ids: &[String]) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv_writer(file);
    let err = csv_err(path);
    w.write_record(EDGES_HEADER).map_err(&err)?;
    for &(a, b) in network.edges() {
        w.write_record([&station_ids[a], &station_ids[b]]).map_err(&err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes the three corpus files into `dir` and returns their paths.
pub fn save_corpus(
    dir: &Path,
    flows: &[FlowSeries],
    weather: &WeatherSeries,
    network: &NetworkSpec,
) -> Result<[PathBuf; 3], DataError> {
    let paths = [FLOWS_FILE, WEATHER_FILE, EDGES_FILE].map(|f| dir.join(f));
    let ids: Vec<String> = flows.iter().map(|f| f.station_id.clone()).collect();
    write_flows(&paths[0], flows)?;
    write_weather(&paths[1], weather)?;
    write_edges(&paths[2], network, &ids)?;
    Ok(paths)
}
