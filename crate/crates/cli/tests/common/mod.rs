//! Helpers for driving the `mpstn` binary from tests.
#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

pub fn mpstn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpstn"))
        .args(args)
        .env("MPSTN_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn mpstn_path(args: &[&str], paths: &[(&str, &Path)]) -> Output {
    let mut all: Vec<String> = args.iter().map(|s| s.to_string()).collect();
    for (flag, p) in paths {
        all.push(flag.to_string());
        all.push(p.display().to_string());
    }
    let refs: Vec<&str> = all.iter().map(String::as_str).collect();
    mpstn(&refs)
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn write_json(path: &Path, value: &Value) {
    std::fs::write(path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
}

/// Four stations, 14 days of 16 ninety-minute intervals.
pub fn tiny_gen() -> Value {
    json!({
        "seed": 5,
        "days": 14,
        "intervals_per_day": 16,
        "stations": 4,
        "commuters": 240,
        "interval_minutes": 90,
        "day_start_minute": 0,
        "topology": "line"
    })
}

/// Smallest model on the tiny corpus, trained for `epochs`.
pub fn tiny_experiment(epochs: usize) -> Value {
    json!({
        "data": { "train_days": 8, "validation_days": 3, "test_days": 3, "train_stride": 2 },
        "model": { "periods": 4 },
        "train": { "epochs": epochs, "batch_size": 4, "seed": 3 }
    })
}

pub fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect()
}

pub fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}
