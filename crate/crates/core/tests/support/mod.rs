//! Measurement suites shared by the integration tests and the acceptance
//! target. Each suite returns what it measured; callers decide pass or fail.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mpstn::model::{ModelConfig, Mpstn, NormalizedAdjacency, Variant};
use mpstn::reference;
use mpstn::synthgen::NetworkSpec;
use mpstn::tensor::gradcheck::{check_gradients, relative_error};
use mpstn::tensor::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
/// One-sided slope disagreement that marks a straddled kink.
pub const KINK_THRESHOLD: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Uniform values kept at least `gap` away from zero.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(gap..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Reduces any output to a scalar through a fixed random linear map, so
/// every output element receives a distinct upstream gradient.
pub fn project(tape: &mut Tape, y: Var, seed: u64) -> mpstn::tensor::Result<Var> {
    let n = tape.value(y).numel();
    let mut r = rng(seed ^ 0x5eed);
    let w = tape.constant(uniform(&mut r, &[n, 1]));
    let flat = tape.reshape(y, &[1, n])?;
    let z = tape.affine(flat, w, None)?;
    Ok(tape.sum(z))
}

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: &'static str,
    pub instances: usize,
    /// Largest error seen over all instances.
    pub max_error: f64,
    /// Where the largest error occurred.
    pub worst: String,
    /// Coordinates compared (forward-graph suite only).
    pub coordinates: usize,
    /// Coordinates redrawn because the probe interval straddled a kink.
    pub kinks: usize,
}

impl SuiteResult {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            instances: 0,
            max_error: 0.0,
            worst: String::new(),
            coordinates: 0,
            kinks: 0,
        }
    }

    fn record(&mut self, err: f64) {
        self.record_at(err, String::new);
    }

    fn record_at(&mut self, err: f64, at: impl FnOnce() -> String) {
        self.instances += 1;
        if err > self.max_error || err.is_nan() {
            self.max_error = err;
            self.worst = format!("instance {}{}", self.instances - 1, at());
        }
    }
}

fn check(inputs: &[Tensor], seed: u64, f: impl Fn(&mut Tape, &[Var]) -> mpstn::tensor::Result<Var>) -> f64 {
    check_gradients(inputs, f, FD_STEP, None, seed)
        .expect("gradient check runs")
        .max_rel_error
}

/// Finite-difference check of every differentiable tape operator.
pub fn op_gradient_suite(instances: usize) -> Vec<SuiteResult> {
    let mut results = Vec::new();

    let mut r = SuiteResult::new("conv2d");
    for i in 0..instances as u64 {
        let mut g = rng(100 + i);
        let cin = g.random_range(1..=3);
        let cout = g.random_range(1..=3);
        let h = g.random_range(3..=6);
        let w = g.random_range(3..=6);
        let k = g.random_range(1..=3);
        let padding = g.random_range(0..=1);
        let stride = g.random_range(1..=2);
        let inputs = [
            uniform(&mut g, &[cin, h, w]),
            uniform(&mut g, &[cout, cin, k, k]),
            uniform(&mut g, &[cout]),
        ];
        r.record(check(&inputs, i, |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], padding, stride)?;
            project(t, y, i)
        }));
    }
    results.push(r);

    let mut r = SuiteResult::new("maxpool2d");
    for i in 0..instances as u64 {
        let mut g = rng(200 + i);
        let c = g.random_range(1..=2);
        let h = g.random_range(2..=6);
        let w = g.random_range(2..=6);
        let stride = g.random_range(1..=2);
        let inputs = [uniform(&mut g, &[c, h, w])];
        r.record(check(&inputs, i, |t, v| {
            let y = t.maxpool2d(v[0], 2, stride)?;
            project(t, y, i)
        }));
    }
    results.push(r);

    let mut r = SuiteResult::new("affine");
    for i in 0..instances as u64 {
        let mut g = rng(300 + i);
        let rows = g.random_range(1..=4);
        let din = g.random_range(1..=5);
        let dout = g.random_range(1..=5);
        let with_bias = i % 2 == 0;
        let inputs = [
            uniform(&mut g, &[rows, din]),
            uniform(&mut g, &[din, dout]),
            uniform(&mut g, &[dout]),
        ];
        r.record(check(&inputs, i, |t, v| {
            let y = t.affine(v[0], v[1], with_bias.then_some(v[2]))?;
            project(t, y, i)
        }));
    }
    results.push(r);

    let mut r = SuiteResult::new("matmul");
    for i in 0..instances as u64 {
        let mut g = rng(400 + i);
        let (n, k, m) = (g.random_range(1..=4), g.random_range(1..=4), g.random_range(1..=4));
        let inputs = [uniform(&mut g, &[n, k]), uniform(&mut g, &[k, m])];
        r.record(check(&inputs, i, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y, i)
        }));
    }
    results.push(r);

    let mut r = SuiteResult::new("aggregate");
    for i in 0..instances as u64 {
        let mut g = rng(500 + i);
        let s = g.random_range(1..=5);
        let d = g.random_range(1..=4);
        let weights = Tensor::from_fn(&[s, s], |_| if g.random_bool(0.6) { g.random_range(0.0..1.0) } else { 0.0 });
        let inputs = [uniform(&mut g, &[s, d])];
        r.record(check(&inputs, i, |t, v| {
            let y = t.aggregate(&weights, v[0])?;
            project(t, y, i)
        }));
    }
    results.push(r);

    let mut r = SuiteResult::new("relu");
    for i in 0..instances as u64 {
        let mut g = rng(600 + i);
        let n = g.random_range(1..=12);
        let inputs = [away_from_zero(&mut g, &[n], 1e-3)];
        r.record(check(&inputs, i, |t, v| {
            let y = t.relu(v[0]);
            project(t, y, i)
        }));
    }
    results.push(r);

    let mut r = SuiteResult::new("concat");
    for i in 0..instances as u64 {
        let mut g = rng(700 + i);
        let axis = g.random_range(0..=1);
        let parts = g.random_range(1..=3);
        let fixed = g.random_range(1..=3);
        let inputs: Vec<Tensor> = (0..parts)
            .map(|_| {
                let varying = g.random_range(1..=3);
                let shape = if axis == 0 { [varying, fixed] } else { [fixed, varying] };
                uniform(&mut g, &shape)
            })
            .collect();
        r.record(check(&inputs, i, |t, v| {
            let y = t.concat(v, axis)?;
            project(t, y, i)
        }));
    }
    results.push(r);

    let mut r = SuiteResult::new("reshape");
    for i in 0..instances as u64 {
        let mut g = rng(800 + i);
        let (a, b) = (g.random_range(1..=4), g.random_range(1..=4));
        let inputs = [uniform(&mut g, &[a, b, 2])];
        r.record(check(&inputs, i, |t, v| {
            let y = t.reshape(v[0], &[2 * b, a])?;
            project(t, y, i)
        }));
    }
    results.push(r);

    let mut r = SuiteResult::new("sum");
    for i in 0..instances as u64 {
        let mut g = rng(900 + i);
        let n = g.random_range(1..=10);
        let inputs = [uniform(&mut g, &[n])];
        r.record(check(&inputs, i, |t, v| {
            let y = t.sum(v[0]);
            project(t, y, i)
        }));
    }
    results.push(r);

    let mut r = SuiteResult::new("select_row");
    for i in 0..instances as u64 {
        let mut g = rng(1000 + i);
        let rows = g.random_range(1..=4);
        let d = g.random_range(1..=4);
        let row = g.random_range(0..rows);
        let inputs = [uniform(&mut g, &[rows, d])];
        r.record(check(&inputs, i, |t, v| {
            let y = t.select_row(v[0], row)?;
            project(t, y, i)
        }));
    }
    results.push(r);

    let mut r = SuiteResult::new("l1_loss");
    for i in 0..instances as u64 {
        let mut g = rng(1100 + i);
        let n = g.random_range(1..=10);
        let target = uniform(&mut g, &[n]);
        let gap = away_from_zero(&mut g, &[n], 1e-2);
        let pred = Tensor::from_fn(&[n], |k| target.data()[k] + gap.data()[k]);
        r.record(check(&[pred, target], i, |t, v| t.l1_loss(v[0], v[1])));
    }
    results.push(r);

    results
}

fn path_network(s: usize) -> NetworkSpec {
    NetworkSpec::new(s, (1..s).map(|i| (i - 1, i))).unwrap()
}

/// Finite-difference check of the full network: analytic parameter
/// gradients of the L1 training loss against central differences on a
/// random subset of coordinates of every parameter tensor. Coordinates
/// whose probe interval contains a kink of a piecewise-linear op are
/// counted in `kinks` and replaced.
pub fn forward_gradient_suite(instances: usize, coords_per_tensor: usize) -> SuiteResult {
    let mut result = SuiteResult::new("forward graph");
    for i in 0..instances as u64 {
        let mut g = rng(5000 + i);
        let s = g.random_range(2..=4);
        let config = ModelConfig {
            periods: 4,
            intervals_per_day: g.random_range(4..=8),
            stations: s,
            gnn_layers: [1, 2, 4][i as usize % 3],
            feature_dim: 64,
            weather_embed_dim: [2, 4][i as usize % 2],
            horizons: 4,
            variant: Variant::ALL[i as usize % 3],
        };
        let adjacency = NormalizedAdjacency::from_network(&path_network(s));
        let mut model = Mpstn::new(config.clone(), adjacency, 7 + i).unwrap();
        // nonzero biases so no unit sits exactly at the rectifier kink
        for (name, t) in model.params.iter_mut() {
            if name.ends_with(".bias") {
                t.data_mut().iter_mut().for_each(|v| *v = g.random_range(-0.1..0.1));
            }
        }
        let window = uniform(&mut g, &[s, 2, config.periods, config.intervals_per_day]);
        let rain = (i % 2) as u8;
        // targets a margin away from the predictions keep the L1 sign fixed
        let pred = model.predict(&window, rain).unwrap();
        let gap = away_from_zero(&mut g, pred.shape(), 0.1);
        let targets = Tensor::from_fn(pred.shape(), |k| pred.data()[k] + gap.data()[k]);
        let (_, grads) = model.loss_and_grads(&window, rain, &targets).unwrap();

        let mut worst: f64 = 0.0;
        let mut worst_at = String::new();
        let names: Vec<String> = model.params.names().map(str::to_string).collect();
        for name in names {
            let n = model.params.get(&name).unwrap().numel();
            let mut probed = 0;
            let mut attempts = 0;
            while probed < coords_per_tensor.min(n) && attempts < 4 * coords_per_tensor {
                attempts += 1;
                let k = g.random_range(0..n);
                let x = model.params.get(&name).unwrap().data()[k];
                let mut loss_at = |v: f64| {
                    model.params.get_mut(&name).unwrap().data_mut()[k] = v;
                    model.loss(&window, rain, &targets).unwrap()
                };
                let (up, down, base) = (loss_at(x + FD_STEP), loss_at(x - FD_STEP), loss_at(x));
                // The loss is piecewise linear in any single parameter, so
                // one-sided slopes only disagree when a kink lies inside
                // the probe interval. Such coordinates are redrawn.
                if relative_error((up - base) / FD_STEP, (base - down) / FD_STEP) > KINK_THRESHOLD {
                    result.kinks += 1;
                    continue;
                }
                probed += 1;
                let numeric = (up - down) / (2.0 * FD_STEP);
                let analytic = grads.get(&name).unwrap().data()[k];
                let err = relative_error(analytic, numeric);
                if err > worst || err.is_nan() {
                    worst = err;
                    worst_at = format!(" {name}[{k}] analytic {analytic} numeric {numeric}");
                }
                result.coordinates += 1;
            }
        }
        result.record_at(worst, || worst_at);
    }
    result
}

/// Fast operators against the nested-loop references; returns the largest
/// absolute difference per operator.
pub fn oracle_suite(instances: usize) -> Vec<SuiteResult> {
    let mut conv = SuiteResult::new("conv2d");
    for i in 0..instances as u64 {
        let mut g = rng(20_000 + i);
        let cin = g.random_range(1..=4);
        let cout = g.random_range(1..=4);
        let h = g.random_range(1..=8);
        let w = g.random_range(1..=8);
        let padding = g.random_range(0..=1);
        let stride = g.random_range(1..=2);
        let kh = g.random_range(1..=3usize.min(h + 2 * padding));
        let kw = g.random_range(1..=3usize.min(w + 2 * padding));
        let x = uniform(&mut g, &[cin, h, w]);
        let k = uniform(&mut g, &[cout, cin, kh, kw]);
        let b = uniform(&mut g, &[cout]);
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.constant(x.clone()), tape.constant(k.clone()), tape.constant(b.clone()));
        let y = tape.conv2d(xv, kv, bv, padding, stride).unwrap();
        let (expected, dims) = reference::conv2d(x.data(), (cin, h, w), k.data(), (cout, kh, kw), b.data(), padding, stride);
        assert_eq!(tape.value(y).shape(), [dims.0, dims.1, dims.2]);
        conv.record(max_abs_diff(tape.value(y).data(), &expected));
    }

    let mut pool = SuiteResult::new("maxpool2d");
    for i in 0..instances as u64 {
        let mut g = rng(30_000 + i);
        let c = g.random_range(1..=4);
        let h = g.random_range(2..=8);
        let w = g.random_range(2..=8);
        let window = g.random_range(1..=2usize.min(h).min(w));
        let stride = g.random_range(1..=2);
        let x = uniform(&mut g, &[c, h, w]);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = tape.maxpool2d(xv, window, stride).unwrap();
        let (expected, dims) = reference::maxpool2d(x.data(), (c, h, w), window, stride);
        assert_eq!(tape.value(y).shape(), [dims.0, dims.1, dims.2]);
        pool.record(max_abs_diff(tape.value(y).data(), &expected));
    }

    let mut gnn = SuiteResult::new("gnn_propagate");
    for i in 0..instances as u64 {
        let mut g = rng(40_000 + i);
        let s = g.random_range(1..=6);
        let d = g.random_range(1..=5);
        let f = g.random_range(1..=5);
        let mut edges = Vec::new();
        for j in 1..s {
            edges.push((g.random_range(0..j), j));
        }
        for _ in 0..s {
            let (a, b) = (g.random_range(0..s), g.random_range(0..s));
            if a != b {
                edges.push((a, b));
            }
        }
        let net = NetworkSpec::new(s, edges).unwrap();
        let adj = NormalizedAdjacency::from_network(&net);
        let x = uniform(&mut g, &[s, d]);
        let w = uniform(&mut g, &[d, f]);
        let mut tape = Tape::new();
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
        let y = mpstn::model::gnn_propagate(&mut tape, xv, &adj, &[wv], 1).unwrap();
        let a_ref = reference::normalized_adjacency(&net.adjacency(), s);
        let expected = reference::gnn_layer(&a_ref, x.data(), w.data(), s, d, f);
        gnn.record(max_abs_diff(tape.value(y).data(), &expected).max(max_abs_diff(adj.as_tensor().data(), &a_ref)));
    }
    vec![conv, pool, gnn]
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Toy corpus whose values encode their own timestamp: station `s` holds
/// `1000 * s + index` as inflow and `1000 * s + index + 0.5` as outflow.
pub fn timestamp_corpus(days: usize, t: usize, stations: usize) -> mpstn::folding::Corpus {
    use mpstn::folding::{Corpus, FlowSeries};
    use mpstn::synthgen::WeatherSeries;
    let start = chrono::NaiveDate::from_ymd_opt(2016, 7, 1).unwrap();
    let len = days * t;
    let series = (0..stations)
        .map(|s| {
            let base = 1000.0 * s as f64;
            let inflow = (0..len).map(|i| base + i as f64).collect();
            let outflow = (0..len).map(|i| base + i as f64 + 0.5).collect();
            FlowSeries::new(format!("T{s}"), start, t, inflow, outflow).unwrap()
        })
        .collect();
    let rain = (0..days).map(|d| (start + chrono::Days::new(d as u64), d % 3 == 0)).collect();
    Corpus::new(series, WeatherSeries::new(rain, 0.8), path_network(stations)).unwrap()
}

#[derive(Clone, Debug, Default)]
pub struct FoldingAudit {
    pub samples: usize,
    pub roundtrips: usize,
    /// Window values stamped at or after the prediction time.
    pub leaks: usize,
    /// Any disagreement with the expected layout or coverage.
    pub mismatches: usize,
}

/// Exhaustively folds every feasible prediction time of a timestamped toy
/// corpus and checks the layout along with the absence of look-ahead.
pub fn folding_audit(days: usize, t: usize, periods: usize, horizons: usize) -> FoldingAudit {
    use mpstn::folding::{build_dataset, fold_window, unfold, SplitSpec};
    use std::sync::Arc;
    let stations = 2;
    let corpus = Arc::new(timestamp_corpus(days, t, stations));
    let mut audit = FoldingAudit::default();
    let span = periods * t;

    for idx in 0..corpus.len() {
        let at = corpus.time_at(idx);
        for st in &corpus.stations {
            match fold_window(st, at, periods) {
                Ok(w) => {
                    audit.roundtrips += 1;
                    let (a, b) = unfold(&w);
                    if a != st.inflow[idx - span..idx] || b != st.outflow[idx - span..idx] {
                        audit.mismatches += 1;
                    }
                }
                Err(_) if idx < span => {}
                Err(_) => audit.mismatches += 1,
            }
        }
    }

    let train_days = days - 2 * (days / 5);
    let split = SplitSpec::consecutive(corpus.start_date(), train_days, days / 5, days / 5);
    let ds = build_dataset(Arc::clone(&corpus), &split, periods, horizons, 1).unwrap();
    let mut seen = Vec::new();
    for set in [&ds.train, &ds.validation, &ds.test] {
        for s in set.iter() {
            audit.samples += 1;
            seen.push(s.time_index);
            let w = s.window.data();
            for (st, block) in w.chunks(2 * span).enumerate() {
                let base = 1000.0 * st as f64;
                for (c, chunk) in block.chunks(span).enumerate() {
                    for (k, v) in chunk.iter().enumerate() {
                        let stamp = (v - base - 0.5 * c as f64) as usize;
                        if stamp >= s.time_index {
                            audit.leaks += 1;
                        }
                        // row p, column j sits at offset p * T + j from the window start
                        if stamp != s.time_index - span + k {
                            audit.mismatches += 1;
                        }
                    }
                }
            }
            let targets_ok = (0..stations).all(|st| {
                (0..horizons).all(|h| s.targets.at(&[st, 0, h]) == 1000.0 * st as f64 + (s.time_index + h) as f64)
            });
            if !targets_ok {
                audit.mismatches += 1;
            }
        }
    }
    let expected: Vec<usize> = (span..=corpus.len() - horizons).collect();
    seen.sort_unstable();
    if seen != expected {
        audit.mismatches += 1;
    }
    audit
}

/// Hand-computed metric cases; returns the largest deviation.
pub fn metric_cases() -> f64 {
    use mpstn::trainer::{mae, rmse};
    let cases: [(&[f64], &[f64], f64, f64); 4] = [
        (&[1.0, 2.0], &[2.0, 4.0], 1.5, 2.5f64.sqrt()),
        (&[0.0; 4], &[1.0, -1.0, 3.0, -3.0], 2.0, 5f64.sqrt()),
        (&[3.0, 3.0, 3.0], &[3.0, 3.0, 3.0], 0.0, 0.0),
        (&[10.0], &[7.0], 3.0, 3.0),
    ];
    cases
        .iter()
        .map(|(p, a, m, r)| (mae(p, a).unwrap() - m).abs().max((rmse(p, a).unwrap() - r).abs()))
        .fold(0.0, f64::max)
}

/// Count of random vector pairs for which RMSE < MAE.
pub fn rmse_below_mae(trials: usize) -> usize {
    use mpstn::trainer::{mae, rmse};
    let mut g = rng(77);
    (0..trials)
        .filter(|_| {
            let n = g.random_range(1..50);
            let p: Vec<f64> = (0..n).map(|_| g.random_range(-100.0..100.0)).collect();
            let a: Vec<f64> = (0..n).map(|_| g.random_range(-100.0..100.0)).collect();
            rmse(&p, &a).unwrap() < mae(&p, &a).unwrap()
        })
        .count()
}

/// Day-to-day coefficient of variation at a station fed by `commuters`
/// morning commuters centred on 08:30 with a 10 minute spread. Returns the
/// CV of the 08:00-09:00 sum and of each quarter hour, over weekdays of a
/// `days`-day run.
pub fn inter_period_stability(days: usize, commuters: usize) -> (f64, Vec<f64>) {
    use mpstn::synthgen::*;
    let config = GenConfig {
        days,
        stations: 3,
        commuters,
        rain_probability: 0.0,
        topology: Topology::Line,
        ..GenConfig::default()
    };
    let network = generate_network(config.topology, config.stations, config.seed).unwrap();
    let mut population = generate_population(&network, &config);
    for c in &mut population.commuters {
        c.home = 0;
        c.work = 2;
        c.am_entry_mean = 510.0;
        c.am_entry_sd = 10.0;
    }
    let weather = WeatherSeries::generate(&config);
    let flows = generate_flows(&network, &population, &weather, &config).unwrap();
    let first = ((480 - config.day_start_minute) / config.interval_minutes) as usize;
    let width = (60 / config.interval_minutes) as usize;
    block_variation(&flows[0], first, width, |d| !is_weekend(config.date_of_day(d)))
}

/// Largest absolute difference between the forward pass on permuted
/// stations and the permuted forward pass; zero means exact equivariance.
pub fn equivariance_gap(variant: Variant, seed: u64) -> f64 {
    use mpstn::synthgen::{generate_network, permutation, Topology};
    let s = 4;
    let config = ModelConfig {
        periods: 4,
        intervals_per_day: 8,
        stations: s,
        variant,
        ..ModelConfig::default()
    };
    let net = generate_network(Topology::Tree, s, seed).unwrap();
    let adjacency = NormalizedAdjacency::from_network(&net);
    let model = Mpstn::new(config.clone(), adjacency.clone(), seed).unwrap();
    let mut g = rng(seed);
    let window = uniform(&mut g, &[s, 2, config.periods, config.intervals_per_day]);
    let out = model.predict(&window, 1).unwrap();

    let perm = permutation(s, seed + 1);
    let per_station = window.numel() / s;
    let mut pw = Vec::with_capacity(window.numel());
    for &p in &perm {
        pw.extend_from_slice(&window.data()[p * per_station..(p + 1) * per_station]);
    }
    let pw = Tensor::new(window.shape().to_vec(), pw).unwrap();
    let permuted = Mpstn::from_params(config, model.params.clone(), adjacency.permuted(&perm)).unwrap();
    let pout = permuted.predict(&pw, 1).unwrap();
    let row = out.numel() / s;
    perm.iter()
        .enumerate()
        .map(|(i, &p)| max_abs_diff(&pout.data()[i * row..(i + 1) * row], &out.data()[p * row..(p + 1) * row]))
        .fold(0.0, f64::max)
}

/// A small generated corpus split 60/20/20 by days.
pub fn small_datasets(seed: u64, days: usize, t: usize, stations: usize, periods: usize, stride: usize) -> mpstn::folding::Datasets {
    use mpstn::folding::{build_dataset, SplitSpec};
    use mpstn::synthgen::{generate, GenConfig, Topology};
    use std::sync::Arc;
    let gen = GenConfig {
        seed,
        days,
        intervals_per_day: t,
        stations,
        commuters: 60 * stations,
        topology: Topology::Line,
        // t intervals spanning the whole day so both commutes fit
        interval_minutes: (24 * 60 / t) as u32,
        day_start_minute: 0,
        ..GenConfig::default()
    };
    let corpus = Arc::new(generate(&gen).unwrap().into_corpus().unwrap());
    let val = days / 5;
    let split = SplitSpec::consecutive(gen.start_date, days - 2 * val, val, val);
    build_dataset(corpus, &split, periods, 4, stride).unwrap()
}

/// Smallest grid configuration sized for `datasets`.
pub fn small_model(datasets: &mpstn::folding::Datasets) -> ModelConfig {
    let corpus = datasets.train.corpus();
    ModelConfig {
        periods: datasets.train.periods(),
        intervals_per_day: corpus.intervals_per_day(),
        stations: corpus.station_count(),
        ..ModelConfig::default()
    }
}
