//! The forecaster network.
//!
//! Per station: folded window → conv(3×3, 32) → relu → maxpool 2 →
//! conv(3×3, 64) → relu → maxpool 2 → flatten → affine → relu, giving a
//! `feature_dim` vector. The rain embedding of the predicted day is appended,
//! stations exchange messages over the normalised adjacency, and the message
//! passing output is concatenated with the CNN features before a two-layer
//! head emits `2 * horizons` values per station (inflow steps, then outflow).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::folding::CHANNELS;
use crate::synthgen::NetworkSpec;
use crate::tensor::{ParamSet, Tape, Tensor, TensorError, Var};

pub const GNN_LAYER_CHOICES: [usize; 3] = [1, 2, 4];
pub const BATCH_SIZE_CHOICES: [usize; 3] = [4, 8, 16];
pub const WEATHER_EMBED_CHOICES: [usize; 2] = [2, 4];
pub const FEATURE_DIM_CHOICES: [usize; 3] = [64, 128, 256];

pub const CONV1_KERNELS: usize = 32;
pub const CONV2_KERNELS: usize = 64;
pub const KERNEL_SIZE: usize = 3;
pub const CONV_PADDING: usize = 1;
pub const POOL: usize = 2;
/// Smallest folded height/width that survives two 2×2 poolings.
pub const MIN_WINDOW_DIM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: TensorError,
    },
    #[error("rain flag must be 0 or 1, got {0}")]
    InvalidRainFlag(u8),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("expected {expected} GNN weight matrices, got {got}")]
    LayerCount { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, ModelError>;

fn at_stage(stage: &'static str) -> impl FnOnce(TensorError) -> ModelError {
    move |source| ModelError::Stage { stage, source }
}

/// Which parts of the full model are present.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    /// Message passing replaced by a per-station affine layer of the same width.
    NoGnn,
    /// No rain embedding.
    NoWeather,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoGnn, Variant::NoWeather];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGnn => "no-gnn",
            Variant::NoWeather => "no-weather",
        }
    }

    pub fn uses_weather(self) -> bool {
        self != Variant::NoWeather
    }

    pub fn uses_gnn(self) -> bool {
        self != Variant::NoGnn
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub periods: usize,
    pub intervals_per_day: usize,
    pub stations: usize,
    pub gnn_layers: usize,
    pub feature_dim: usize,
    pub weather_embed_dim: usize,
    pub horizons: usize,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            periods: 14,
            intervals_per_day: 73,
            stations: 10,
            gnn_layers: 1,
            feature_dim: 64,
            weather_embed_dim: 2,
            horizons: 4,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ModelError::InvalidConfig(m));
        if !GNN_LAYER_CHOICES.contains(&self.gnn_layers) {
            return fail(format!("gnn_layers {} not in {GNN_LAYER_CHOICES:?}", self.gnn_layers));
        }
        if !FEATURE_DIM_CHOICES.contains(&self.feature_dim) {
            return fail(format!("feature_dim {} not in {FEATURE_DIM_CHOICES:?}", self.feature_dim));
        }
        if !WEATHER_EMBED_CHOICES.contains(&self.weather_embed_dim) {
            return fail(format!(
                "weather_embed_dim {} not in {WEATHER_EMBED_CHOICES:?}",
                self.weather_embed_dim
            ));
        }
        if self.periods < MIN_WINDOW_DIM || self.intervals_per_day < MIN_WINDOW_DIM {
            return fail(format!(
                "window {}x{} too small for two poolings; need at least {MIN_WINDOW_DIM}x{MIN_WINDOW_DIM}",
                self.periods, self.intervals_per_day
            ));
        }
        if self.stations == 0 || self.horizons == 0 {
            return fail("stations and horizons must be positive".into());
        }
        Ok(())
    }

    pub fn pooled_dims(&self) -> (usize, usize) {
        (self.periods / POOL / POOL, self.intervals_per_day / POOL / POOL)
    }

    /// Length of the flattened second pooling output.
    pub fn flatten_len(&self) -> usize {
        let (h, w) = self.pooled_dims();
        CONV2_KERNELS * h * w
    }

    pub fn outputs_per_station(&self) -> usize {
        CHANNELS * self.horizons
    }

    /// Width of the node features entering message passing.
    pub fn node_input_dim(&self) -> usize {
        if self.variant.uses_weather() {
            self.feature_dim + self.weather_embed_dim
        } else {
            self.feature_dim
        }
    }

    /// Named parameter shapes in initialisation order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let f = self.feature_dim;
        let k = KERNEL_SIZE;
        let mut shapes = vec![
            ("cnn.conv1.weight".to_string(), vec![CONV1_KERNELS, CHANNELS, k, k]),
            ("cnn.conv1.bias".to_string(), vec![CONV1_KERNELS]),
            ("cnn.conv2.weight".to_string(), vec![CONV2_KERNELS, CONV1_KERNELS, k, k]),
            ("cnn.conv2.bias".to_string(), vec![CONV2_KERNELS]),
            ("cnn.proj.weight".to_string(), vec![self.flatten_len(), f]),
            ("cnn.proj.bias".to_string(), vec![f]),
        ];
        if self.variant.uses_weather() {
            shapes.push(("weather.table".to_string(), vec![2, self.weather_embed_dim]));
        }
        if self.variant.uses_gnn() {
            for l in 0..self.gnn_layers {
                let din = if l == 0 { self.node_input_dim() } else { f };
                shapes.push((gnn_weight_name(l), vec![din, f]));
            }
        } else {
            shapes.push(("skip.weight".to_string(), vec![self.node_input_dim(), f]));
            shapes.push(("skip.bias".to_string(), vec![f]));
        }
        shapes.extend([
            ("head.fc1.weight".to_string(), vec![2 * f, f]),
            ("head.fc1.bias".to_string(), vec![f]),
            ("head.fc2.weight".to_string(), vec![f, self.outputs_per_station()]),
            ("head.fc2.bias".to_string(), vec![self.outputs_per_station()]),
        ]);
        shapes
    }

    /// Uniform ±sqrt(6 / (fan_in + fan_out)) weights, zero biases.
    pub fn init_params(&self, seed: u64) -> Result<ParamSet> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, shape) in self.param_shapes() {
            let tensor = if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                let (fan_in, fan_out) = match shape.len() {
                    4 => (shape[1] * shape[2] * shape[3], shape[0] * shape[2] * shape[3]),
                    _ => (shape[0], shape[1]),
                };
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::from_fn(&shape, |_| rng.random_range(-bound..bound))
            };
            params.insert(name, tensor);
        }
        Ok(params)
    }

    /// Checks a parameter set against [`ModelConfig::param_shapes`].
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let shapes = self.param_shapes();
        for (name, shape) in &shapes {
            let t = params.get(name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    got: t.shape().to_vec(),
                });
            }
        }
        if params.len() != shapes.len() {
            let extra = params
                .names()
                .find(|n| !shapes.iter().any(|(s, _)| s == n))
                .unwrap_or_default()
                .to_string();
            return Err(ModelError::InvalidConfig(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }
}

pub fn gnn_weight_name(layer: usize) -> String {
    format!("gnn.{layer}.weight")
}

/// Symmetrically normalised adjacency with self-loops, `D^-1/2 (A + I) D^-1/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    matrix: Tensor,
}

impl NormalizedAdjacency {
    pub fn from_network(network: &NetworkSpec) -> Self {
        let s = network.station_count();
        let mut a = network.adjacency();
        for i in 0..s {
            a[i * s + i] += 1.0;
        }
        let inv_sqrt_deg: Vec<f64> = (0..s)
            .map(|i| 1.0 / a[i * s..(i + 1) * s].iter().sum::<f64>().sqrt())
            .collect();
        for i in 0..s {
            for j in 0..s {
                a[i * s + j] *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
            }
        }
        Self {
            matrix: Tensor::new(vec![s, s], a).expect("square adjacency"),
        }
    }

    pub fn station_count(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.at(&[i, j])
    }

    /// Relabels stations: entry `(i, j)` of the result is entry
    /// `(perm[i], perm[j])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let s = self.station_count();
        Self {
            matrix: Tensor::from_fn(&[s, s], |k| self.get(perm[k / s], perm[k % s])),
        }
    }
}

pub fn normalize_adjacency(network: &NetworkSpec) -> NormalizedAdjacency {
    NormalizedAdjacency::from_network(network)
}

/// Parameter handles registered on a tape.
pub struct ParamVars {
    vars: Vec<(String, Var)>,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &ParamSet, trainable: bool) -> Self {
        let vars = params
            .iter()
            .map(|(n, t)| (n.to_string(), tape.leaf(t.clone(), trainable)))
            .collect();
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

/// Encodes one station's `[2, P, T]` window into a `[feature_dim]` vector.
pub fn cnn_encode(tape: &mut Tape, window: Var, p: &ParamVars) -> Result<Var> {
    let stage = "cnn_encode";
    let dims = tape.value(window).shape().to_vec();
    if dims.len() != 3 || dims[1] < MIN_WINDOW_DIM || dims[2] < MIN_WINDOW_DIM {
        return Err(ModelError::Stage {
            stage,
            source: TensorError::Invalid {
                op: "window",
                reason: format!("window {dims:?} too small for two poolings; need at least [2, 4, 4]"),
            },
        });
    }
    let x = tape
        .conv2d(window, p.get("cnn.conv1.weight")?, p.get("cnn.conv1.bias")?, CONV_PADDING, 1)
        .map_err(at_stage(stage))?;
    let x = tape.relu(x);
    let x = tape.maxpool2d(x, POOL, POOL).map_err(at_stage(stage))?;
    let x = tape
        .conv2d(x, p.get("cnn.conv2.weight")?, p.get("cnn.conv2.bias")?, CONV_PADDING, 1)
        .map_err(at_stage(stage))?;
    let x = tape.relu(x);
    let x = tape.maxpool2d(x, POOL, POOL).map_err(at_stage(stage))?;
    let flat = tape.value(x).numel();
    let x = tape.reshape(x, &[flat]).map_err(at_stage(stage))?;
    let x = tape
        .affine(x, p.get("cnn.proj.weight")?, Some(p.get("cnn.proj.bias")?))
        .map_err(at_stage(stage))?;
    Ok(tape.relu(x))
}

pub fn embed_weather(tape: &mut Tape, table: Var, rain_flag: u8) -> Result<Var> {
    if rain_flag > 1 {
        return Err(ModelError::InvalidRainFlag(rain_flag));
    }
    tape.select_row(table, rain_flag as usize)
        .map_err(at_stage("embed_weather"))
}

/// `X <- relu(Â · X · W_l)` for each layer, each output replacing its input.
pub fn gnn_propagate(
    tape: &mut Tape,
    nodes: Var,
    adjacency: &NormalizedAdjacency,
    weights: &[Var],
    expected_layers: usize,
) -> Result<Var> {
    let stage = "gnn_propagate";
    if weights.len() != expected_layers {
        return Err(ModelError::LayerCount {
            expected: expected_layers,
            got: weights.len(),
        });
    }
    let rows = tape.value(nodes).shape()[0];
    if rows != adjacency.station_count() {
        return Err(ModelError::Stage {
            stage,
            source: TensorError::ShapeMismatch {
                op: "node rows vs adjacency",
                lhs: tape.value(nodes).shape().to_vec(),
                rhs: adjacency.as_tensor().shape().to_vec(),
            },
        });
    }
    let mut x = nodes;
    for &w in weights {
        let xw = tape.affine(x, w, None).map_err(at_stage(stage))?;
        let msg = tape.aggregate(adjacency.as_tensor(), xw).map_err(at_stage(stage))?;
        x = tape.relu(msg);
    }
    Ok(x)
}

/// A recorded forward pass.
pub struct Forward {
    pub tape: Tape,
    pub params: ParamVars,
    /// `[S, 2 * horizons]`.
    pub output: Var,
}

/// Runs the network on one normalised `[S, 2, P, T]` window stack.
pub fn forward(
    config: &ModelConfig,
    params: &ParamSet,
    adjacency: &NormalizedAdjacency,
    windows: &Tensor,
    rain_flag: u8,
    trainable: bool,
) -> Result<Forward> {
    let expected = [config.stations, CHANNELS, config.periods, config.intervals_per_day];
    if windows.shape() != expected {
        return Err(ModelError::Stage {
            stage: "input",
            source: TensorError::ShapeMismatch {
                op: "window stack",
                lhs: expected.to_vec(),
                rhs: windows.shape().to_vec(),
            },
        });
    }
    if adjacency.station_count() != config.stations {
        return Err(ModelError::Stage {
            stage: "input",
            source: TensorError::ShapeMismatch {
                op: "adjacency",
                lhs: vec![config.stations, config.stations],
                rhs: adjacency.as_tensor().shape().to_vec(),
            },
        });
    }
    if rain_flag > 1 {
        return Err(ModelError::InvalidRainFlag(rain_flag));
    }
    config.check_params(params)?;

    let mut tape = Tape::new();
    let p = ParamVars::register(&mut tape, params, trainable);
    let s = config.stations;
    let f = config.feature_dim;
    let per_station = windows.numel() / s;

    let mut features = Vec::with_capacity(s);
    for st in 0..s {
        let w = Tensor::new(
            vec![CHANNELS, config.periods, config.intervals_per_day],
            windows.data()[st * per_station..(st + 1) * per_station].to_vec(),
        )
        .expect("station window");
        let w = tape.constant(w);
        let feat = cnn_encode(&mut tape, w, &p)?;
        features.push(tape.reshape(feat, &[1, f]).map_err(at_stage("cnn_encode"))?);
    }
    let cnn_out = tape.concat(&features, 0).map_err(at_stage("cnn_encode"))?;

    let nodes = if config.variant.uses_weather() {
        let e = embed_weather(&mut tape, p.get("weather.table")?, rain_flag)?;
        let e = tape
            .reshape(e, &[1, config.weather_embed_dim])
            .map_err(at_stage("embed_weather"))?;
        let tiled = tape.concat(&vec![e; s], 0).map_err(at_stage("embed_weather"))?;
        tape.concat(&[cnn_out, tiled], 1)
            .map_err(at_stage("embed_weather"))?
    } else {
        cnn_out
    };

    let mixed = if config.variant.uses_gnn() {
        let weights = (0..config.gnn_layers)
            .map(|l| p.get(&gnn_weight_name(l)))
            .collect::<Result<Vec<_>>>()?;
        gnn_propagate(&mut tape, nodes, adjacency, &weights, config.gnn_layers)?
    } else {
        let x = tape
            .affine(nodes, p.get("skip.weight")?, Some(p.get("skip.bias")?))
            .map_err(at_stage("station_only"))?;
        tape.relu(x)
    };

    let head = "head";
    let h = tape.concat(&[mixed, cnn_out], 1).map_err(at_stage(head))?;
    let h = tape
        .affine(h, p.get("head.fc1.weight")?, Some(p.get("head.fc1.bias")?))
        .map_err(at_stage(head))?;
    let h = tape.relu(h);
    let output = tape
        .affine(h, p.get("head.fc2.weight")?, Some(p.get("head.fc2.bias")?))
        .map_err(at_stage(head))?;
    Ok(Forward {
        tape,
        params: p,
        output,
    })
}

/// A configured network bundled with its graph.
#[derive(Clone, Debug)]
pub struct Mpstn {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub adjacency: NormalizedAdjacency,
}

impl Mpstn {
    pub fn new(config: ModelConfig, adjacency: NormalizedAdjacency, seed: u64) -> Result<Self> {
        let params = config.init_params(seed)?;
        Ok(Self {
            config,
            params,
            adjacency,
        })
    }

    pub fn from_params(config: ModelConfig, params: ParamSet, adjacency: NormalizedAdjacency) -> Result<Self> {
        config.validate()?;
        config.check_params(&params)?;
        Ok(Self {
            config,
            params,
            adjacency,
        })
    }

    /// Normalised-unit prediction `[S, 2 * horizons]`.
    pub fn predict(&self, windows: &Tensor, rain_flag: u8) -> Result<Tensor> {
        let fwd = forward(&self.config, &self.params, &self.adjacency, windows, rain_flag, false)?;
        Ok(fwd.tape.value(fwd.output).clone())
    }

    /// L1 loss of [`Mpstn::predict`] against `[S, 2, horizons]` targets.
    pub fn loss(&self, windows: &Tensor, rain_flag: u8, targets: &Tensor) -> Result<f64> {
        let pred = self.predict(windows, rain_flag)?;
        if pred.numel() != targets.numel() {
            return Err(ModelError::Stage {
                stage: "loss",
                source: TensorError::ShapeMismatch {
                    op: "l1_loss",
                    lhs: pred.shape().to_vec(),
                    rhs: targets.shape().to_vec(),
                },
            });
        }
        let total: f64 = pred.data().iter().zip(targets.data()).map(|(p, t)| (p - t).abs()).sum();
        Ok(total / pred.numel() as f64)
    }

    /// L1 loss against `[S, 2, horizons]` (or already flattened) targets and
    /// the gradient of every parameter.
    pub fn loss_and_grads(&self, windows: &Tensor, rain_flag: u8, targets: &Tensor) -> Result<(f64, ParamSet)> {
        let mut fwd = forward(&self.config, &self.params, &self.adjacency, windows, rain_flag, true)?;
        let tape = &mut fwd.tape;
        let out_shape = tape.value(fwd.output).shape().to_vec();
        let target = targets.clone().reshape(&out_shape).map_err(at_stage("loss"))?;
        let target = tape.constant(target);
        let loss = tape.l1_loss(fwd.output, target).map_err(at_stage("loss"))?;
        tape.backward(loss).map_err(at_stage("loss"))?;
        let value = tape.value(loss).data()[0];
        let mut grads = ParamSet::new();
        for (name, var) in fwd.params.iter() {
            grads.insert(name, tape.take_grad(var).expect("trainable parameter"));
        }
        Ok((value, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(stations: usize) -> ModelConfig {
        ModelConfig {
            periods: 4,
            intervals_per_day: 6,
            stations,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn flatten_length_for_default_window() {
        let c = ModelConfig::default();
        assert_eq!(c.pooled_dims(), (3, 18));
        assert_eq!(c.flatten_len(), 3456);
    }

    #[test]
    fn config_domains_enforced() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig { gnn_layers: 3, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig { feature_dim: 32, ..ModelConfig::default() }.validate().is_err());
        assert!(ModelConfig { weather_embed_dim: 3, ..ModelConfig::default() }.validate().is_err());
        let err = ModelConfig { periods: 3, ..ModelConfig::default() }.validate().unwrap_err();
        assert!(err.to_string().contains("at least 4x4"), "{err}");
    }

    #[test]
    fn adjacency_single_node_and_path() {
        let one = NormalizedAdjacency::from_network(&NetworkSpec::new(1, []).unwrap());
        assert_eq!(one.as_tensor().data(), &[1.0]);
        let path = NormalizedAdjacency::from_network(&NetworkSpec::new(3, [(0, 1), (1, 2)]).unwrap());
        assert!((path.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((path.get(0, 1) - 0.408248).abs() < 1e-6);
        assert_eq!(path.get(0, 2), 0.0);
        assert!((path.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(path.get(i, j), path.get(j, i));
            }
        }
    }

    #[test]
    fn weather_lookup() {
        let mut tape = Tape::new();
        let table = tape.param(Tensor::new(vec![2, 4], (0..8).map(f64::from).collect()).unwrap());
        let r0 = embed_weather(&mut tape, table, 0).unwrap();
        let r1 = embed_weather(&mut tape, table, 1).unwrap();
        assert_eq!(tape.value(r0).data(), &[0., 1., 2., 3.]);
        assert_eq!(tape.value(r1).data(), &[4., 5., 6., 7.]);
        assert_eq!(embed_weather(&mut tape, table, 2).unwrap_err(), ModelError::InvalidRainFlag(2));
    }

    #[test]
    fn identity_propagation_on_single_node() {
        let adj = NormalizedAdjacency::from_network(&NetworkSpec::new(1, []).unwrap());
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 3], vec![0.5, 2.0, 0.0]).unwrap());
        let eye = tape.constant(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let y = gnn_propagate(&mut tape, x, &adj, &[eye], 1).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let zero = tape.constant(Tensor::zeros(&[1, 3]));
        let y = gnn_propagate(&mut tape, zero, &adj, &[eye], 1).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        assert_eq!(
            gnn_propagate(&mut tape, x, &adj, &[eye], 2).unwrap_err(),
            ModelError::LayerCount { expected: 2, got: 1 }
        );
    }

    #[test]
    fn zero_window_zero_bias_gives_zero_features() {
        let config = small_config(1);
        let mut params = config.init_params(3).unwrap();
        for (name, t) in params.iter_mut() {
            if name.ends_with(".bias") {
                assert!(t.data().iter().all(|&v| v == 0.0));
            }
        }
        let mut tape = Tape::new();
        let p = ParamVars::register(&mut tape, &params, false);
        let w = tape.constant(Tensor::zeros(&[2, 4, 6]));
        let f = cnn_encode(&mut tape, w, &p).unwrap();
        assert_eq!(tape.value(f).shape(), &[64]);
        assert!(tape.value(f).data().iter().all(|&v| v == 0.0));
        params.get_mut("cnn.proj.bias").unwrap().data_mut()[0] = 1.0;
    }

    #[test]
    fn small_window_rejected_with_stage() {
        let config = small_config(1);
        let params = config.init_params(3).unwrap();
        let mut tape = Tape::new();
        let p = ParamVars::register(&mut tape, &params, false);
        let w = tape.constant(Tensor::zeros(&[2, 3, 6]));
        let err = cnn_encode(&mut tape, w, &p).unwrap_err();
        assert!(err.to_string().starts_with("cnn_encode"), "{err}");
    }

    #[test]
    fn forward_output_shape_and_variants() {
        let net = NetworkSpec::new(3, [(0, 1), (1, 2)]).unwrap();
        let adj = NormalizedAdjacency::from_network(&net);
        let windows = Tensor::from_fn(&[3, 2, 4, 6], |i| ((i * 37) % 11) as f64 / 5.0 - 1.0);
        for variant in Variant::ALL {
            let config = ModelConfig {
                variant,
                ..small_config(3)
            };
            let model = Mpstn::new(config.clone(), adj.clone(), 1).unwrap();
            let out = model.predict(&windows, 1).unwrap();
            assert_eq!(out.shape(), &[3, 8]);
            assert_eq!(model.params.contains("weather.table"), variant != Variant::NoWeather);
            assert_eq!(model.params.contains("gnn.0.weight"), variant != Variant::NoGnn);
        }
    }

    #[test]
    fn shape_errors_name_the_stage() {
        let net = NetworkSpec::new(2, [(0, 1)]).unwrap();
        let adj = NormalizedAdjacency::from_network(&net);
        let model = Mpstn::new(small_config(2), adj, 1).unwrap();
        let err = model.predict(&Tensor::zeros(&[2, 2, 4, 5]), 0).unwrap_err();
        assert!(err.to_string().starts_with("input"), "{err}");
        let err = model.predict(&Tensor::zeros(&[2, 2, 4, 6]), 3).unwrap_err();
        assert_eq!(err, ModelError::InvalidRainFlag(3));
        let mut bad = model.clone();
        bad.params.insert("head.fc2.bias", Tensor::zeros(&[7]));
        assert!(bad.predict(&Tensor::zeros(&[2, 2, 4, 6]), 0).is_err());
    }

    #[test]
    fn station_isolation_when_messages_are_silenced() {
        let net = NetworkSpec::new(3, [(0, 1), (1, 2)]).unwrap();
        let adj = NormalizedAdjacency::from_network(&net);
        let mut model = Mpstn::new(small_config(3), adj, 5).unwrap();
        model.params.get_mut("gnn.0.weight").unwrap().data_mut().fill(0.0);
        // head reads only the CNN half of its input
        let f = model.config.feature_dim;
        let fc1 = model.params.get_mut("head.fc1.weight").unwrap();
        fc1.data_mut()[..f * f].fill(0.0);
        let a = Tensor::from_fn(&[3, 2, 4, 6], |i| (i as f64 * 0.31).sin());
        let mut b = a.clone();
        // perturb stations 1 and 2 only
        let per = 2 * 4 * 6;
        b.data_mut()[per..].iter_mut().for_each(|v| *v = -*v * 3.0);
        let ya = model.predict(&a, 0).unwrap();
        let yb = model.predict(&b, 0).unwrap();
        assert_eq!(&ya.data()[..8], &yb.data()[..8]);
        assert_ne!(&ya.data()[8..], &yb.data()[8..]);
    }

    #[test]
    fn forward_is_pure() {
        let net = NetworkSpec::new(2, [(0, 1)]).unwrap();
        let model = Mpstn::new(small_config(2), NormalizedAdjacency::from_network(&net), 9).unwrap();
        let w = Tensor::from_fn(&[2, 2, 4, 6], |i| (i as f64).cos());
        assert_eq!(model.predict(&w, 1).unwrap(), model.predict(&w, 1).unwrap());
        let t = Tensor::zeros(&[2, 2, 4]);
        let (l1, g1) = model.loss_and_grads(&w, 1, &t).unwrap();
        let (l2, g2) = model.loss_and_grads(&w, 1, &t).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
    }
}
