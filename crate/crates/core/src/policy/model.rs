use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Dimension;
use crate::env::{observation_len, OBSERVATION_LAYOUT_VERSION};

use super::{ActionSpace, PolicyError};

pub const MODEL_SCHEMA_VERSION: u32 = 1;
pub const MODEL_KIND: &str = "densenav.policy";
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];
/// Head weights are drawn from a range this much narrower than the trunk's,
/// keeping the initial action distribution close to uniform.
pub const HEAD_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl LayerShape {
    fn weight_count(&self) -> usize {
        self.inputs * self.outputs
    }

    fn param_count(&self) -> usize {
        self.weight_count() + self.outputs
    }

    fn bias_offset(&self) -> usize {
        self.offset + self.weight_count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitRecord {
    pub scheme: String,
    pub seed: u64,
    pub head_scale: f64,
}

/// Feed-forward actor-critic: a `tanh` trunk feeding an action-score head
/// (softmax) and a scalar value head. Parameters live in one flat vector,
/// layer by layer, each layer as row-major weights followed by biases; the
/// two heads come last (action, then value).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    dimension: Dimension,
    obs_len: usize,
    hidden: Vec<usize>,
    action_count: usize,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
    init: InitRecord,
    /// Free-form provenance, e.g. the training hyper-parameters.
    pub metadata: BTreeMap<String, serde_json::Value>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Input followed by each trunk layer's `tanh` output.
    pub activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub value: f64,
}

fn build_layers(obs_len: usize, hidden: &[usize], action_count: usize) -> Vec<LayerShape> {
    let mut layers = Vec::with_capacity(hidden.len() + 2);
    let mut offset = 0;
    let mut push = |inputs, outputs| {
        let l = LayerShape { inputs, outputs, offset };
        offset += l.param_count();
        layers.push(l);
    };
    let mut prev = obs_len;
    for &h in hidden {
        push(prev, h);
        prev = h;
    }
    push(prev, action_count);
    push(prev, 1);
    layers
}

impl PolicyModel {
    /// Seeded model for a world dimension with the default trunk.
    pub fn for_dimension(dim: Dimension, seed: u64) -> Self {
        let space = ActionSpace::for_dimension(dim);
        Self::new(dim, observation_len(dim), &DEFAULT_HIDDEN, space.len(), seed)
    }

    /// Weights uniform in `±1/√fan_in` (heads scaled by [`HEAD_INIT_SCALE`]),
    /// biases zero.
    pub fn new(dim: Dimension, obs_len: usize, hidden: &[usize], action_count: usize, seed: u64) -> Self {
        let layers = build_layers(obs_len, hidden, action_count);
        let total = layers.last().map(|l| l.offset + l.param_count()).unwrap_or(0);
        let mut params = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_trunk = hidden.len();
        for (i, l) in layers.iter().enumerate() {
            let scale = if i >= n_trunk { HEAD_INIT_SCALE } else { 1.0 };
            let bound = scale / (l.inputs as f64).sqrt();
            for w in &mut params[l.offset..l.bias_offset()] {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        PolicyModel {
            dimension: dim,
            obs_len,
            hidden: hidden.to_vec(),
            action_count,
            layers,
            params,
            init: InitRecord { scheme: "uniform_fan_in".into(), seed, head_scale: HEAD_INIT_SCALE },
            metadata: BTreeMap::new(),
        }
    }

    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    pub fn obs_len(&self) -> usize {
        self.obs_len
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Errors unless the model fits the observation layout and action space
    /// of `dim`.
    pub fn check_compatible(&self, dim: Dimension) -> Result<(), PolicyError> {
        let expected_obs = observation_len(dim);
        let expected_actions = ActionSpace::for_dimension(dim).len();
        if self.dimension != dim || self.obs_len != expected_obs || self.action_count != expected_actions {
            return Err(PolicyError::Incompatible(format!(
                "model is {}D with {} inputs and {} actions; world needs {}D with {} inputs and {} actions",
                self.dimension.count(),
                self.obs_len,
                self.action_count,
                dim.count(),
                expected_obs,
                expected_actions
            )));
        }
        Ok(())
    }

    pub fn forward(&self, obs: &[f64]) -> Result<(Vec<f64>, f64), PolicyError> {
        let pass = self.forward_pass(obs)?;
        Ok((pass.probs, pass.value))
    }

    pub fn forward_pass(&self, obs: &[f64]) -> Result<ForwardPass, PolicyError> {
        if obs.len() != self.obs_len {
            return Err(PolicyError::ObservationLength { expected: self.obs_len, got: obs.len() });
        }
        let n_trunk = self.hidden.len();
        let mut activations = Vec::with_capacity(n_trunk + 1);
        activations.push(obs.to_vec());
        for l in &self.layers[..n_trunk] {
            let mut out = self.affine(l, activations.last().unwrap());
            out.iter_mut().for_each(|z| *z = z.tanh());
            activations.push(out);
        }
        let top = activations.last().unwrap();
        let logits = self.affine(&self.layers[n_trunk], top);
        let value = self.affine(&self.layers[n_trunk + 1], top)[0];
        let probs = softmax(&logits);
        if !value.is_finite() || probs.iter().any(|p| !p.is_finite()) {
            return Err(PolicyError::NonFinite);
        }
        Ok(ForwardPass { activations, logits, probs, value })
    }

    fn affine(&self, l: &LayerShape, x: &[f64]) -> Vec<f64> {
        let w = &self.params[l.offset..l.bias_offset()];
        let b = &self.params[l.bias_offset()..l.bias_offset() + l.outputs];
        w.chunks_exact(l.inputs)
            .zip(b)
            .map(|(row, bias)| row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + bias)
            .collect()
    }

    /// Accumulates into `grad` the parameter gradient of a scalar loss whose
    /// derivatives with respect to the logits and the value are given.
    pub fn backward(&self, pass: &ForwardPass, d_logits: &[f64], d_value: f64, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        let n_trunk = self.hidden.len();
        let top = pass.activations.last().unwrap();
        let mut d_top = vec![0.0; top.len()];
        self.affine_backward(&self.layers[n_trunk], top, d_logits, grad, &mut d_top);
        self.affine_backward(&self.layers[n_trunk + 1], top, &[d_value], grad, &mut d_top);

        let mut d_out = d_top;
        for li in (0..n_trunk).rev() {
            let out = &pass.activations[li + 1];
            let dz: Vec<f64> = d_out.iter().zip(out).map(|(g, a)| g * (1.0 - a * a)).collect();
            let input = &pass.activations[li];
            let mut d_in = vec![0.0; input.len()];
            self.affine_backward(&self.layers[li], input, &dz, grad, &mut d_in);
            d_out = d_in;
        }
    }

    fn affine_backward(&self, l: &LayerShape, x: &[f64], dy: &[f64], grad: &mut [f64], dx: &mut [f64]) {
        let w = &self.params[l.offset..l.bias_offset()];
        let (gw, gb) = grad[l.offset..l.offset + l.param_count()].split_at_mut(l.weight_count());
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            let row = o * l.inputs;
            for i in 0..l.inputs {
                gw[row + i] += g * x[i];
                dx[i] += g * w[row + i];
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        fs::write(path, self.to_json()).map_err(|e| PolicyError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = fs::read_to_string(path).map_err(|e| PolicyError::Io(e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let n_trunk = self.hidden.len();
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| LayerFile {
                name: match i {
                    i if i < n_trunk => format!("trunk{i}"),
                    i if i == n_trunk => "action_head".into(),
                    _ => "value_head".into(),
                },
                inputs: l.inputs,
                outputs: l.outputs,
                weights: self.params[l.offset..l.bias_offset()].to_vec(),
                bias: self.params[l.bias_offset()..l.offset + l.param_count()].to_vec(),
            })
            .collect();
        let file = ModelFile {
            kind: MODEL_KIND.into(),
            schema_version: MODEL_SCHEMA_VERSION,
            dimension: self.dimension,
            observation_layout_version: OBSERVATION_LAYOUT_VERSION,
            observation_len: self.obs_len,
            action_count: self.action_count,
            hidden: self.hidden.clone(),
            activation: "tanh".into(),
            init: self.init.clone(),
            metadata: self.metadata.clone(),
            layers,
        };
        serde_json::to_string(&file).expect("model serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| PolicyError::Format(e.to_string()))?;
        if file.kind != MODEL_KIND {
            return Err(PolicyError::Format(format!("not a policy model file (kind {:?})", file.kind)));
        }
        if file.schema_version != MODEL_SCHEMA_VERSION {
            return Err(PolicyError::Version(format!(
                "schema version {} (supported: {MODEL_SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        if file.observation_layout_version != OBSERVATION_LAYOUT_VERSION {
            return Err(PolicyError::Version(format!(
                "observation layout version {} (supported: {OBSERVATION_LAYOUT_VERSION})",
                file.observation_layout_version
            )));
        }
        if file.activation != "tanh" {
            return Err(PolicyError::Format(format!("unsupported activation {:?}", file.activation)));
        }
        let layers = build_layers(file.observation_len, &file.hidden, file.action_count);
        if layers.len() != file.layers.len() {
            return Err(PolicyError::Shape(format!(
                "expected {} layers, file has {}",
                layers.len(),
                file.layers.len()
            )));
        }
        let mut params = Vec::with_capacity(layers.last().map(|l| l.offset + l.param_count()).unwrap_or(0));
        for (i, (shape, stored)) in layers.iter().zip(&file.layers).enumerate() {
            if stored.inputs != shape.inputs
                || stored.outputs != shape.outputs
                || stored.weights.len() != shape.weight_count()
                || stored.bias.len() != shape.outputs
            {
                return Err(PolicyError::Shape(format!(
                    "layer {i} ({}) should be {}x{}",
                    stored.name, shape.outputs, shape.inputs
                )));
            }
            params.extend_from_slice(&stored.weights);
            params.extend_from_slice(&stored.bias);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(PolicyError::NonFinite);
        }
        Ok(PolicyModel {
            dimension: file.dimension,
            obs_len: file.observation_len,
            hidden: file.hidden,
            action_count: file.action_count,
            layers,
            params,
            init: file.init,
            metadata: file.metadata,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    kind: String,
    schema_version: u32,
    dimension: Dimension,
    observation_layout_version: u32,
    observation_len: usize,
    action_count: usize,
    hidden: Vec<usize>,
    activation: String,
    init: InitRecord,
    #[serde(default)]
    metadata: BTreeMap<String, serde_json::Value>,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    name: String,
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Shannon entropy in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

fn check_distribution(probs: &[f64]) -> Result<f64, PolicyError> {
    let sum: f64 = probs.iter().sum();
    if probs.is_empty() || !sum.is_finite() || sum <= 0.0 || probs.iter().any(|p| *p < 0.0 || p.is_nan()) {
        return Err(PolicyError::DegenerateDistribution);
    }
    Ok(sum)
}

/// Draws an index from `probs` (need not be normalized).
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize, PolicyError> {
    let sum = check_distribution(probs)?;
    let mut u = rng.gen::<f64>() * sum;
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return Ok(i);
        }
        u -= p;
    }
    // Rounding left `u` past the last bucket; take the last non-zero entry.
    Ok(probs.iter().rposition(|p| *p > 0.0).unwrap())
}

/// Arg-max, lowest index on ties.
pub fn greedy_action(probs: &[f64]) -> Result<usize, PolicyError> {
    check_distribution(probs)?;
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    Ok(best)
}
