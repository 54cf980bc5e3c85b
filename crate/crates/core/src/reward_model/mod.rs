//! Per-step reward predictor and its weighted Bradley–Terry training.

pub(crate) mod objective;
pub(crate) mod train;

pub use objective::{
    ce_loss, grad_ce, log_sigmoid, logistic, pair_loss, preference_probability, weighted_return,
    LabeledPair,
};
pub use train::{
    prepare_pairs, train_prepared, train_reward, EpochRecord, Optimizer, PreparedPair,
    TrainConfig, TrainingLog, WeightMode,
};

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Transition;
use crate::error::{Result, SpwError};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputSquash {
    None,
    #[default]
    Tanh,
}

/// Fixed affine map applied to inputs before the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    /// z-score statistics over a set of transitions; constant dimensions keep
    /// unit scale.
    pub fn fit<'a>(transitions: impl IntoIterator<Item = &'a Transition>, dim: usize) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        for t in transitions {
            n += 1;
            for ((s, q), v) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(t.features()) {
                *s += v;
                *q += v * v;
            }
        }
        let n = n.max(1) as f64;
        let shift: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sum_sq
            .iter()
            .zip(&shift)
            .map(|(q, m)| {
                let sd = (q / n - m * m).max(0.0).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        InputNorm { shift, scale }
    }
}

/// Fully connected network `n + m → hidden… → 1`.
///
/// Parameters live in one flat vector, layer by layer, each layer stored as
/// its row-major `outputs × inputs` weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    layer_dims: Vec<usize>,
    params: Vec<f64>,
    activation: Activation,
    squash: OutputSquash,
    input_norm: Option<InputNorm>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub(crate) struct ForwardCache {
    /// `acts[0]` is the (normalized) input; `acts[i]` the output of layer `i`.
    acts: Vec<Vec<f64>>,
    pub(crate) output: f64,
}

impl RewardModel {
    /// Uniform fan-in scaled weights `U(-1/√fan_in, 1/√fan_in)`, zero biases.
    pub fn init(
        n: usize,
        m: usize,
        hidden: &[usize],
        activation: Activation,
        squash: OutputSquash,
        seed: u64,
    ) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(SpwError::Config("hidden layers must be nonempty and positive".into()));
        }
        if n + m == 0 {
            return Err(SpwError::Config("input dimension must be positive".into()));
        }
        let mut layer_dims = Vec::with_capacity(hidden.len() + 2);
        layer_dims.push(n + m);
        layer_dims.extend_from_slice(hidden);
        layer_dims.push(1);
        let mut rng = seeded(seed);
        let mut params = Vec::with_capacity(param_count(&layer_dims));
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(RewardModel {
            layer_dims,
            params,
            activation,
            squash,
            input_norm: None,
        })
    }

    pub fn from_parts(
        layer_dims: Vec<usize>,
        params: Vec<f64>,
        activation: Activation,
        squash: OutputSquash,
        input_norm: Option<InputNorm>,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || *layer_dims.last().unwrap() != 1 || layer_dims.contains(&0) {
            return Err(SpwError::Checkpoint(format!("bad layer dims {layer_dims:?}")));
        }
        let expected = param_count(&layer_dims);
        if params.len() != expected {
            return Err(SpwError::Checkpoint(format!(
                "expected {expected} parameters, found {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(SpwError::Checkpoint("non-finite parameter".into()));
        }
        if let Some(norm) = &input_norm {
            if norm.shift.len() != layer_dims[0] || norm.scale.len() != layer_dims[0] {
                return Err(SpwError::Checkpoint("input normalization has wrong width".into()));
            }
        }
        Ok(RewardModel {
            layer_dims,
            params,
            activation,
            squash,
            input_norm,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn squash(&self) -> OutputSquash {
        self.squash
    }

    pub fn input_norm(&self) -> Option<&InputNorm> {
        self.input_norm.as_ref()
    }

    pub fn set_input_norm(&mut self, norm: Option<InputNorm>) {
        self.input_norm = norm;
    }

    /// `(weights, bias)` slices of layer `i`.
    pub fn layer(&self, i: usize) -> (&[f64], &[f64]) {
        let (start, n_in, n_out) = self.layer_offset(i);
        let w_end = start + n_in * n_out;
        (&self.params[start..w_end], &self.params[w_end..w_end + n_out])
    }

    fn layer_offset(&self, i: usize) -> (usize, usize, usize) {
        let start = param_count(&self.layer_dims[..=i]);
        (start, self.layer_dims[i], self.layer_dims[i + 1])
    }

    fn check_dim(&self, t: &Transition) -> Result<()> {
        if t.dim() != self.input_dim() {
            return Err(SpwError::DimensionMismatch {
                expected: self.input_dim(),
                actual: t.dim(),
                line: None,
            });
        }
        Ok(())
    }

    fn normalized_input(&self, t: &Transition) -> Vec<f64> {
        match &self.input_norm {
            None => t.concat(),
            Some(norm) => t
                .features()
                .zip(norm.shift.iter().zip(&norm.scale))
                .map(|(v, (m, s))| (v - m) / s)
                .collect(),
        }
    }

    pub(crate) fn forward(&self, t: &Transition) -> ForwardCache {
        let n_layers = self.layer_dims.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(self.normalized_input(t));
        let mut offset = 0;
        for i in 0..n_layers {
            let (n_in, n_out) = (self.layer_dims[i], self.layer_dims[i + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let x = &acts[i];
            let last = i + 1 == n_layers;
            let out: Vec<f64> = w
                .chunks_exact(n_in)
                .zip(b)
                .map(|(row, bias)| {
                    let z = row.iter().zip(x).fold(*bias, |acc, (a, b)| acc + a * b);
                    if last {
                        match self.squash {
                            OutputSquash::None => z,
                            OutputSquash::Tanh => z.tanh(),
                        }
                    } else {
                        self.activation.apply(z)
                    }
                })
                .collect();
            acts.push(out);
        }
        let output = acts[n_layers][0];
        ForwardCache { acts, output }
    }

    /// Accumulates `d_output · ∂output/∂params` into `grad`.
    pub(crate) fn backward(&self, cache: &ForwardCache, d_output: f64, grad: &mut [f64]) {
        let n_layers = self.layer_dims.len() - 1;
        let mut delta = vec![match self.squash {
            OutputSquash::None => d_output,
            OutputSquash::Tanh => d_output * (1.0 - cache.output * cache.output),
        }];
        for i in (0..n_layers).rev() {
            let (start, n_in, n_out) = self.layer_offset(i);
            let x = &cache.acts[i];
            let w_end = start + n_in * n_out;
            for (o, &d) in delta.iter().enumerate() {
                let row = &mut grad[start + o * n_in..start + (o + 1) * n_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
                grad[w_end + o] += d;
            }
            if i == 0 {
                break;
            }
            let w = &self.params[start..w_end];
            let mut prev = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                for (p, wv) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wv;
                }
            }
            for (p, y) in prev.iter_mut().zip(x) {
                *p *= self.activation.derivative_from_output(*y);
            }
            delta = prev;
        }
    }

    pub fn predict_reward(&self, t: &Transition) -> Result<f64> {
        self.check_dim(t)?;
        Ok(self.forward(t).output)
    }

    /// Per-item rewards, in parallel when enabled.
    pub fn predict_batch(&self, ts: &[Transition]) -> Result<Vec<f64>> {
        crate::exec::try_map(ts, |t| self.predict_reward(t))
    }

    pub fn save(&self, path: impl AsRef<Path>, provenance: Option<serde_json::Value>) -> Result<()> {
        let path = path.as_ref();
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layer_dims: self.layer_dims.clone(),
            activation: self.activation,
            output_squash: self.squash,
            input_norm: self.input_norm.clone(),
            parameters: self.params.clone(),
            provenance,
        };
        let text = serde_json::to_string_pretty(&ckpt)
            .map_err(|e| SpwError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| SpwError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SpwError::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| SpwError::Checkpoint(format!("{}: {e}", path.display())))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(SpwError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        RewardModel::from_parts(
            ckpt.layer_dims,
            ckpt.parameters,
            ckpt.activation,
            ckpt.output_squash,
            ckpt.input_norm,
        )
    }
}

const CHECKPOINT_FORMAT: &str = "spw-reward-model";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    layer_dims: Vec<usize>,
    activation: Activation,
    output_squash: OutputSquash,
    input_norm: Option<InputNorm>,
    parameters: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Convenience: `init` with default activation and squash.
pub fn init_model(n: usize, m: usize, hidden: &[usize], seed: u64) -> Result<RewardModel> {
    RewardModel::init(n, m, hidden, Activation::default(), OutputSquash::default(), seed)
}

pub fn predict_reward(model: &RewardModel, t: &Transition) -> Result<f64> {
    model.predict_reward(t)
}
