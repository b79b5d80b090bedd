//! Temporal convolutional attention network.
//!
//! ```text
//! features (T×40) ─▶ 1×1 conv ─▶ [dilated causal conv ─▶ relu ─▶ self-attention] × L
//!                 ─▶ mean over time ─▶ affine ─▶ relu ─▶ affine ─▶ logits (M)
//! ```
//!
//! With attention disabled the same stack is the plain TCN baseline.

mod checkpoint;

pub use checkpoint::{
    config_hash, decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint,
    CheckpointError,
    TrainingMeta, CHECKPOINT_VERSION,
};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::seed::{derive_seed, rng_from, STREAM_INIT};
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("features have width {got}, model expects {want}")]
    FeatureWidth { got: usize, want: usize },
    #[error("parameter {name}: {detail}")]
    Params { name: String, detail: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcanConfig {
    pub input_dim: usize,
    pub channels: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    pub attention_enabled: bool,
    pub attention_reduced_dim: usize,
    pub classifier_hidden: usize,
    pub n_classes: usize,
    /// Adds each block's input to its relu output (off by default).
    pub conv_residual: bool,
    /// Reparameterizes conv kernels as gain · direction / ‖direction‖.
    pub weight_norm: bool,
    /// Training-time dropout after each conv relu; 0 disables it.
    pub dropout: f64,
}

impl Default for TcanConfig {
    fn default() -> Self {
        Self {
            input_dim: 40,
            channels: 64,
            kernel_size: 6,
            dilations: vec![1, 2, 4, 8],
            attention_enabled: true,
            attention_reduced_dim: 8,
            classifier_hidden: 64,
            n_classes: 5,
            conv_residual: false,
            weight_norm: false,
            dropout: 0.0,
        }
    }
}

impl TcanConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("channels", self.channels),
            ("kernel_size", self.kernel_size),
            ("attention_reduced_dim", self.attention_reduced_dim),
            ("classifier_hidden", self.classifier_hidden),
            ("n_classes", self.n_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.dilations.is_empty() {
            return Err(ModelError::Config("dilations must not be empty".into()));
        }
        if self.dilations.contains(&0) {
            return Err(ModelError::Config("every dilation must be at least 1".into()));
        }
        if self.attention_reduced_dim > self.channels {
            return Err(ModelError::Config(format!(
                "attention_reduced_dim {} exceeds channels {}",
                self.attention_reduced_dim, self.channels
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let (c, r, k) = (self.channels, self.attention_reduced_dim, self.kernel_size);
        let conv = c * c * k + c + if self.weight_norm { c } else { 0 };
        let attn = if self.attention_enabled { 2 * (r * c + r) + c * c + c } else { 0 };
        self.input_dim * c
            + c
            + self.dilations.len() * (conv + attn)
            + c * self.classifier_hidden
            + self.classifier_hidden
            + self.classifier_hidden * self.n_classes
            + self.n_classes
    }
}

/// Frames of input history visible to one output frame of the plain TCN:
/// `1 + Σ (k − 1)·dᵢ`. Undefined with attention, which is global in time.
pub fn receptive_field(config: &TcanConfig) -> Result<usize> {
    if config.attention_enabled {
        return Err(ModelError::Config(
            "receptive field is only bounded with attention disabled".into(),
        ));
    }
    config.validate()?;
    Ok(1 + config
        .dilations
        .iter()
        .map(|d| (config.kernel_size - 1) * d)
        .sum::<usize>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    /// Uniform in ±sqrt(1/fan_in).
    FanIn(usize),
    Zero,
    /// Weight-norm gain: the row norms of the preceding direction tensor.
    RowNorm,
}

#[derive(Debug, Clone)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

#[derive(Debug, Clone, Copy)]
struct AttentionIdx {
    g_weight: usize,
    g_bias: usize,
    h_weight: usize,
    h_bias: usize,
    k_weight: usize,
    k_bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct BlockIdx {
    weight: usize,
    gain: Option<usize>,
    bias: usize,
    attention: Option<AttentionIdx>,
}

#[derive(Debug, Clone)]
struct Layout {
    specs: Vec<ParamSpec>,
    in_weight: usize,
    in_bias: usize,
    blocks: Vec<BlockIdx>,
    fc1_weight: usize,
    fc1_bias: usize,
    fc2_weight: usize,
    fc2_bias: usize,
}

impl Layout {
    fn new(cfg: &TcanConfig) -> Self {
        let mut specs = Vec::new();
        let mut add = |name: String, shape: Vec<usize>, init: Init| {
            specs.push(ParamSpec { name, shape, init });
            specs.len() - 1
        };
        let (c, r, k) = (cfg.channels, cfg.attention_reduced_dim, cfg.kernel_size);
        let in_weight = add("input.weight".into(), vec![c, cfg.input_dim, 1], Init::FanIn(cfg.input_dim));
        let in_bias = add("input.bias".into(), vec![c], Init::Zero);
        let mut blocks = Vec::with_capacity(cfg.dilations.len());
        for i in 0..cfg.dilations.len() {
            let p = format!("block{i}");
            let (weight, gain) = if cfg.weight_norm {
                let w = add(format!("{p}.conv.direction"), vec![c, c, k], Init::FanIn(c * k));
                let g = add(format!("{p}.conv.gain"), vec![c], Init::RowNorm);
                (w, Some(g))
            } else {
                (add(format!("{p}.conv.weight"), vec![c, c, k], Init::FanIn(c * k)), None)
            };
            let bias = add(format!("{p}.conv.bias"), vec![c], Init::Zero);
            let attention = cfg.attention_enabled.then(|| AttentionIdx {
                g_weight: add(format!("{p}.attn.g.weight"), vec![r, c, 1], Init::FanIn(c)),
                g_bias: add(format!("{p}.attn.g.bias"), vec![r], Init::Zero),
                h_weight: add(format!("{p}.attn.h.weight"), vec![r, c, 1], Init::FanIn(c)),
                h_bias: add(format!("{p}.attn.h.bias"), vec![r], Init::Zero),
                k_weight: add(format!("{p}.attn.k.weight"), vec![c, c, 1], Init::FanIn(c)),
                k_bias: add(format!("{p}.attn.k.bias"), vec![c], Init::Zero),
            });
            blocks.push(BlockIdx { weight, gain, bias, attention });
        }
        let h = cfg.classifier_hidden;
        let fc1_weight = add("fc1.weight".into(), vec![h, c], Init::FanIn(c));
        let fc1_bias = add("fc1.bias".into(), vec![h], Init::Zero);
        let fc2_weight = add("fc2.weight".into(), vec![cfg.n_classes, h], Init::FanIn(h));
        let fc2_bias = add("fc2.bias".into(), vec![cfg.n_classes], Init::Zero);
        Self {
            specs,
            in_weight,
            in_bias,
            blocks,
            fc1_weight,
            fc1_bias,
            fc2_weight,
            fc2_bias,
        }
    }
}

/// Named, ordered model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TcanParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl TcanParams {
    pub fn new(names: Vec<String>, tensors: Vec<Tensor>) -> Self {
        assert_eq!(names.len(), tensors.len());
        Self { names, tensors }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.values())
            .fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Tape handles for one attention block's 1×1 convolutions.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub g_weight: Var,
    pub g_bias: Var,
    pub h_weight: Var,
    pub h_bias: Var,
    pub k_weight: Var,
    pub k_bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    pub output: Var,
    /// Row-stochastic `T × T` attention matrix.
    pub weights: Var,
}

/// Self-attention with residual: `G = W_G·X`, `H = W_H·X`, `K = W_K·X`,
/// `A = softmax_rows(Gᵀ·H)`, output `X + (Aᵀ·Kᵀ)ᵀ = X + K·A`.
pub fn attention_block_forward(tape: &mut Tape, x: Var, w: &AttentionVars) -> crate::tensor::Result<AttentionOutput> {
    let g = tape.conv1d(x, w.g_weight, w.g_bias, 1)?;
    let h = tape.conv1d(x, w.h_weight, w.h_bias, 1)?;
    let k = tape.conv1d(x, w.k_weight, w.k_bias, 1)?;
    let gt = tape.transpose(g)?;
    let scores = tape.matmul(gt, h)?;
    let weights = tape.softmax_rows(scores)?;
    let weighted = tape.matmul(k, weights)?;
    let output = tape.add(x, weighted)?;
    Ok(AttentionOutput { output, weights })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Eval,
    /// Enables dropout with masks drawn from `seed`.
    Train { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Var,
    /// `channels × T` activations of the last block, before pooling.
    pub frames: Var,
    /// One attention matrix per block when attention is enabled.
    pub attention: Vec<Var>,
}

/// Inspectable forward results detached from the tape.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Vec<f64>,
    pub frames: Tensor,
    pub attention: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Tcan {
    config: TcanConfig,
    layout: Layout,
    params: TcanParams,
}

impl Tcan {
    /// Fan-in uniform weights, zero biases, all drawn from `seed`.
    pub fn init(config: TcanConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = rng_from(derive_seed(seed, STREAM_INIT, 0));
        let mut tensors: Vec<Tensor> = Vec::with_capacity(layout.specs.len());
        for spec in &layout.specs {
            let n: usize = spec.shape.iter().product();
            let values = match spec.init {
                Init::FanIn(fan_in) => {
                    let a = (1.0 / fan_in as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-a..a)).collect()
                }
                Init::Zero => vec![0.0; n],
                Init::RowNorm => {
                    let dir = tensors.last().expect("gain follows its direction");
                    let per = dir.numel() / n;
                    dir.values()
                        .chunks(per)
                        .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
                        .collect()
                }
            };
            tensors.push(Tensor::new(spec.shape.clone(), values)?.with_grad());
        }
        let names = layout.specs.iter().map(|s| s.name.clone()).collect();
        Ok(Self {
            config,
            layout,
            params: TcanParams::new(names, tensors),
        })
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(config: TcanConfig, params: TcanParams) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.specs.len() {
            return Err(ModelError::Params {
                name: "<all>".into(),
                detail: format!("expected {} tensors, got {}", layout.specs.len(), params.len()),
            });
        }
        let mut tensors = Vec::with_capacity(params.len());
        for ((spec, name), t) in layout.specs.iter().zip(&params.names).zip(params.tensors) {
            if &spec.name != name {
                return Err(ModelError::Params {
                    name: name.clone(),
                    detail: format!("expected parameter {}", spec.name),
                });
            }
            if spec.shape != t.shape() {
                return Err(ModelError::Params {
                    name: name.clone(),
                    detail: format!("shape {:?}, expected {:?}", t.shape(), spec.shape),
                });
            }
            tensors.push(if t.requires_grad() { t } else { t.with_grad() });
        }
        Ok(Self {
            config,
            layout,
            params: TcanParams::new(params.names, tensors),
        })
    }

    pub fn config(&self) -> &TcanConfig {
        &self.config
    }

    pub fn params(&self) -> &TcanParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut TcanParams {
        &mut self.params
    }

    /// Channel-major `input_dim × T` tensor of a feature matrix.
    pub fn input_tensor(&self, features: &FeatureMatrix) -> Result<Tensor> {
        if features.dims() != self.config.input_dim {
            return Err(ModelError::FeatureWidth {
                got: features.dims(),
                want: self.config.input_dim,
            });
        }
        Ok(Tensor::matrix(features.dims(), features.frames(), features.transposed())?)
    }

    /// Records the network on `tape`, reading parameters from `params`
    /// (in layout order) and the `input_dim × T` input from `input`.
    pub fn forward_with_vars(
        &self,
        tape: &mut Tape,
        input: Var,
        params: &[Var],
        mode: ForwardMode,
    ) -> crate::tensor::Result<ForwardOutput> {
        let l = &self.layout;
        let p = |i: usize| params[i];
        let mut dropout_rng = match mode {
            ForwardMode::Train { seed } if self.config.dropout > 0.0 => Some(rng_from(seed)),
            _ => None,
        };
        let mut h = tape.conv1d(input, p(l.in_weight), p(l.in_bias), 1)?;
        let mut attention = Vec::new();
        for (block, &dilation) in l.blocks.iter().zip(&self.config.dilations) {
            let weight = match block.gain {
                Some(g) => tape.weight_norm(p(block.weight), p(g))?,
                None => p(block.weight),
            };
            let mut y = tape.conv1d(h, weight, p(block.bias), dilation)?;
            y = tape.relu(y)?;
            if let Some(rng) = dropout_rng.as_mut() {
                let keep = 1.0 - self.config.dropout;
                let mask = (0..tape.value(y).numel())
                    .map(|_| if rng.random_bool(keep) { 1.0 / keep } else { 0.0 })
                    .collect();
                y = tape.mask_scale(y, mask)?;
            }
            if self.config.conv_residual {
                y = tape.add(y, h)?;
            }
            if let Some(a) = block.attention {
                let vars = AttentionVars {
                    g_weight: p(a.g_weight),
                    g_bias: p(a.g_bias),
                    h_weight: p(a.h_weight),
                    h_bias: p(a.h_bias),
                    k_weight: p(a.k_weight),
                    k_bias: p(a.k_bias),
                };
                let out = attention_block_forward(tape, y, &vars)?;
                attention.push(out.weights);
                y = out.output;
            }
            h = y;
        }
        let pooled = tape.global_avg_pool_time(h)?;
        let z = tape.affine(p(l.fc1_weight), pooled, p(l.fc1_bias))?;
        let z = tape.relu(z)?;
        let logits = tape.affine(p(l.fc2_weight), z, p(l.fc2_bias))?;
        Ok(ForwardOutput { logits, frames: h, attention })
    }

    /// Records inputs and parameters on a fresh tape and runs the forward pass.
    pub fn forward(&self, features: &FeatureMatrix, mode: ForwardMode) -> Result<(Tape, Vec<Var>, ForwardOutput)> {
        let mut tape = Tape::new();
        let input = tape.constant(self.input_tensor(features)?);
        let vars: Vec<Var> = self.params.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = self.forward_with_vars(&mut tape, input, &vars, mode)?;
        Ok((tape, vars, out))
    }

    pub fn logits(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        let (tape, _, out) = self.forward(features, ForwardMode::Eval)?;
        Ok(tape.value(out.logits).values().to_vec())
    }

    pub fn trace(&self, features: &FeatureMatrix) -> Result<ForwardTrace> {
        let (tape, _, out) = self.forward(features, ForwardMode::Eval)?;
        Ok(ForwardTrace {
            logits: tape.value(out.logits).values().to_vec(),
            frames: tape.value(out.frames).clone(),
            attention: out.attention.iter().map(|&a| tape.value(a).clone()).collect(),
        })
    }

    /// Cross-entropy loss, logits and per-parameter gradients for one example.
    pub fn loss_and_grads(
        &self,
        features: &FeatureMatrix,
        label: usize,
        mode: ForwardMode,
    ) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
        let (mut tape, vars, out) = self.forward(features, mode)?;
        let loss = tape.cross_entropy(out.logits, label)?;
        tape.backward(loss)?;
        let grads = vars
            .iter()
            .map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(v).numel()]))
            .collect();
        Ok((tape.value(loss).values()[0], tape.value(out.logits).values().to_vec(), grads))
    }
}
