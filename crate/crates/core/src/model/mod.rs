//! Parameterized post-norm transformer encoder with per-head projection
//! matrices, usable with a tied-embedding token head (generator) or a
//! per-position realness head (discriminator). The forward pass exposes
//! every head's pre-softmax attention logits; the first `guided_heads`
//! heads of the bottom `guided_layers` layers are flagged as guided.

mod checkpoint;
mod forward;

pub use checkpoint::{load_model, save_model};
pub use forward::{bind, forward, AttentionSlot, BoundModel, Dropout, ForwardOutput};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream_for, Role};
use crate::tensor::{Tensor, TensorError};

/// Logit value for masked attention keys; exp(-1e30 − anything finite)
/// underflows to exactly zero after row-max stabilization.
pub const MASKED_LOGIT: f64 = -1e30;

pub const LAYERNORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence of {len} tokens exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Generator,
    Discriminator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn_dim: usize,
    pub vocab: usize,
    pub max_len: usize,
    /// Number of bottom layers whose first `guided_heads` heads receive
    /// the attention-guidance loss.
    pub guided_layers: usize,
    pub guided_heads: usize,
    pub activation: Activation,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(ModelError::InvalidConfig(format!(
                "hidden {} is not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.guided_layers > self.layers {
            return Err(ModelError::InvalidConfig(format!(
                "guided_layers {} exceeds layers {}",
                self.guided_layers, self.layers
            )));
        }
        if self.guided_heads > self.heads {
            return Err(ModelError::InvalidConfig(format!(
                "guided_heads {} exceeds heads {}",
                self.guided_heads, self.heads
            )));
        }
        if self.vocab < 4 {
            return Err(ModelError::InvalidConfig(
                "vocab must include the four specials".into(),
            ));
        }
        if self.max_len < 2 {
            return Err(ModelError::InvalidConfig("max_len must be at least 2".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// Encoder parameter count as a closed form: embeddings plus a constant
/// per-layer increment. Head parameters (tied generator: none;
/// discriminator: hidden + 1) are counted by [`ModelGraph::param_count`].
pub fn count_params(config: &ModelConfig) -> usize {
    let d = config.hidden;
    let per_layer = 4 * d * d + 2 * d * config.ffn_dim + config.ffn_dim + 5 * d;
    config.vocab * d + config.max_len * d + config.layers * per_layer
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    pub wo: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct ModelGraph {
    pub config: ModelConfig,
    pub head: HeadKind,
    pub token_emb: Tensor,
    pub pos_emb: Tensor,
    pub layers: Vec<LayerParams>,
    pub disc_w: Option<Tensor>,
    pub disc_b: Option<Tensor>,
}

impl ModelGraph {
    /// Deterministic initialization: weights and embeddings drawn from
    /// N(0, 0.02²) truncated at ±2σ, layernorm gain 1 / bias 0, other
    /// biases 0.
    pub fn init(config: ModelConfig, head: HeadKind, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = stream_for(seed, Role::Init);
        let mut normal = |rows: usize, cols: usize| {
            let data = (0..rows * cols)
                .map(|_| trunc_normal(&mut rng, 0.02, 2.0))
                .collect();
            Tensor::new(rows, cols, data)
        };
        let d = config.hidden;
        let dk = config.head_dim();
        let token_emb = normal(config.vocab, d);
        let pos_emb = normal(config.max_len, d);
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            layers.push(LayerParams {
                wq: (0..config.heads).map(|_| normal(d, dk)).collect(),
                wk: (0..config.heads).map(|_| normal(d, dk)).collect(),
                wv: (0..config.heads).map(|_| normal(d, dk)).collect(),
                wo: normal(d, d),
                ln1_gain: Tensor::new(1, d, vec![1.0; d]),
                ln1_bias: Tensor::zeros(1, d),
                w1: normal(d, config.ffn_dim),
                b1: Tensor::zeros(1, config.ffn_dim),
                w2: normal(config.ffn_dim, d),
                b2: Tensor::zeros(1, d),
                ln2_gain: Tensor::new(1, d, vec![1.0; d]),
                ln2_bias: Tensor::zeros(1, d),
            });
        }
        let (disc_w, disc_b) = match head {
            HeadKind::Generator => (None, None),
            HeadKind::Discriminator => (Some(normal(d, 1)), Some(Tensor::zeros(1, 1))),
        };
        Ok(ModelGraph {
            config,
            head,
            token_emb,
            pos_emb,
            layers,
            disc_w,
            disc_b,
        })
    }

    /// Visit every parameter tensor in the fixed checkpoint order.
    pub fn visit(&self, mut f: impl FnMut(&str, &Tensor)) {
        f("token_emb", &self.token_emb);
        f("pos_emb", &self.pos_emb);
        for (i, layer) in self.layers.iter().enumerate() {
            for (h, t) in layer.wq.iter().enumerate() {
                f(&format!("layer{i}.wq{h}"), t);
            }
            for (h, t) in layer.wk.iter().enumerate() {
                f(&format!("layer{i}.wk{h}"), t);
            }
            for (h, t) in layer.wv.iter().enumerate() {
                f(&format!("layer{i}.wv{h}"), t);
            }
            f(&format!("layer{i}.wo"), &layer.wo);
            f(&format!("layer{i}.ln1_gain"), &layer.ln1_gain);
            f(&format!("layer{i}.ln1_bias"), &layer.ln1_bias);
            f(&format!("layer{i}.w1"), &layer.w1);
            f(&format!("layer{i}.b1"), &layer.b1);
            f(&format!("layer{i}.w2"), &layer.w2);
            f(&format!("layer{i}.b2"), &layer.b2);
            f(&format!("layer{i}.ln2_gain"), &layer.ln2_gain);
            f(&format!("layer{i}.ln2_bias"), &layer.ln2_bias);
        }
        if let (Some(w), Some(b)) = (&self.disc_w, &self.disc_b) {
            f("disc_w", w);
            f("disc_b", b);
        }
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        f("token_emb", &mut self.token_emb);
        f("pos_emb", &mut self.pos_emb);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (h, t) in layer.wq.iter_mut().enumerate() {
                f(&format!("layer{i}.wq{h}"), t);
            }
            for (h, t) in layer.wk.iter_mut().enumerate() {
                f(&format!("layer{i}.wk{h}"), t);
            }
            for (h, t) in layer.wv.iter_mut().enumerate() {
                f(&format!("layer{i}.wv{h}"), t);
            }
            f(&format!("layer{i}.wo"), &mut layer.wo);
            f(&format!("layer{i}.ln1_gain"), &mut layer.ln1_gain);
            f(&format!("layer{i}.ln1_bias"), &mut layer.ln1_bias);
            f(&format!("layer{i}.w1"), &mut layer.w1);
            f(&format!("layer{i}.b1"), &mut layer.b1);
            f(&format!("layer{i}.w2"), &mut layer.w2);
            f(&format!("layer{i}.b2"), &mut layer.b2);
            f(&format!("layer{i}.ln2_gain"), &mut layer.ln2_gain);
            f(&format!("layer{i}.ln2_bias"), &mut layer.ln2_bias);
        }
        if let (Some(w), Some(b)) = (&mut self.disc_w, &mut self.disc_b) {
            f("disc_w", w);
            f("disc_b", b);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.numel());
        n
    }
}

fn trunc_normal(rng: &mut rand_chacha::ChaCha8Rng, std: f64, clip_sigmas: f64) -> f64 {
    use rand::Rng;
    loop {
        let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
        let u2: f64 = rng.random();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        if z.abs() <= clip_sigmas {
            return z * std;
        }
    }
}

#[cfg(test)]
pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 4,
        hidden: 64,
        ffn_dim: 256,
        vocab: 2000,
        max_len: 128,
        guided_layers: 1,
        guided_heads: 2,
        activation: Activation::Gelu,
    }
}
