//! The optimization loop: deterministic batch assembly, loss building
//! via [`step`], Adam with linear warmup/decay, metrics, checkpointing,
//! and the evaluation probe.

mod adam;
mod checkpoint;
mod eval;
mod fdcheck;
mod metrics;
mod mode;
mod step;

pub use adam::{adam_update, lr_schedule, AdamHyper, AdamState};
pub use checkpoint::{load_state, load_state_from, save_state, save_state_to};
pub use eval::{eval_probe, AttentionMassReport, EvalOptions, EvalReport, TrapReport};
pub use fdcheck::{check_step_gradients, FdCheck, FdReport};
pub use metrics::StepMetrics;
pub use mode::{
    lookup, mode_names, Backbone, TrainMode, DEFAULT_CONSTANT_BERT, DEFAULT_CONSTANT_ELECTRA,
};
pub use step::{build_step, BuiltStep, ModelSet, StepSpec};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PackedSequence, PAD, SPECIAL_TOKENS};
use crate::cooccur::ContextMatrix;
use crate::model::{Activation, HeadKind, ModelConfig, ModelError, ModelGraph};
use crate::objectives::{apply_mlm_mask, MaskPolicy, MaskedBatch, ObjectiveError};
use crate::rng::{self, Role};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("unknown mode {0:?}; known modes: {known}", known = mode_names().join(", "))]
    UnknownMode(String),
    #[error("config: {0}")]
    Config(String),
    #[error("mode {mode} needs a context matrix")]
    MissingContextMatrix { mode: String },
    #[error("non-finite gradient in tensor {tensor} at step {step}")]
    NumericAbort { tensor: String, step: u64 },
    #[error("trainer checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Architecture knobs for one of the two networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: String,
    pub steps: u64,
    pub batch_size: usize,
    pub max_len: usize,
    pub mask_prob: f64,
    pub lr_peak: f64,
    pub warmup_steps: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub lambda: f64,
    pub gamma: f64,
    /// Constant for the constant-vector guidance ablation; the mode
    /// default applies when unset.
    pub constant_c: Option<f64>,
    pub argmax_replacements: bool,
    pub guided_layers: usize,
    pub guided_heads: usize,
    pub activation: Activation,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub eval_every: u64,
    pub model: NetConfig,
    pub generator: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: "electra".into(),
            steps: 2000,
            batch_size: 16,
            max_len: 128,
            mask_prob: 0.15,
            lr_peak: 1e-4,
            warmup_steps: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-6,
            weight_decay: 0.01,
            dropout: 0.1,
            lambda: 50.0,
            gamma: 1.0,
            constant_c: None,
            argmax_replacements: false,
            guided_layers: 2,
            guided_heads: 2,
            activation: Activation::Gelu,
            seed: 42,
            checkpoint_every: 1000,
            eval_every: 500,
            model: NetConfig {
                layers: 4,
                heads: 4,
                hidden: 128,
                ffn_dim: 512,
            },
            // roughly a third of the main model's width
            generator: NetConfig {
                layers: 4,
                heads: 4,
                hidden: 48,
                ffn_dim: 192,
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<&'static dyn TrainMode, TrainError> {
        let mode = lookup(&self.mode).ok_or_else(|| TrainError::UnknownMode(self.mode.clone()))?;
        if self.warmup_steps > self.steps {
            return Err(TrainError::Config(format!(
                "warmup_steps {} exceeds steps {}",
                self.warmup_steps, self.steps
            )));
        }
        for (name, v) in [
            ("lr_peak", self.lr_peak),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("weight_decay", self.weight_decay),
            ("dropout", self.dropout),
            ("mask_prob", self.mask_prob),
        ] {
            if v < 0.0 {
                return Err(TrainError::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        Ok(mode)
    }

    fn model_config(&self, net: &NetConfig, vocab: usize, guided: bool) -> ModelConfig {
        ModelConfig {
            layers: net.layers,
            heads: net.heads,
            hidden: net.hidden,
            ffn_dim: net.ffn_dim,
            vocab,
            max_len: self.max_len,
            guided_layers: if guided { self.guided_layers } else { 0 },
            guided_heads: if guided { self.guided_heads } else { 0 },
            activation: self.activation,
        }
    }
}

/// Everything the loop owns: a resume from checkpoint reproduces the
/// remaining steps bitwise, because all randomness is keyed by
/// (seed, step, role) rather than carried state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub step: u64,
    pub models: ModelSet,
    pub adam_main: AdamState,
    pub adam_aux: Option<AdamState>,
}

pub struct TrainData<'a> {
    pub sequences: &'a [PackedSequence],
    pub context: Option<&'a ContextMatrix>,
}

/// Fresh models and optimizer state for a config. Model seeds derive
/// from the config seed the same way in every mode, so modes sharing a
/// backbone start from identical weights.
pub fn init_state(config: &TrainConfig, vocab_size: usize) -> Result<TrainState, TrainError> {
    let mode = config.validate()?;
    let main_head = match mode.backbone() {
        Backbone::Electra => HeadKind::Discriminator,
        Backbone::Bert => HeadKind::Generator,
    };
    let main_cfg = config.model_config(&config.model, vocab_size, true);
    let main = ModelGraph::init(main_cfg, main_head, rng::mix(&[config.seed, 0x11]))?;
    let aux = if mode.needs_aux_generator() {
        let gen_cfg = config.model_config(&config.generator, vocab_size, false);
        Some(ModelGraph::init(
            gen_cfg,
            HeadKind::Generator,
            rng::mix(&[config.seed, 0x22]),
        )?)
    } else {
        None
    };
    let main_lens: Vec<usize> = {
        let mut lens = Vec::new();
        main.visit(|_, t| lens.push(t.numel()));
        lens
    };
    let adam_aux = aux.as_ref().map(|a| {
        let mut lens = Vec::new();
        a.visit(|_, t| lens.push(t.numel()));
        AdamState::new(&lens)
    });
    Ok(TrainState {
        config: config.clone(),
        step: 0,
        models: ModelSet { main, aux },
        adam_main: AdamState::new(&main_lens),
        adam_aux,
    })
}

/// Assemble the batch for a step: sequence sampling, PAD-padding to the
/// batch maximum, and masking, all keyed by (seed, step).
pub fn build_batches(
    config: &TrainConfig,
    backbone: Backbone,
    sequences: &[PackedSequence],
    vocab_size: usize,
    step: u64,
) -> Vec<MaskedBatch> {
    assert!(!sequences.is_empty(), "no training sequences");
    let mut rng = rng::stream(config.seed, step, Role::BatchSelect);
    let idxs: Vec<usize> = (0..config.batch_size)
        .map(|_| rng.random_range(0..sequences.len()))
        .collect();
    let width = idxs.iter().map(|&i| sequences[i].len()).max().unwrap();
    let policy = match backbone {
        Backbone::Bert => MaskPolicy::Bert,
        Backbone::Electra => MaskPolicy::ElectraGen,
    };
    idxs.iter()
        .enumerate()
        .map(|(slot, &si)| {
            let mut ids = sequences[si].ids.clone();
            ids.resize(width, PAD);
            let mask_seed = rng::mix(&[config.seed, step, slot as u64, 0x33]);
            apply_mlm_mask(&ids, policy, config.mask_prob, vocab_size as u32, mask_seed)
        })
        .collect()
}

/// Run steps `state.step..until_step`, invoking `on_metrics` once per
/// step. The callback runs before the parameter update is applied to
/// the next step's graph, but after this step's update.
pub fn train_steps(
    state: &mut TrainState,
    data: &TrainData,
    until_step: u64,
    mut on_metrics: impl FnMut(&StepMetrics),
) -> Result<(), TrainError> {
    let mode = state.config.validate()?;
    if mode.requires_context_matrix() && data.context.is_none() {
        return Err(TrainError::MissingContextMatrix {
            mode: mode.name().into(),
        });
    }
    let vocab_size = state.models.main.config.vocab;
    assert!(
        vocab_size > SPECIAL_TOKENS.len(),
        "vocabulary must contain real tokens"
    );
    let guidance = mode.guidance(&state.config);
    let hyper = AdamHyper {
        beta1: state.config.adam_beta1,
        beta2: state.config.adam_beta2,
        eps: state.config.adam_eps,
        weight_decay: state.config.weight_decay,
    };

    while state.step < until_step {
        let step = state.step;
        let mut batches = build_batches(
            &state.config,
            mode.backbone(),
            data.sequences,
            vocab_size,
            step,
        );
        let mut tape = crate::tensor::Tape::new();
        let spec = StepSpec {
            backbone: mode.backbone(),
            guidance: guidance.as_deref(),
            lambda: state.config.lambda,
            gamma: state.config.gamma,
            argmax_replacements: state.config.argmax_replacements,
            dropout: state.config.dropout,
            seed: state.config.seed,
            step,
            frozen_guidance: None,
        };
        let built = build_step(&mut tape, &state.models, &mut batches, data.context, &spec)?;
        tape.backward(built.total)?;

        let rate = lr_schedule(step + 1, state.config.warmup_steps, state.config.steps,
            state.config.lr_peak);
        apply_update(state, &tape, &built, rate, &hyper, step)?;

        let l_g = tape.scalar(built.l_g);
        let l_d = built.l_d.map(|id| tape.scalar(id));
        let l_a = built.l_a.map(|id| tape.scalar(id));
        let metrics = StepMetrics {
            step,
            lr: rate,
            l_g,
            l_d,
            l_a,
            total: tape.scalar(built.total),
            misprediction_rate: if state.models.aux.is_some() && built.mask_count > 0 {
                Some(built.mispred_count as f64 / built.mask_count as f64)
            } else {
                None
            },
        };
        state.step = step + 1;
        on_metrics(&metrics);
    }
    Ok(())
}

fn scan_non_finite(
    tape: &crate::tensor::Tape,
    binding: &crate::model::BoundModel,
    label: &str,
    model: &ModelGraph,
) -> Option<String> {
    let mut names = Vec::new();
    model.visit(|name, _| names.push(name.to_string()));
    for (i, &id) in binding.flat.iter().enumerate() {
        if let Some(g) = tape.grad(id) {
            if g.iter().any(|x| !x.is_finite()) {
                return Some(format!("{label}.{}", names[i]));
            }
        }
    }
    None
}

fn update_model(
    model: &mut ModelGraph,
    adam: &mut AdamState,
    binding: &crate::model::BoundModel,
    tape: &crate::tensor::Tape,
    rate: f64,
    hyper: &AdamHyper,
) {
    adam.t += 1;
    let t = adam.t;
    let mut idx = 0;
    model.visit_mut(|_, tensor| {
        let id = binding.flat[idx];
        let zero;
        let grad = match tape.grad(id) {
            Some(g) => g,
            None => {
                zero = vec![0.0; tensor.numel()];
                &zero
            }
        };
        adam_update(
            &mut tensor.data,
            grad,
            &mut adam.m[idx],
            &mut adam.v[idx],
            t,
            rate,
            hyper,
        );
        idx += 1;
    });
}

fn apply_update(
    state: &mut TrainState,
    tape: &crate::tensor::Tape,
    built: &BuiltStep,
    rate: f64,
    hyper: &AdamHyper,
    step: u64,
) -> Result<(), TrainError> {
    // abort before touching any parameter, so a crashed run's last
    // checkpoint stays usable
    if let Some(tensor) = scan_non_finite(tape, &built.main_binding, "main", &state.models.main)
    {
        return Err(TrainError::NumericAbort { tensor, step });
    }
    if let (Some(aux), Some(binding)) = (&state.models.aux, &built.aux_binding) {
        if let Some(tensor) = scan_non_finite(tape, binding, "generator", aux) {
            return Err(TrainError::NumericAbort { tensor, step });
        }
    }

    let TrainState {
        models,
        adam_main,
        adam_aux,
        ..
    } = state;
    update_model(&mut models.main, adam_main, &built.main_binding, tape, rate, hyper);
    if let (Some(aux), Some(adam), Some(binding)) = (
        models.aux.as_mut(),
        adam_aux.as_mut(),
        built.aux_binding.as_ref(),
    ) {
        update_model(aux, adam, binding, tape, rate, hyper);
    }
    Ok(())
}
