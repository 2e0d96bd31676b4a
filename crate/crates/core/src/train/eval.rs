//! Held-out evaluation: masked-token accuracy and perplexity for the
//! MLM model, replaced-token detection accuracy for the discriminator,
//! guided-head attention-mass splits at mis-predicted positions, and
//! the planted-trap metrics the directional experiment compares.

use serde::{Deserialize, Serialize};

use super::{lookup, Backbone, TrainError, TrainState};
use crate::cooccur::ContextMatrix;
use crate::corpus::{is_special, tokenize, PackedSequence, TrapSentence, TrapSpec, Vocabulary,
    CLS, MASK, PAD};
use crate::model::{bind, forward, BoundModel, ForwardOutput, ModelGraph};
use crate::objectives::{apply_mlm_mask, sample_replacements, MaskPolicy, MaskedBatch};
use crate::rng;
use crate::tensor::Tape;

pub struct EvalOptions<'a> {
    /// Cap on held-out sequences consumed.
    pub max_sequences: usize,
    pub seed: u64,
    pub context: Option<&'a ContextMatrix>,
    pub trap: Option<(&'a TrapSpec, &'a [TrapSentence])>,
}

const EVAL_SEED_DEFAULT: u64 = 0xE7A1;

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        EvalOptions {
            max_sequences: 64,
            seed: EVAL_SEED_DEFAULT,
            context: None,
            trap: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionMassReport {
    /// Mean guided-head attention mass on keys with S ≥ 0.5.
    pub frequent: f64,
    /// Mean mass on in-sub-vocabulary keys with S < 0.5.
    pub rare: f64,
    /// Mean mass on specials and out-of-sub-vocabulary keys.
    pub other: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrapReport {
    /// MLM fill accuracy at the trap slot.
    pub cloze_accuracy: f64,
    /// Detection accuracy at the trap slot over a balanced
    /// replaced/original split; absent on the one-model backbone.
    pub detection_accuracy: Option<f64>,
    /// Mean guided-head mass on rare context — in-sub-vocabulary keys
    /// with S < 0.5 against the planted distractor — measured from the
    /// trap-slot query with the distractor planted there.
    pub rare_context_mass: f64,
    /// Mean mass on the cue token alone (a subset of the rare mass).
    pub cue_mass: f64,
    /// Mean mass on keys with S ≥ 0.5 (the frequent co-occurrents).
    pub frequent_mass: f64,
    pub other_mass: f64,
    pub traps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mlm_accuracy: f64,
    pub mean_masked_ce: f64,
    pub mlm_perplexity: f64,
    pub masked_positions: usize,
    pub detection_accuracy: Option<f64>,
    pub detection_positions: usize,
    pub attention_mass: Option<AttentionMassReport>,
    pub trap: Option<TrapReport>,
}

struct MassAccumulator {
    frequent: f64,
    rare: f64,
    other: f64,
    samples: usize,
}

impl MassAccumulator {
    fn new() -> Self {
        MassAccumulator {
            frequent: 0.0,
            rare: 0.0,
            other: 0.0,
            samples: 0,
        }
    }

    fn add(&mut self, frequent: f64, rare: f64, other: f64) {
        self.frequent += frequent;
        self.rare += rare;
        self.other += other;
        self.samples += 1;
    }

    fn report(&self) -> Option<AttentionMassReport> {
        (self.samples > 0).then(|| AttentionMassReport {
            frequent: self.frequent / self.samples as f64,
            rare: self.rare / self.samples as f64,
            other: self.other / self.samples as f64,
            samples: self.samples,
        })
    }
}

/// Run the probe on frozen parameters; dropout is disabled throughout.
pub fn eval_probe(
    state: &TrainState,
    heldout: &[PackedSequence],
    vocab: &Vocabulary,
    opts: &EvalOptions,
) -> Result<EvalReport, TrainError> {
    let mode = lookup(&state.config.mode)
        .ok_or_else(|| TrainError::UnknownMode(state.config.mode.clone()))?;
    let backbone = mode.backbone();
    let vocab_size = state.models.main.config.vocab;

    let mut correct = 0usize;
    let mut masked = 0usize;
    let mut ce_sum = 0.0f64;
    let mut det = DetectionScores::new();
    let mut mass = MassAccumulator::new();

    let policy = match backbone {
        Backbone::Bert => MaskPolicy::Bert,
        Backbone::Electra => MaskPolicy::ElectraGen,
    };

    for (idx, seq) in heldout.iter().take(opts.max_sequences).enumerate() {
        let mask_seed = rng::mix(&[opts.seed, idx as u64, 0xE1]);
        let mut batch = apply_mlm_mask(&seq.ids, policy, state.config.mask_prob, vocab_size as u32,
            mask_seed);
        if batch.mask_positions.is_empty() {
            continue;
        }

        let mut tape = Tape::new();
        let (mlm_model, mlm_is_aux): (&ModelGraph, bool) = match backbone {
            Backbone::Bert => (&state.models.main, false),
            Backbone::Electra => (
                state
                    .models
                    .aux
                    .as_ref()
                    .ok_or_else(|| TrainError::Config("two-model backbone without generator".into()))?,
                true,
            ),
        };
        let mlm_bound = bind(&mut tape, mlm_model);
        let out = forward(&mut tape, &mlm_bound, &batch.x_masked, None)?;
        let logits_id = out.token_logits.expect("token head");
        let logits = tape.data(logits_id);
        for &t in &batch.mask_positions {
            let row = &logits[t * vocab_size..(t + 1) * vocab_size];
            let truth = batch.x[t] as usize;
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .expect("non-empty row");
            if argmax == truth {
                correct += 1;
            }
            ce_sum += neg_log_softmax(row, truth);
            masked += 1;
        }

        // replaced-token detection plus attention masses on the guided
        // model's input
        if let Backbone::Electra = backbone {
            debug_assert!(mlm_is_aux);
            let gen_logits = tape.data(logits_id).to_vec();
            sample_replacements(&gen_logits, vocab_size, &mut batch, 0xE2, false);
            let xr = batch.x_replaced.clone().expect("sampled");
            let disc_bound = bind(&mut tape, &state.models.main);
            let disc_out = forward(&mut tape, &disc_bound, &xr, None)?;
            let realness = tape.data(disc_out.realness_logits.expect("realness head"));
            for t in 1..batch.x.len() {
                if batch.x[t] == PAD {
                    continue;
                }
                det.record(xr[t] == batch.x[t], sigmoid(realness[t]));
            }
            if let Some(context) = opts.context {
                accumulate_masses(&tape, &disc_out, &batch, &xr, context, &mut mass);
            }
        } else if let (Some(aux), Some(context)) = (&state.models.aux, opts.context) {
            // one-model backbone with a generator: mis-predictions come
            // from the generator, the guided model consumes x^m
            let aux_bound = bind(&mut tape, aux);
            let aux_out = forward(&mut tape, &aux_bound, &batch.x_masked, None)?;
            let gen_logits = tape.data(aux_out.token_logits.expect("token head")).to_vec();
            sample_replacements(&gen_logits, vocab_size, &mut batch, 0xE2, false);
            let keys = batch.x_masked.clone();
            accumulate_masses(&tape, &out, &batch, &keys, context, &mut mass);
        }
    }

    let trap = match opts.trap {
        Some((spec, traps)) if !traps.is_empty() => Some(trap_metrics(
            state,
            backbone,
            spec,
            traps,
            vocab,
            opts.context,
        )?),
        _ => None,
    };

    let mean_ce = if masked > 0 { ce_sum / masked as f64 } else { 0.0 };
    Ok(EvalReport {
        mlm_accuracy: if masked > 0 {
            correct as f64 / masked as f64
        } else {
            0.0
        },
        mean_masked_ce: mean_ce,
        mlm_perplexity: mean_ce.exp(),
        masked_positions: masked,
        detection_accuracy: det.accuracy(),
        detection_positions: det.total(),
        attention_mass: mass.report(),
        trap,
    })
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Balanced detection accuracy with a self-calibrated threshold.
///
/// Replaced positions are a small minority during training, so the
/// realness probabilities crowd toward the original-class prior and a
/// fixed 0.5 cut classifies everything as original. Thresholding at the
/// mean evaluated probability — the model's own estimate of that prior
/// — recovers the likelihood-ratio decision without touching labels,
/// and the per-class mean keeps chance at 0.5 under any class mix.
struct DetectionScores {
    scores: Vec<(bool, f64)>,
}

impl DetectionScores {
    fn new() -> Self {
        DetectionScores { scores: Vec::new() }
    }

    fn record(&mut self, original: bool, prob_original: f64) {
        self.scores.push((original, prob_original));
    }

    fn total(&self) -> usize {
        self.scores.len()
    }

    fn accuracy(&self) -> Option<f64> {
        if self.scores.is_empty() {
            return None;
        }
        let tau =
            self.scores.iter().map(|(_, p)| p).sum::<f64>() / self.scores.len() as f64;
        let mut orig = (0usize, 0usize);
        let mut repl = (0usize, 0usize);
        for &(original, p) in &self.scores {
            if original {
                orig.1 += 1;
                if p > tau {
                    orig.0 += 1;
                }
            } else {
                repl.1 += 1;
                if p <= tau {
                    repl.0 += 1;
                }
            }
        }
        let mut rates = Vec::new();
        if orig.1 > 0 {
            rates.push(orig.0 as f64 / orig.1 as f64);
        }
        if repl.1 > 0 {
            rates.push(repl.0 as f64 / repl.1 as f64);
        }
        Some(rates.iter().sum::<f64>() / rates.len() as f64)
    }
}

fn neg_log_softmax(row: &[f64], target: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
    sum.ln() - (row[target] - max)
}

/// Split one guided attention row into frequent/rare/other mass by the
/// context coefficients of the mis-predicted token. The query's own
/// position counts as other: self-attention is not context, and the
/// zero diagonal of S would otherwise file it under rare.
fn accumulate_masses(
    tape: &Tape,
    guided_out: &ForwardOutput,
    batch: &MaskedBatch,
    keys: &[u32],
    context: &ContextMatrix,
    acc: &mut MassAccumulator,
) {
    let xr = match &batch.x_replaced {
        Some(xr) => xr,
        None => return,
    };
    let n = keys.len();
    for &t in &batch.mispredictions {
        let Some(s_vec) = context.fetch_context_vector(xr[t], keys) else {
            continue;
        };
        for slot in guided_out.guided_slots() {
            let probs = tape.data(slot.probs);
            let row = &probs[t * n..(t + 1) * n];
            let mut frequent = 0.0;
            let mut rare = 0.0;
            let mut other = 0.0;
            for (j, &p) in row.iter().enumerate() {
                if j == t || is_special(keys[j]) || !context.contains(keys[j]) {
                    other += p;
                } else if s_vec[j] >= 0.5 {
                    frequent += p;
                } else {
                    rare += p;
                }
            }
            acc.add(frequent, rare, other);
        }
    }
}

fn trap_metrics(
    state: &TrainState,
    backbone: Backbone,
    spec: &TrapSpec,
    traps: &[TrapSentence],
    vocab: &Vocabulary,
    context: Option<&ContextMatrix>,
) -> Result<TrapReport, TrainError> {
    let distractor = vocab.id(&spec.frequent_answer);
    let context_word = vocab.id(&spec.context_word);

    let mut cloze_correct = 0usize;
    let mut det = DetectionScores::new();
    let mut mass = MassAccumulator::new();
    let mut cue_mass_sum = 0.0f64;
    let mut cue_samples = 0usize;

    for (i, trap) in traps.iter().enumerate() {
        let toks = tokenize(&trap.text);
        let mut ids: Vec<u32> = Vec::with_capacity(toks.len() + 1);
        ids.push(CLS);
        ids.extend(toks.iter().map(|t| vocab.id(t)));
        let slot = trap.trap_index + 1;
        let cue = trap.cue_index + 1;
        let answer = vocab.id(&trap.answer);

        // cloze: mask the trap slot, ask the MLM model to fill it
        let mut cloze_ids = ids.clone();
        cloze_ids[slot] = MASK;
        let mut tape = Tape::new();
        let mlm_model = match backbone {
            Backbone::Bert => &state.models.main,
            Backbone::Electra => state
                .models
                .aux
                .as_ref()
                .ok_or_else(|| TrainError::Config("two-model backbone without generator".into()))?,
        };
        let mlm_bound = bind(&mut tape, mlm_model);
        let out = forward(&mut tape, &mlm_bound, &cloze_ids, None)?;
        let v = mlm_model.config.vocab;
        let logits = tape.data(out.token_logits.expect("token head"));
        let row = &logits[slot * v..(slot + 1) * v];
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(i, _)| i)
            .unwrap();
        if argmax == answer as usize {
            cloze_correct += 1;
        }

        // detection: balanced replaced/original at the trap slot
        if let Backbone::Electra = backbone {
            let replaced = i % 2 == 0;
            let mut det_ids = ids.clone();
            if replaced {
                det_ids[slot] = distractor;
            }
            let disc_bound = bind(&mut tape, &state.models.main);
            let disc_out = forward(&mut tape, &disc_bound, &det_ids, None)?;
            let realness = tape.data(disc_out.realness_logits.expect("realness head"));
            det.record(!replaced, sigmoid(realness[slot]));
        }

        // attention mass with the frequent distractor planted in the
        // trap slot, read from the guided model's heads; keys split by
        // their context coefficient against the planted token when a
        // context matrix is available, else by the pair tokens alone
        let mut planted = ids.clone();
        planted[slot] = distractor;
        let s_row = context.and_then(|c| c.fetch_context_vector(distractor, &planted));
        let guided_bound: BoundModel = bind(&mut tape, &state.models.main);
        let guided_out = forward(&mut tape, &guided_bound, &planted, None)?;
        let n = planted.len();
        for head in guided_out.guided_slots() {
            let probs = tape.data(head.probs);
            let row = &probs[slot * n..(slot + 1) * n];
            let mut rare = 0.0;
            let mut frequent = 0.0;
            let mut other = 0.0;
            for (j, &p) in row.iter().enumerate() {
                if j == cue {
                    cue_mass_sum += p;
                }
                // self-attention is not context
                let is_other = j == slot
                    || is_special(planted[j])
                    || context.is_some_and(|c| !c.contains(planted[j]));
                let is_frequent = match &s_row {
                    Some(s) => s[j] >= 0.5,
                    None => planted[j] == context_word || planted[j] == distractor,
                };
                if is_other {
                    other += p;
                } else if is_frequent {
                    frequent += p;
                } else {
                    rare += p;
                }
            }
            mass.add(frequent, rare, other);
            cue_samples += 1;
        }
    }

    let mass = mass.report().unwrap_or(AttentionMassReport {
        frequent: 0.0,
        rare: 0.0,
        other: 0.0,
        samples: 0,
    });
    Ok(TrapReport {
        cloze_accuracy: cloze_correct as f64 / traps.len() as f64,
        detection_accuracy: det.accuracy(),
        rare_context_mass: mass.rare,
        cue_mass: if cue_samples > 0 {
            cue_mass_sum / cue_samples as f64
        } else {
            0.0
        },
        frequent_mass: mass.frequent,
        other_mass: mass.other,
        traps: traps.len(),
    })
}
