//! One training step's loss graph, shared verbatim by the optimizer
//! loop and the finite-difference harness: the oracle must measure the
//! exact computation the trainer differentiates.

use super::mode::Backbone;
use super::TrainError;
use crate::cooccur::ContextMatrix;
use crate::model::{bind, forward, BoundModel, Dropout, ModelGraph};
use crate::objectives::{
    discriminator_loss, generator_loss, mpa_loss, sample_replacements, total_loss,
    GuidanceStrategy, MaskedBatch, MispredictionGuidance, ScalarLoss,
};
use crate::rng::{stream, Role};
use crate::tensor::{Tape, TensorId};

/// The main model plus the small auxiliary generator, when the mode
/// trains one.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub main: ModelGraph,
    pub aux: Option<ModelGraph>,
}

pub struct StepSpec<'a> {
    pub backbone: Backbone,
    pub guidance: Option<&'a dyn GuidanceStrategy>,
    pub lambda: f64,
    pub gamma: f64,
    pub argmax_replacements: bool,
    /// 0.0 disables dropout (eval, gradient checks).
    pub dropout: f64,
    pub seed: u64,
    pub step: u64,
    /// Guidance targets pinned by the finite-difference harness, in
    /// case order as produced by a previous identical build.
    pub frozen_guidance: Option<&'a [Vec<Vec<f64>>]>,
}

pub struct BuiltStep {
    pub total: TensorId,
    pub l_g: TensorId,
    pub l_d: Option<TensorId>,
    pub l_a: Option<TensorId>,
    pub main_binding: BoundModel,
    pub aux_binding: Option<BoundModel>,
    /// The guidance targets each case actually used, for freezing.
    pub guidance_targets: Vec<Vec<Vec<f64>>>,
    pub mask_count: usize,
    pub mispred_count: usize,
    /// Mis-predictions that produced a guidance case (in-sub-vocabulary).
    pub applicable_count: usize,
}

/// Weighted mean of per-sequence means: each term counts by how many
/// positions it averaged over, so pooling equals one mean over all
/// positions in the batch.
fn pool(tape: &mut Tape, terms: &[ScalarLoss]) -> Result<ScalarLoss, TrainError> {
    let total: usize = terms.iter().map(|t| t.count).sum();
    if total == 0 {
        return Ok(ScalarLoss {
            value: tape.constant_scalar(0.0),
            count: 0,
        });
    }
    let mut value = tape.constant_scalar(0.0);
    for term in terms {
        if term.count == 0 {
            continue;
        }
        let weighted = tape.scale(term.value, term.count as f64 / total as f64);
        value = tape.add(value, weighted)?;
    }
    Ok(ScalarLoss {
        value,
        count: total,
    })
}

/// Build the complete loss graph for one batch. Sequences that already
/// carry `x_replaced` keep it (the harness pre-samples once and then
/// perturbs parameters); fresh batches sample from the generator's
/// current detached logits.
pub fn build_step(
    tape: &mut Tape,
    models: &ModelSet,
    batches: &mut [MaskedBatch],
    context: Option<&ContextMatrix>,
    spec: &StepSpec,
) -> Result<BuiltStep, TrainError> {
    let vocab = models.main.config.vocab;
    let guidance_active = spec.guidance.is_some() && spec.gamma > 0.0;
    let strategy = if guidance_active {
        let s = spec.guidance.expect("checked above");
        if context.is_none() {
            return Err(TrainError::Config(
                "guidance needs a context matrix".into(),
            ));
        }
        Some(s)
    } else {
        None
    };

    let main_binding = bind(tape, &models.main);
    let aux_binding = models.aux.as_ref().map(|m| bind(tape, m));

    let mut drop_main = stream(spec.seed, spec.step, Role::DropoutMain);
    let mut drop_aux = stream(spec.seed, spec.step, Role::DropoutAux);
    fn make_dropout(rate: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Option<Dropout<'_>> {
        (rate > 0.0).then_some(Dropout { rate, rng })
    }

    let mut main_terms = Vec::new();
    let mut aux_terms = Vec::new();
    let mut disc_terms = Vec::new();
    let mut cases: Vec<MispredictionGuidance> = Vec::new();
    let mut mask_count = 0usize;
    let mut mispred_count = 0usize;
    let mut applicable_count = 0usize;

    for batch in batches.iter_mut() {
        mask_count += batch.mask_positions.len();
        match spec.backbone {
            Backbone::Electra => {
                let aux = aux_binding
                    .as_ref()
                    .ok_or_else(|| TrainError::Config("two-model backbone without generator".into()))?;
                let gen_out = forward(tape, aux, &batch.x_masked, make_dropout(spec.dropout, &mut drop_aux))?;
                let gen_logits = gen_out.token_logits.expect("generator head");
                aux_terms.push(generator_loss(tape, gen_logits, batch)?);
                if batch.x_replaced.is_none() {
                    let logits = tape.data(gen_logits).to_vec();
                    sample_replacements(
                        &logits,
                        vocab,
                        batch,
                        spec.step,
                        spec.argmax_replacements,
                    );
                }
                mispred_count += batch.mispredictions.len();
                let xr = batch.x_replaced.clone().expect("sampled above");
                let disc_out = forward(tape, &main_binding, &xr, make_dropout(spec.dropout, &mut drop_main))?;
                let realness = disc_out.realness_logits.expect("discriminator head");
                disc_terms.push(discriminator_loss(tape, realness, batch)?);
                if let Some(strategy) = strategy {
                    collect_cases(
                        tape,
                        strategy,
                        context.expect("validated above"),
                        batch,
                        &xr,
                        &disc_out,
                        &mut cases,
                        &mut applicable_count,
                        spec.frozen_guidance,
                    );
                }
            }
            Backbone::Bert => {
                let main_out =
                    forward(tape, &main_binding, &batch.x_masked, make_dropout(spec.dropout, &mut drop_main))?;
                let main_logits = main_out.token_logits.expect("masked-token head");
                main_terms.push(generator_loss(tape, main_logits, batch)?);
                if let Some(aux) = aux_binding.as_ref() {
                    let gen_out =
                        forward(tape, aux, &batch.x_masked, make_dropout(spec.dropout, &mut drop_aux))?;
                    let gen_logits = gen_out.token_logits.expect("generator head");
                    aux_terms.push(generator_loss(tape, gen_logits, batch)?);
                    if batch.x_replaced.is_none() {
                        let logits = tape.data(gen_logits).to_vec();
                        sample_replacements(
                            &logits,
                            vocab,
                            batch,
                            spec.step,
                            spec.argmax_replacements,
                        );
                    }
                    mispred_count += batch.mispredictions.len();
                    if let Some(strategy) = strategy {
                        // the guided model consumes x^m, so context keys
                        // come from x^m; MASK and the other specials
                        // fetch S = 0 there
                        let keys = batch.x_masked.clone();
                        collect_cases(
                            tape,
                            strategy,
                            context.expect("validated above"),
                            batch,
                            &keys,
                            &main_out,
                            &mut cases,
                            &mut applicable_count,
                            spec.frozen_guidance,
                        );
                    }
                }
            }
        }
    }

    let l_g = match spec.backbone {
        Backbone::Electra => pool(tape, &aux_terms)?.value,
        Backbone::Bert => {
            let main = pool(tape, &main_terms)?.value;
            if aux_terms.is_empty() {
                main
            } else {
                let aux = pool(tape, &aux_terms)?.value;
                tape.add(main, aux)?
            }
        }
    };
    let l_d = match spec.backbone {
        Backbone::Electra => Some(pool(tape, &disc_terms)?.value),
        Backbone::Bert => None,
    };
    let mut guidance_targets = Vec::new();
    let l_a = if strategy.is_some() {
        Some(mpa_loss(tape, &cases, Some(&mut guidance_targets))?)
    } else {
        None
    };

    let lambda = if l_d.is_some() { spec.lambda } else { 0.0 };
    let total = total_loss(tape, l_g, l_d, l_a, lambda, spec.gamma)?;

    Ok(BuiltStep {
        total,
        l_g,
        l_d,
        l_a,
        main_binding,
        aux_binding,
        guidance_targets,
        mask_count,
        mispred_count,
        applicable_count,
    })
}

#[allow(clippy::too_many_arguments)]
fn collect_cases(
    tape: &Tape,
    strategy: &dyn GuidanceStrategy,
    context: &ContextMatrix,
    batch: &MaskedBatch,
    keys: &[u32],
    guided_out: &crate::model::ForwardOutput,
    cases: &mut Vec<MispredictionGuidance>,
    applicable: &mut usize,
    frozen: Option<&[Vec<Vec<f64>>]>,
) {
    let _ = tape;
    let xr = batch.x_replaced.as_ref().expect("mis-predictions need x^r");
    for &t in &batch.mispredictions {
        let mispredicted = xr[t];
        let truth = batch.x[t];
        let Some(s_vec) = strategy.context_vector(context, mispredicted, truth, keys) else {
            continue;
        };
        *applicable += 1;
        let rows: Vec<(TensorId, usize)> =
            guided_out.guided_slots().map(|s| (s.logits, t)).collect();
        let frozen_targets = frozen.map(|f| f[cases.len()].clone());
        cases.push(MispredictionGuidance {
            s_vec,
            rows,
            frozen_targets,
        });
    }
}
