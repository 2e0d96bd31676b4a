//! Full-loss gradient checking: rebuild the exact step graph under
//! single-coordinate perturbations and compare central differences with
//! the tape's reverse pass. Replacement samples and guidance targets
//! are pinned at their base-point values — the former because sampling
//! is discrete, the latter because the target is defined as detached.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::step::{build_step, ModelSet, StepSpec};
use super::TrainError;
use crate::cooccur::ContextMatrix;
use crate::objectives::MaskedBatch;
use crate::tensor::gradcheck;
use crate::tensor::Tape;

pub struct FdCheck {
    pub sample_params: usize,
    pub step: f64,
    pub rel_tol: f64,
}

impl Default for FdCheck {
    fn default() -> Self {
        FdCheck {
            sample_params: 200,
            step: 1e-5,
            rel_tol: 1e-4,
        }
    }
}

#[derive(Debug)]
pub struct FdReport {
    pub checked: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    /// (tensor name, analytic, numeric) at the largest relative error.
    pub worst: (String, f64, f64),
}

/// Check `cfg.sample_params` randomly chosen parameter coordinates of
/// the full step loss. `batches` should be freshly masked; replacements
/// are sampled once here and then held fixed.
pub fn check_step_gradients(
    models: &ModelSet,
    batches: &[MaskedBatch],
    context: Option<&ContextMatrix>,
    spec: &StepSpec,
    cfg: &FdCheck,
    pick_rng: &mut ChaCha8Rng,
) -> Result<FdReport, TrainError> {
    assert_eq!(spec.dropout, 0.0, "gradient checks run without dropout");

    // base pass: fill x_replaced, capture guidance targets and analytic grads
    let mut base_batches = batches.to_vec();
    let mut tape = Tape::new();
    let built = build_step(&mut tape, models, &mut base_batches, context, spec)?;
    tape.backward(built.total)?;

    let frozen = built.guidance_targets.clone();
    let spec_frozen = StepSpec {
        frozen_guidance: Some(&frozen),
        ..*spec
    };

    // flatten both models' tensors as (label, tensor sizes)
    let mut names: Vec<String> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    models.main.visit(|n, t| {
        names.push(format!("main.{n}"));
        sizes.push(t.numel());
    });
    if let Some(aux) = &models.aux {
        aux.visit(|n, t| {
            names.push(format!("generator.{n}"));
            sizes.push(t.numel());
        });
    }
    let main_tensors = built.main_binding.flat.len();
    let analytic_for = |tensor_idx: usize, coord: usize| -> f64 {
        let id = if tensor_idx < main_tensors {
            built.main_binding.flat[tensor_idx]
        } else {
            built.aux_binding.as_ref().expect("aux gradients requested").flat
                [tensor_idx - main_tensors]
        };
        tape.grad(id).map_or(0.0, |g| g[coord])
    };

    let total_params: usize = sizes.iter().sum();
    let mut work = models.clone();
    let eval = |work: &mut ModelSet, tensor_idx: usize, coord: usize, delta: f64| -> f64 {
        set_coord(work, tensor_idx, coord, delta, main_tensors);
        let mut tape = Tape::new();
        let mut eval_batches = base_batches.clone();
        let built = build_step(&mut tape, work, &mut eval_batches, context, &spec_frozen)
            .expect("perturbed step build");
        let value = tape.scalar(built.total);
        set_coord(work, tensor_idx, coord, -delta, main_tensors);
        value
    };

    let mut checked = 0usize;
    let mut failures = 0usize;
    let mut max_rel = 0.0f64;
    let mut worst = (String::new(), 0.0, 0.0);
    for _ in 0..cfg.sample_params {
        let flat_coord = pick_rng.random_range(0..total_params);
        let (tensor_idx, coord) = locate(&sizes, flat_coord);
        let analytic = analytic_for(tensor_idx, coord);
        let plus = eval(&mut work, tensor_idx, coord, cfg.step);
        let minus = eval(&mut work, tensor_idx, coord, -cfg.step);
        let numeric = (plus - minus) / (2.0 * cfg.step);
        checked += 1;
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
        if rel > max_rel {
            max_rel = rel;
            worst = (names[tensor_idx].clone(), analytic, numeric);
        }
        if !gradcheck::grads_close(analytic, numeric, cfg.rel_tol) {
            failures += 1;
        }
    }
    Ok(FdReport {
        checked,
        failures,
        max_rel_error: max_rel,
        worst,
    })
}

fn locate(sizes: &[usize], mut flat: usize) -> (usize, usize) {
    for (i, &n) in sizes.iter().enumerate() {
        if flat < n {
            return (i, flat);
        }
        flat -= n;
    }
    unreachable!("coordinate out of range");
}

fn set_coord(models: &mut ModelSet, tensor_idx: usize, coord: usize, delta: f64, main_tensors: usize) {
    let mut idx = 0;
    if tensor_idx < main_tensors {
        models.main.visit_mut(|_, t| {
            if idx == tensor_idx {
                t.data[coord] += delta;
            }
            idx += 1;
        });
    } else {
        let target = tensor_idx - main_tensors;
        models
            .aux
            .as_mut()
            .expect("aux coordinate requested")
            .visit_mut(|_, t| {
                if idx == target {
                    t.data[coord] += delta;
                }
                idx += 1;
            });
    }
}
