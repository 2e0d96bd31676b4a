use crate::cooccur::ContextMatrix;
use crate::corpus::is_special;
use crate::tensor::{Tape, TensorError, TensorId};

/// How the context vector for a mis-predicted query is produced. The
/// three variants are interchangeable at runtime; the trainer selects
/// one per mode.
pub trait GuidanceStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Context coefficients over the key tokens for one mis-prediction,
    /// or `None` when guidance does not apply there (the attention head
    /// then trains exactly as the backbone would).
    fn context_vector(
        &self,
        context: &ContextMatrix,
        mispredicted: u32,
        ground_truth: u32,
        keys: &[u32],
    ) -> Option<Vec<f64>>;
}

/// Fetch the mis-predicted token's own row of S.
pub struct StandardGuidance;

impl GuidanceStrategy for StandardGuidance {
    fn name(&self) -> &'static str {
        "standard"
    }

    fn context_vector(
        &self,
        context: &ContextMatrix,
        mispredicted: u32,
        _ground_truth: u32,
        keys: &[u32],
    ) -> Option<Vec<f64>> {
        context.fetch_context_vector(mispredicted, keys)
    }
}

/// Fetch the ground-truth token's row instead of the mis-prediction's.
pub struct GroundTruthGuidance;

impl GuidanceStrategy for GroundTruthGuidance {
    fn name(&self) -> &'static str {
        "ground"
    }

    fn context_vector(
        &self,
        context: &ContextMatrix,
        _mispredicted: u32,
        ground_truth: u32,
        keys: &[u32],
    ) -> Option<Vec<f64>> {
        context.fetch_context_vector(ground_truth, keys)
    }
}

/// Replace the fetched row by a constant at every in-sub-vocabulary,
/// non-special key. Needs no row lookup, so it applies at every
/// mis-prediction regardless of coverage.
pub struct ConstantGuidance {
    pub value: f64,
}

impl GuidanceStrategy for ConstantGuidance {
    fn name(&self) -> &'static str {
        "constant"
    }

    fn context_vector(
        &self,
        context: &ContextMatrix,
        _mispredicted: u32,
        _ground_truth: u32,
        keys: &[u32],
    ) -> Option<Vec<f64>> {
        Some(
            keys.iter()
                .map(|&k| {
                    if !is_special(k) && context.contains(k) {
                        self.value
                    } else {
                        0.0
                    }
                })
                .collect(),
        )
    }
}

/// The guidance target: detached attention logits scaled elementwise by
/// (1 − S). Plain numbers in, plain numbers out — gradients never flow
/// through the target.
pub fn guidance_target(logits_row: &[f64], s: &[f64]) -> Vec<f64> {
    debug_assert_eq!(logits_row.len(), s.len());
    logits_row
        .iter()
        .zip(s.iter())
        .map(|(&a, &sv)| a * (1.0 - sv))
        .collect()
}

/// One applicable mis-prediction: its context vector and the guided
/// (layer, head) attention-logit tensors with the query row to regress.
pub struct MispredictionGuidance {
    pub s_vec: Vec<f64>,
    /// (full [N, N] pre-softmax logits of a guided head, query row index)
    pub rows: Vec<(TensorId, usize)>,
    /// Targets pinned to earlier values, one per row. The finite-
    /// difference harness uses this to hold g at its base-point numbers
    /// while parameters are perturbed; normal training leaves it `None`
    /// and recomputes g from the current detached logits.
    pub frozen_targets: Option<Vec<Vec<f64>>>,
}

/// Squared distance between each guided row and its target, meaned over
/// key positions, then over guided slots, then over mis-predictions.
/// No applicable mis-predictions means a constant 0. The targets each
/// row actually used are appended to `used_targets` in visit order.
pub fn mpa_loss(
    tape: &mut Tape,
    cases: &[MispredictionGuidance],
    mut used_targets: Option<&mut Vec<Vec<Vec<f64>>>>,
) -> Result<TensorId, TensorError> {
    if cases.is_empty() {
        return Ok(tape.constant_scalar(0.0));
    }
    let mut total = tape.constant_scalar(0.0);
    let case_w = 1.0 / cases.len() as f64;
    for case in cases {
        debug_assert!(!case.rows.is_empty());
        let slot_w = case_w / case.rows.len() as f64;
        let mut case_targets = Vec::new();
        for (ri, &(slot_logits, query)) in case.rows.iter().enumerate() {
            let row = tape.gather_rows(slot_logits, vec![query])?;
            let g = match &case.frozen_targets {
                Some(frozen) => frozen[ri].clone(),
                None => guidance_target(tape.data(row), &case.s_vec),
            };
            if used_targets.is_some() {
                case_targets.push(g.clone());
            }
            let g = tape.constant_row(g);
            let diff = tape.sub(row, g)?;
            let sq = tape.mul(diff, diff)?;
            let mean = tape.mean_all(sq);
            let weighted = tape.scale(mean, slot_w);
            total = tape.add(total, weighted)?;
        }
        if let Some(sink) = used_targets.as_mut() {
            sink.push(case_targets);
        }
    }
    Ok(total)
}
