//! Masking policy, mis-prediction extraction, and the loss terms:
//! masked-token cross-entropy, replaced-token detection, and the
//! attention-guidance loss applied at mis-predicted positions.

mod guidance;
mod losses;
mod mask;
mod replace;

pub use guidance::{
    guidance_target, mpa_loss, ConstantGuidance, GroundTruthGuidance, GuidanceStrategy,
    MispredictionGuidance, StandardGuidance,
};
pub use losses::{discriminator_loss, generator_loss, total_loss, ScalarLoss};
pub use mask::{apply_mlm_mask, MaskPolicy};
pub use replace::{sample_from_logits, sample_replacements};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("loss weight {name} must be nonnegative, got {value}")]
    NegativeWeight { name: &'static str, value: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One sequence's masking state. `x_replaced` appears once the
/// generator has sampled; `mispredictions` indexes the masked positions
/// where the sample disagrees with the ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedBatch {
    pub x: Vec<u32>,
    pub x_masked: Vec<u32>,
    pub mask_positions: Vec<usize>,
    pub x_replaced: Option<Vec<u32>>,
    pub mispredictions: Vec<usize>,
    pub rng_seed: u64,
}

impl MaskedBatch {
    /// Recompute the mis-prediction set from scratch; used by tests to
    /// falsify the incremental bookkeeping.
    pub fn recompute_mispredictions(&self) -> Vec<usize> {
        match &self.x_replaced {
            Some(xr) => self
                .mask_positions
                .iter()
                .copied()
                .filter(|&t| xr[t] != self.x[t])
                .collect(),
            None => Vec::new(),
        }
    }
}
