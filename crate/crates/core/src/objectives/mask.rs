use rand::Rng;

use super::MaskedBatch;
use crate::corpus::{is_special, MASK, SPECIAL_TOKENS};
use crate::rng::{stream_for, Role};

/// How selected positions are rewritten.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskPolicy {
    /// 80% `[MASK]`, 10% a random non-special token, 10% unchanged.
    Bert,
    /// Every selected position becomes `[MASK]`.
    ElectraGen,
}

/// Select each non-special position independently with `mask_prob` and
/// rewrite it per `policy`. Deterministic for a given seed; the seed is
/// recorded on the batch.
pub fn apply_mlm_mask(
    x: &[u32],
    policy: MaskPolicy,
    mask_prob: f64,
    vocab_size: u32,
    seed: u64,
) -> MaskedBatch {
    assert!(!x.is_empty(), "cannot mask an empty sequence");
    assert!((0.0..=1.0).contains(&mask_prob));
    assert!(
        vocab_size > SPECIAL_TOKENS.len() as u32,
        "need at least one maskable token type"
    );
    let mut rng = stream_for(seed, Role::Mask);
    let mut x_masked = x.to_vec();
    let mut mask_positions = Vec::new();
    for (i, &tok) in x.iter().enumerate() {
        if is_special(tok) {
            continue;
        }
        if rng.random::<f64>() >= mask_prob {
            continue;
        }
        mask_positions.push(i);
        match policy {
            MaskPolicy::ElectraGen => x_masked[i] = MASK,
            MaskPolicy::Bert => {
                let r: f64 = rng.random();
                if r < 0.8 {
                    x_masked[i] = MASK;
                } else if r < 0.9 {
                    x_masked[i] =
                        rng.random_range(SPECIAL_TOKENS.len() as u32..vocab_size);
                }
                // else: keep the original token
            }
        }
    }
    MaskedBatch {
        x: x.to_vec(),
        x_masked,
        mask_positions,
        x_replaced: None,
        mispredictions: Vec::new(),
        rng_seed: seed,
    }
}
