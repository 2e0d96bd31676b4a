use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::MaskedBatch;
use crate::rng::{stream, Role};

/// Draw one token from the softmax of a logits row (temperature 1).
/// Stable: row max subtracted before exponentiation; the walk over the
/// cumulative mass runs in ascending id order.
pub fn sample_from_logits(row: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let exps: Vec<f64> = row
        .iter()
        .map(|&z| {
            let e = (z - max).exp();
            total += e;
            e
        })
        .collect();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, e) in exps.iter().enumerate() {
        acc += e;
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

/// Fill `x_replaced` by sampling the generator's distribution at every
/// masked position (argmax when `argmax` is set), and collect the
/// mis-predicted positions. The logits are used as plain numbers: no
/// gradient reaches the generator through the draw.
pub fn sample_replacements(
    gen_logits: &[f64],
    vocab: usize,
    batch: &mut MaskedBatch,
    step_seed: u64,
    argmax: bool,
) {
    debug_assert_eq!(gen_logits.len(), batch.x.len() * vocab);
    let mut rng = stream(batch.rng_seed, step_seed, Role::Replace);
    let mut xr = batch.x.clone();
    for &t in &batch.mask_positions {
        let row = &gen_logits[t * vocab..(t + 1) * vocab];
        let tok = if argmax {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .expect("non-empty vocabulary")
        } else {
            sample_from_logits(row, &mut rng)
        };
        xr[t] = tok as u32;
    }
    batch.mispredictions = batch
        .mask_positions
        .iter()
        .copied()
        .filter(|&t| xr[t] != batch.x[t])
        .collect();
    batch.x_replaced = Some(xr);
}
