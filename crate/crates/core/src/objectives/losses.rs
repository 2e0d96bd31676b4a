use super::{MaskedBatch, ObjectiveError};
use crate::corpus::PAD;
use crate::tensor::{Tape, TensorError, TensorId};

/// A scalar loss term plus the number of contributions it averaged
/// over; zero contributions means the term is a constant 0.
#[derive(Debug, Clone, Copy)]
pub struct ScalarLoss {
    pub value: TensorId,
    pub count: usize,
}

/// Masked-token cross-entropy: mean of −log p(x_t | x^m) over the mask
/// positions only. An empty mask set yields a constant 0 and
/// `count == 0` so the caller can surface a warning.
pub fn generator_loss(
    tape: &mut Tape,
    token_logits: TensorId,
    batch: &MaskedBatch,
) -> Result<ScalarLoss, TensorError> {
    if batch.mask_positions.is_empty() {
        return Ok(ScalarLoss {
            value: tape.constant_scalar(0.0),
            count: 0,
        });
    }
    let rows = tape.gather_rows(token_logits, batch.mask_positions.clone())?;
    let targets: Vec<usize> = batch
        .mask_positions
        .iter()
        .map(|&t| batch.x[t] as usize)
        .collect();
    let value = tape.cross_entropy_rows(rows, targets)?;
    Ok(ScalarLoss {
        value,
        count: batch.mask_positions.len(),
    })
}

/// Replaced-token detection: binary cross-entropy of the per-position
/// realness logits, label 1 where the sequence still holds the original
/// token. `[CLS]` (position 0) and PAD positions are excluded from the
/// average.
pub fn discriminator_loss(
    tape: &mut Tape,
    realness_logits: TensorId,
    batch: &MaskedBatch,
) -> Result<ScalarLoss, TensorError> {
    let xr = batch
        .x_replaced
        .as_ref()
        .expect("discriminator loss needs the replaced sequence");
    let mut positions = Vec::new();
    let mut labels = Vec::new();
    for (t, (&original, &replaced)) in batch.x.iter().zip(xr.iter()).enumerate().skip(1) {
        if original == PAD {
            continue;
        }
        positions.push(t);
        labels.push(if replaced == original { 1.0 } else { 0.0 });
    }
    if positions.is_empty() {
        return Ok(ScalarLoss {
            value: tape.constant_scalar(0.0),
            count: 0,
        });
    }
    let count = positions.len();
    let rows = tape.gather_rows(realness_logits, positions)?;
    let value = tape.bce_with_logits(rows, labels)?;
    Ok(ScalarLoss { value, count })
}

/// Combine the terms: L_G + λ·L_D + γ·L_A, with absent terms
/// contributing nothing (no node is added for them).
pub fn total_loss(
    tape: &mut Tape,
    l_g: TensorId,
    l_d: Option<TensorId>,
    l_a: Option<TensorId>,
    lambda: f64,
    gamma: f64,
) -> Result<TensorId, ObjectiveError> {
    if lambda < 0.0 {
        return Err(ObjectiveError::NegativeWeight {
            name: "lambda",
            value: lambda,
        });
    }
    if gamma < 0.0 {
        return Err(ObjectiveError::NegativeWeight {
            name: "gamma",
            value: gamma,
        });
    }
    let mut total = l_g;
    if let Some(l_d) = l_d {
        let weighted = tape.scale(l_d, lambda);
        total = tape.add(total, weighted)?;
    }
    if let Some(l_a) = l_a {
        let weighted = tape.scale(l_a, gamma);
        total = tape.add(total, weighted)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CLS;
    use crate::objectives::{apply_mlm_mask, sample_replacements, MaskPolicy};
    use crate::tensor::Tensor;

    fn batch_with_masks(x: Vec<u32>, seed: u64) -> MaskedBatch {
        apply_mlm_mask(&x, MaskPolicy::ElectraGen, 0.5, 10, seed)
    }

    #[test]
    fn perfect_logits_give_zero_generator_loss() {
        let x = vec![CLS, 5, 6, 7];
        let b = batch_with_masks(x.clone(), 3);
        assert!(!b.mask_positions.is_empty());
        let mut logits = vec![0.0; x.len() * 10];
        for t in 0..x.len() {
            logits[t * 10 + x[t] as usize] = 30.0;
        }
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::new(x.len(), 10, logits));
        let loss = generator_loss(&mut tape, l, &b).unwrap();
        assert!(tape.scalar(loss.value) < 1e-9);
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        let x = vec![CLS, 5, 6, 7];
        let b = batch_with_masks(x.clone(), 3);
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::zeros(x.len(), 10));
        let loss = generator_loss(&mut tape, l, &b).unwrap();
        assert!((tape.scalar(loss.value) - 10.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn generator_loss_matches_per_position_oracle() {
        let x = vec![CLS, 4, 9, 5, 8, 6];
        let b = batch_with_masks(x.clone(), 11);
        assert!(!b.mask_positions.is_empty());
        let logits: Vec<f64> = (0..x.len() * 10)
            .map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3)
            .collect();

        let mut oracle = 0.0;
        for &t in &b.mask_positions {
            let row = &logits[t * 10..(t + 1) * 10];
            let exps: Vec<f64> = row.iter().map(|z| z.exp()).collect();
            let total: f64 = exps.iter().sum();
            oracle -= (exps[x[t] as usize] / total).ln();
        }
        oracle /= b.mask_positions.len() as f64;

        let mut tape = Tape::new();
        let l = tape.constant(Tensor::new(x.len(), 10, logits));
        let loss = generator_loss(&mut tape, l, &b).unwrap();
        assert!((tape.scalar(loss.value) - oracle).abs() < 1e-9);
    }

    #[test]
    fn empty_mask_set_is_zero_with_count_zero() {
        let x = vec![CLS, 5, 6];
        let b = apply_mlm_mask(&x, MaskPolicy::Bert, 0.0, 10, 1);
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::zeros(x.len(), 10));
        let loss = generator_loss(&mut tape, l, &b).unwrap();
        assert_eq!(loss.count, 0);
        assert_eq!(tape.scalar(loss.value), 0.0);
    }

    #[test]
    fn confident_correct_discriminator_loss_tends_to_zero() {
        let x = vec![CLS, 5, 6, 7];
        let mut b = batch_with_masks(x.clone(), 3);
        // x^r == x and strongly positive realness logits
        let logits = vec![30.0; x.len()];
        let gen_logits = {
            let mut l = vec![0.0; x.len() * 10];
            for t in 0..x.len() {
                l[t * 10 + x[t] as usize] = 30.0;
            }
            l
        };
        sample_replacements(&gen_logits, 10, &mut b, 0, false);
        let mut tape = Tape::new();
        let r = tape.constant(Tensor::new(x.len(), 1, logits));
        let loss = discriminator_loss(&mut tape, r, &b).unwrap();
        assert!(tape.scalar(loss.value) < 1e-9);
    }

    #[test]
    fn undecided_discriminator_loss_is_ln2() {
        let x = vec![CLS, 5, 6, 7, PAD, PAD];
        let mut b = apply_mlm_mask(&x, MaskPolicy::ElectraGen, 0.5, 10, 3);
        let gen_logits = vec![0.0; x.len() * 10];
        sample_replacements(&gen_logits, 10, &mut b, 0, false);
        let mut tape = Tape::new();
        let r = tape.constant(Tensor::zeros(x.len(), 1));
        let loss = discriminator_loss(&mut tape, r, &b).unwrap();
        assert!((tape.scalar(loss.value) - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(loss.count, 3, "CLS and PAD are excluded");
    }

    #[test]
    fn discriminator_loss_matches_sigmoid_oracle() {
        let x = vec![CLS, 4, 9, 5];
        let mut b = apply_mlm_mask(&x, MaskPolicy::ElectraGen, 0.9, 10, 8);
        let gen_logits: Vec<f64> = (0..x.len() * 10).map(|i| (i % 5) as f64).collect();
        sample_replacements(&gen_logits, 10, &mut b, 1, false);
        let realness: Vec<f64> = vec![0.4, -1.2, 2.0, -0.3];

        let xr = b.x_replaced.as_ref().unwrap();
        let mut oracle = 0.0;
        let mut n = 0;
        for t in 1..x.len() {
            let d = 1.0 / (1.0 + (-realness[t]).exp());
            if xr[t] == x[t] {
                oracle -= d.ln();
            } else {
                oracle -= (1.0 - d).ln();
            }
            n += 1;
        }
        oracle /= n as f64;

        let mut tape = Tape::new();
        let r = tape.constant(Tensor::new(x.len(), 1, realness));
        let loss = discriminator_loss(&mut tape, r, &b).unwrap();
        assert!((tape.scalar(loss.value) - oracle).abs() < 1e-9);
    }

    #[test]
    fn total_loss_combines_and_rejects_negative_weights() {
        let mut tape = Tape::new();
        let g = tape.constant_scalar(1.5);
        let d = tape.constant_scalar(0.25);
        let a = tape.constant_scalar(0.1);

        // the defaults: λ = 50, γ = 1
        let total = total_loss(&mut tape, g, Some(d), Some(a), 50.0, 1.0).unwrap();
        assert!((tape.scalar(total) - (1.5 + 50.0 * 0.25 + 0.1)).abs() < 1e-12);

        // γ = 0 with no guidance term reduces to the two-loss combination
        let two = total_loss(&mut tape, g, Some(d), None, 50.0, 0.0).unwrap();
        assert!((tape.scalar(two) - (1.5 + 12.5)).abs() < 1e-12);

        // λ = 0, γ = 0 leaves the generator loss alone
        let alone = total_loss(&mut tape, g, None, None, 0.0, 0.0).unwrap();
        assert_eq!(tape.scalar(alone), 1.5);

        assert!(matches!(
            total_loss(&mut tape, g, Some(d), None, -1.0, 0.0),
            Err(ObjectiveError::NegativeWeight { name: "lambda", .. })
        ));
        assert!(matches!(
            total_loss(&mut tape, g, None, Some(a), 0.0, -0.5),
            Err(ObjectiveError::NegativeWeight { name: "gamma", .. })
        ));
    }
}
