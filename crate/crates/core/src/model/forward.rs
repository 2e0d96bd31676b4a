use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    Activation, HeadKind, ModelConfig, ModelError, ModelGraph, LAYERNORM_EPS, MASKED_LOGIT,
};
use crate::corpus::PAD;
use crate::tensor::{Tape, TensorId};

/// A model's parameters registered on a tape for one forward/backward
/// round. `flat` parallels [`ModelGraph::visit`] order so gradients can
/// be read back positionally.
pub struct BoundModel {
    pub config: ModelConfig,
    pub head: HeadKind,
    pub flat: Vec<TensorId>,
    token_emb: TensorId,
    pos_emb: TensorId,
    layers: Vec<BoundLayer>,
    disc: Option<(TensorId, TensorId)>,
}

struct BoundLayer {
    wq: Vec<TensorId>,
    wk: Vec<TensorId>,
    wv: Vec<TensorId>,
    wo: TensorId,
    ln1_gain: TensorId,
    ln1_bias: TensorId,
    w1: TensorId,
    b1: TensorId,
    w2: TensorId,
    b2: TensorId,
    ln2_gain: TensorId,
    ln2_bias: TensorId,
}

/// Register every parameter of `model` on the tape as a gradient leaf.
pub fn bind(tape: &mut Tape, model: &ModelGraph) -> BoundModel {
    let mut flat = Vec::new();
    let mut reg = |tape: &mut Tape, t: &crate::tensor::Tensor| {
        let id = tape.param(t);
        flat.push(id);
        id
    };
    let token_emb = reg(tape, &model.token_emb);
    let pos_emb = reg(tape, &model.pos_emb);
    let mut layers = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let wq = layer.wq.iter().map(|t| reg(tape, t)).collect();
        let wk = layer.wk.iter().map(|t| reg(tape, t)).collect();
        let wv = layer.wv.iter().map(|t| reg(tape, t)).collect();
        layers.push(BoundLayer {
            wq,
            wk,
            wv,
            wo: reg(tape, &layer.wo),
            ln1_gain: reg(tape, &layer.ln1_gain),
            ln1_bias: reg(tape, &layer.ln1_bias),
            w1: reg(tape, &layer.w1),
            b1: reg(tape, &layer.b1),
            w2: reg(tape, &layer.w2),
            b2: reg(tape, &layer.b2),
            ln2_gain: reg(tape, &layer.ln2_gain),
            ln2_bias: reg(tape, &layer.ln2_bias),
        });
    }
    let disc = match (&model.disc_w, &model.disc_b) {
        (Some(w), Some(b)) => {
            let w = reg(tape, w);
            let b = reg(tape, b);
            Some((w, b))
        }
        _ => None,
    };
    BoundModel {
        config: model.config.clone(),
        head: model.head,
        flat,
        token_emb,
        pos_emb,
        layers,
        disc,
    }
}

/// One attention head's tensors for one forward pass. `logits` is the
/// exact tensor the row softmax consumed (mask already added).
pub struct AttentionSlot {
    pub layer: usize,
    pub head: usize,
    pub logits: TensorId,
    pub probs: TensorId,
    pub guided: bool,
}

pub struct ForwardOutput {
    /// `[N, V]` for the generator head.
    pub token_logits: Option<TensorId>,
    /// `[N, 1]` for the discriminator head; sigmoid is applied by the loss.
    pub realness_logits: Option<TensorId>,
    pub attention: Vec<AttentionSlot>,
    pub hidden: TensorId,
}

impl ForwardOutput {
    pub fn guided_slots(&self) -> impl Iterator<Item = &AttentionSlot> {
        self.attention.iter().filter(|s| s.guided)
    }
}

/// Inverted dropout on attention probabilities and FFN activations.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply(&mut self, tape: &mut Tape, x: TensorId) -> TensorId {
        if self.rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let mask: Vec<f64> = (0..tape.data(x).len())
            .map(|_| {
                if self.rng.random::<f64>() < self.rate {
                    0.0
                } else {
                    1.0 / keep
                }
            })
            .collect();
        let m = tape.constant(crate::tensor::Tensor::new(
            tape.rows(x),
            tape.cols(x),
            mask,
        ));
        tape.mul(x, m).expect("dropout mask shares the shape")
    }
}

/// Full encoder pass over one sequence. PAD keys are masked to
/// [`MASKED_LOGIT`] before every softmax; residual additions come before
/// each layer norm.
pub fn forward(
    tape: &mut Tape,
    model: &BoundModel,
    ids: &[u32],
    mut dropout: Option<Dropout>,
) -> Result<ForwardOutput, ModelError> {
    let n = ids.len();
    if n == 0 {
        return Err(ModelError::EmptySequence);
    }
    if n > model.config.max_len {
        return Err(ModelError::SequenceTooLong {
            len: n,
            max_len: model.config.max_len,
        });
    }
    let cfg = &model.config;
    let inv_scale = 1.0 / (cfg.head_dim() as f64).sqrt();

    let tok = tape.gather_rows(model.token_emb, ids.iter().map(|&i| i as usize).collect())?;
    let pos = tape.gather_rows(model.pos_emb, (0..n).collect())?;
    let mut hidden = tape.add(tok, pos)?;

    let key_mask: Vec<f64> = ids
        .iter()
        .map(|&id| if id == PAD { MASKED_LOGIT } else { 0.0 })
        .collect();
    let key_mask = tape.constant_row(key_mask);

    let mut attention = Vec::with_capacity(cfg.layers * cfg.heads);
    for (li, layer) in model.layers.iter().enumerate() {
        let mut head_outs = Vec::with_capacity(cfg.heads);
        for hi in 0..cfg.heads {
            let q = tape.matmul(hidden, layer.wq[hi])?;
            let k = tape.matmul(hidden, layer.wk[hi])?;
            let v = tape.matmul(hidden, layer.wv[hi])?;
            let raw = tape.matmul_tb(q, k)?;
            let scaled = tape.scale(raw, inv_scale);
            let logits = tape.add_bias(scaled, key_mask)?;
            let probs = tape.softmax_rows(logits)?;
            let kept = match dropout.as_mut() {
                Some(d) => d.apply(tape, probs),
                None => probs,
            };
            head_outs.push(tape.matmul(kept, v)?);
            attention.push(AttentionSlot {
                layer: li,
                head: hi,
                logits,
                probs,
                guided: li < cfg.guided_layers && hi < cfg.guided_heads,
            });
        }
        let cat = tape.concat_cols(&head_outs)?;
        let proj = tape.matmul(cat, layer.wo)?;
        let res = tape.add(hidden, proj)?;
        hidden = tape.layernorm_rows(res, layer.ln1_gain, layer.ln1_bias, LAYERNORM_EPS)?;

        let pre = tape.matmul(hidden, layer.w1)?;
        let pre = tape.add_bias(pre, layer.b1)?;
        let act = match cfg.activation {
            Activation::Gelu => tape.gelu(pre),
            Activation::Relu => tape.relu(pre),
        };
        let act = match dropout.as_mut() {
            Some(d) => d.apply(tape, act),
            None => act,
        };
        let post = tape.matmul(act, layer.w2)?;
        let post = tape.add_bias(post, layer.b2)?;
        let res2 = tape.add(hidden, post)?;
        hidden = tape.layernorm_rows(res2, layer.ln2_gain, layer.ln2_bias, LAYERNORM_EPS)?;
    }

    let (token_logits, realness_logits) = match model.head {
        HeadKind::Generator => {
            // output projection tied to the token embeddings
            (Some(tape.matmul_tb(hidden, model.token_emb)?), None)
        }
        HeadKind::Discriminator => {
            let (w, b) = model.disc.expect("discriminator head has parameters");
            let scores = tape.matmul(hidden, w)?;
            let scores = tape.add_bias(scores, b)?;
            (None, Some(scores))
        }
    };

    Ok(ForwardOutput {
        token_logits,
        realness_logits,
        attention,
        hidden,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{tiny_config, ModelGraph};
    use crate::tensor::Tensor;

    fn micro_config() -> ModelConfig {
        ModelConfig {
            layers: 1,
            heads: 2,
            hidden: 8,
            ffn_dim: 16,
            vocab: 12,
            max_len: 10,
            guided_layers: 1,
            guided_heads: 1,
            activation: Activation::Gelu,
        }
    }

    #[test]
    fn scaled_dot_product_hand_value() {
        // q = k = [1, 1] with d_K = 2: logit = q·kᵀ/√2 = 2/√2 = √2
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::new(1, 2, vec![1.0, 1.0]));
        let k = tape.constant(Tensor::new(1, 2, vec![1.0, 1.0]));
        let raw = tape.matmul_tb(q, k).unwrap();
        let logit = tape.scale(raw, 1.0 / 2.0_f64.sqrt());
        assert!((tape.scalar(logit) - 2.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pad_keys_get_no_attention() {
        let model = ModelGraph::init(micro_config(), HeadKind::Generator, 7).unwrap();
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &model);
        let ids = vec![5, PAD, PAD, PAD];
        let out = forward(&mut tape, &bound, &ids, None).unwrap();
        for slot in &out.attention {
            let probs = tape.data(slot.probs);
            let n = ids.len();
            // every query row puts all mass on the single visible key
            for row in 0..n {
                assert!((probs[row * n] - 1.0).abs() < 1e-12);
                for col in 1..n {
                    assert_eq!(probs[row * n + col], 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_query_projection_gives_uniform_attention() {
        let mut model = ModelGraph::init(micro_config(), HeadKind::Generator, 7).unwrap();
        for layer in &mut model.layers {
            for wq in &mut layer.wq {
                wq.data.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &model);
        let ids = vec![4, 5, 6, 7];
        let out = forward(&mut tape, &bound, &ids, None).unwrap();
        let slot = &out.attention[0];
        let probs = tape.data(slot.probs);
        for row in 0..4 {
            for col in 0..4 {
                assert!((probs[row * 4 + col] - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn guided_flags_cover_exactly_the_configured_slots() {
        let cfg = tiny_config(); // 2 layers, 4 heads, l=1, h=2
        let model = ModelGraph::init(cfg.clone(), HeadKind::Discriminator, 3).unwrap();
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &model);
        let out = forward(&mut tape, &bound, &[4, 5, 6], None).unwrap();
        assert_eq!(out.attention.len(), cfg.layers * cfg.heads);
        let guided: Vec<(usize, usize)> =
            out.guided_slots().map(|s| (s.layer, s.head)).collect();
        assert_eq!(guided, vec![(0, 0), (0, 1)]);
    }

    #[test]
    fn guided_logits_are_the_exact_softmax_inputs() {
        let model = ModelGraph::init(micro_config(), HeadKind::Generator, 9).unwrap();
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &model);
        let out = forward(&mut tape, &bound, &[4, 5, 6], None).unwrap();
        for slot in &out.attention {
            assert_eq!(tape.op_inputs(slot.probs), vec![slot.logits]);
        }
    }

    #[test]
    fn too_long_sequence_is_a_contract_error() {
        let model = ModelGraph::init(micro_config(), HeadKind::Generator, 1).unwrap();
        let mut tape = Tape::new();
        let bound = bind(&mut tape, &model);
        let ids = vec![4u32; 11];
        assert!(matches!(
            forward(&mut tape, &bound, &ids, None),
            Err(ModelError::SequenceTooLong { .. })
        ));
    }

    #[test]
    fn heads_produce_output_shapes() {
        for head in [HeadKind::Generator, HeadKind::Discriminator] {
            let model = ModelGraph::init(micro_config(), head, 11).unwrap();
            let mut tape = Tape::new();
            let bound = bind(&mut tape, &model);
            let out = forward(&mut tape, &bound, &[4, 5, 6, 7, 8], None).unwrap();
            match head {
                HeadKind::Generator => {
                    let id = out.token_logits.unwrap();
                    assert_eq!(tape.shape(id), &[5, 12]);
                }
                HeadKind::Discriminator => {
                    let id = out.realness_logits.unwrap();
                    assert_eq!(tape.shape(id), &[5, 1]);
                }
            }
        }
    }
}
