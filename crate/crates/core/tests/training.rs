//! Trainer integration: smoke convergence, checkpoint/resume equality,
//! metrics identities, and probe sanity on fresh models.

use mpa_core::cooccur::ContextMatrix;
use mpa_core::corpus::{encode_pack, synth_corpus, TrapSpec, Vocabulary};
use mpa_core::model::save_model;
use mpa_core::train::{
    eval_probe, init_state, load_state, lookup, save_state, train_steps, EvalOptions, NetConfig,
    StepMetrics, TrainConfig, TrainData, TrainError,
};

struct Fixture {
    vocab: Vocabulary,
    sequences: Vec<mpa_core::corpus::PackedSequence>,
    heldout: Vec<mpa_core::corpus::PackedSequence>,
    context: ContextMatrix,
}

fn fixture() -> Fixture {
    let spec = TrapSpec {
        sentences: 600,
        filler_types: 40,
        ..TrapSpec::default()
    };
    let corpus = synth_corpus(&spec, 500);
    let lines: Vec<&str> = corpus.lines.iter().map(String::as_str).collect();
    let vocab = Vocabulary::build(lines.iter().copied(), 1000, 1).unwrap();
    let sequences = encode_pack(lines.iter().copied(), &vocab, 14);
    let heldout_corpus = synth_corpus(&spec, 501);
    let heldout_lines: Vec<&str> = heldout_corpus.lines.iter().map(String::as_str).collect();
    let heldout = encode_pack(heldout_lines.iter().copied(), &vocab, 14);
    let context = ContextMatrix::build(&sequences, vocab.top_k_non_special(1000), 6);
    Fixture {
        vocab,
        sequences,
        heldout,
        context,
    }
}

fn tiny_config(mode: &str, steps: u64) -> TrainConfig {
    TrainConfig {
        mode: mode.into(),
        steps,
        batch_size: 8,
        max_len: 14,
        warmup_steps: steps / 10,
        lr_peak: 3e-4,
        model: NetConfig {
            layers: 2,
            heads: 2,
            hidden: 32,
            ffn_dim: 64,
        },
        generator: NetConfig {
            layers: 1,
            heads: 2,
            hidden: 16,
            ffn_dim: 32,
        },
        guided_layers: 1,
        guided_heads: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn bert_smoke_training_reduces_the_masked_loss() {
    let fx = fixture();
    let config = tiny_config("bert", 50);
    let mut state = init_state(&config, fx.vocab.len()).unwrap();
    let mut losses = Vec::new();
    train_steps(
        &mut state,
        &TrainData {
            sequences: &fx.sequences,
            context: None,
        },
        50,
        |m| losses.push(m.l_g),
    )
    .unwrap();
    let first: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let last: f64 = losses[40..].iter().sum::<f64>() / 10.0;
    assert!(
        last < first,
        "masked loss should fall: first 10 avg {first}, last 10 avg {last}"
    );
}

#[test]
fn metrics_identity_holds_every_step() {
    let fx = fixture();
    let config = tiny_config("electra-mpa", 20);
    let mut state = init_state(&config, fx.vocab.len()).unwrap();
    let mut rows: Vec<StepMetrics> = Vec::new();
    train_steps(
        &mut state,
        &TrainData {
            sequences: &fx.sequences,
            context: Some(&fx.context),
        },
        20,
        |m| rows.push(m.clone()),
    )
    .unwrap();
    assert_eq!(rows.len(), 20);
    for m in &rows {
        let recomputed =
            m.l_g + 50.0 * m.l_d.unwrap_or(0.0) + 1.0 * m.l_a.unwrap_or(0.0);
        assert!(
            (m.total - recomputed).abs() < 1e-12,
            "step {}: total {} vs components {}",
            m.step,
            m.total,
            recomputed
        );
        assert!(m.misprediction_rate.is_some());
    }
}

#[test]
fn identical_configs_walk_identical_trajectories() {
    let fx = fixture();
    let config = tiny_config("electra", 15);
    let run = || {
        let mut state = init_state(&config, fx.vocab.len()).unwrap();
        let mut rows = Vec::new();
        train_steps(
            &mut state,
            &TrainData {
                sequences: &fx.sequences,
                context: None,
            },
            15,
            |m| rows.push(m.to_json_line()),
        )
        .unwrap();
        rows
    };
    assert_eq!(run(), run());
}

#[test]
fn resume_from_checkpoint_matches_the_uninterrupted_run() {
    let fx = fixture();
    let config = tiny_config("electra-mpa", 30);
    let data = TrainData {
        sequences: &fx.sequences,
        context: Some(&fx.context),
    };

    // uninterrupted
    let mut full = init_state(&config, fx.vocab.len()).unwrap();
    train_steps(&mut full, &data, 30, |_| {}).unwrap();

    // stop at 12, serialize, reload, continue
    let mut first_half = init_state(&config, fx.vocab.len()).unwrap();
    train_steps(&mut first_half, &data, 12, |_| {}).unwrap();
    let mut checkpoint = Vec::new();
    save_state(&first_half, &mut checkpoint).unwrap();
    let mut resumed = load_state(checkpoint.as_slice()).unwrap();
    assert_eq!(resumed.step, 12);
    train_steps(&mut resumed, &data, 30, |_| {}).unwrap();

    let bytes = |s: &mpa_core::train::TrainState| {
        let mut main = Vec::new();
        save_model(&s.models.main, &mut main).unwrap();
        let mut aux = Vec::new();
        save_model(s.models.aux.as_ref().unwrap(), &mut aux).unwrap();
        (main, aux)
    };
    assert_eq!(bytes(&full), bytes(&resumed), "resume must be bitwise exact");
    assert_eq!(full.adam_main, resumed.adam_main);
}

#[test]
fn missing_context_matrix_is_a_config_error() {
    let fx = fixture();
    let config = tiny_config("electra-mpa", 5);
    let mut state = init_state(&config, fx.vocab.len()).unwrap();
    let err = train_steps(
        &mut state,
        &TrainData {
            sequences: &fx.sequences,
            context: None,
        },
        5,
        |_| {},
    )
    .unwrap_err();
    assert!(matches!(err, TrainError::MissingContextMatrix { .. }));
}

#[test]
fn non_finite_gradients_abort_with_the_tensor_name() {
    let fx = fixture();
    let config = tiny_config("bert", 5);
    let mut state = init_state(&config, fx.vocab.len()).unwrap();
    // poison one embedding row so the forward pass produces NaN
    state.models.main.token_emb.data[64] = f64::NAN;
    let result = train_steps(
        &mut state,
        &TrainData {
            sequences: &fx.sequences,
            context: None,
        },
        5,
        |_| {},
    );
    match result {
        Err(TrainError::NumericAbort { tensor, .. }) => {
            assert!(tensor.starts_with("main."), "{tensor}");
        }
        other => panic!("expected a numeric abort, got {other:?}"),
    }
}

#[test]
fn untrained_discriminator_detects_at_chance_level() {
    // one init can sit a few points off 0.5 (its logits cluster), but
    // the distribution over inits is symmetric around chance
    let fx = fixture();
    let mut accs = Vec::new();
    for seed in 1..=5 {
        let mut config = tiny_config("electra", 10);
        config.seed = seed;
        let state = init_state(&config, fx.vocab.len()).unwrap();
        let report = eval_probe(
            &state,
            &fx.heldout,
            &fx.vocab,
            &EvalOptions {
                max_sequences: 80,
                ..EvalOptions::default()
            },
        )
        .unwrap();
        assert!(report.detection_positions > 400);
        accs.push(report.detection_accuracy.unwrap());
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!(
        (mean - 0.5).abs() < 0.05,
        "fresh models should sit at chance: mean {mean} of {accs:?}"
    );
}

#[test]
fn perplexity_is_exp_of_the_mean_masked_ce() {
    let fx = fixture();
    let config = tiny_config("bert", 10);
    let state = init_state(&config, fx.vocab.len()).unwrap();
    let report = eval_probe(&state, &fx.heldout, &fx.vocab, &EvalOptions::default()).unwrap();
    assert!((report.mlm_perplexity - report.mean_masked_ce.exp()).abs() < 1e-12);
    // an untrained model sits near the uniform ceiling ln V
    let uniform = (fx.vocab.len() as f64).ln();
    assert!(
        (report.mean_masked_ce - uniform).abs() < 0.5,
        "mean masked CE {} vs ln V {uniform}",
        report.mean_masked_ce
    );
}

#[test]
fn attention_mass_partition_sums_to_one() {
    let fx = fixture();
    let config = tiny_config("electra-mpa", 10);
    let mut state = init_state(&config, fx.vocab.len()).unwrap();
    train_steps(
        &mut state,
        &TrainData {
            sequences: &fx.sequences,
            context: Some(&fx.context),
        },
        10,
        |_| {},
    )
    .unwrap();
    let report = eval_probe(
        &state,
        &fx.heldout,
        &fx.vocab,
        &EvalOptions {
            context: Some(&fx.context),
            ..EvalOptions::default()
        },
    )
    .unwrap();
    let mass = report.attention_mass.expect("mis-predictions must occur");
    assert!(mass.samples > 0);
    let total = mass.frequent + mass.rare + mass.other;
    assert!((total - 1.0).abs() < 1e-6, "partition sums to {total}");
}

#[test]
fn generator_misprediction_rate_trends_down_on_a_learnable_corpus() {
    let fx = fixture();
    let config = tiny_config("electra", 120);
    let mut state = init_state(&config, fx.vocab.len()).unwrap();
    let mut rates = Vec::new();
    train_steps(
        &mut state,
        &TrainData {
            sequences: &fx.sequences,
            context: None,
        },
        120,
        |m| rates.push(m.misprediction_rate.unwrap()),
    )
    .unwrap();
    let first: f64 = rates[..30].iter().sum::<f64>() / 30.0;
    let last: f64 = rates[90..].iter().sum::<f64>() / 30.0;
    assert!(
        last < first,
        "mis-prediction rate should fall as the generator learns: {first} → {last}"
    );
}

#[test]
fn unknown_mode_is_rejected_with_the_known_list() {
    let config = TrainConfig {
        mode: "rtd".into(),
        ..TrainConfig::default()
    };
    let err = init_state(&config, 100).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("rtd") && msg.contains("electra-mpa"), "{msg}");
    assert!(lookup("rtd").is_none());
}
