//! Directional planted-trap experiment: train a baseline and one or
//! more guidance variants on the same synthetic corpus with matched
//! seeds, then compare trap-slot detection accuracy and guided-head
//! attention mass on the rare cue.

use serde::{Deserialize, Serialize};

use crate::cooccur::ContextMatrix;
use crate::corpus::{encode_pack, synth_corpus, TrapSpec, Vocabulary};
use crate::train::{
    eval_probe, init_state, train_steps, EvalOptions, NetConfig, TrainConfig, TrainData,
    TrainError,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrapExperimentConfig {
    pub modes: Vec<String>,
    pub seeds: Vec<u64>,
    pub steps: u64,
    /// Seed for corpus synthesis; training seeds vary, the corpus does not.
    pub corpus_seed: u64,
    pub window: usize,
    pub eval_traps: usize,
    pub spec: TrapSpec,
    pub train: TrainConfig,
}

impl Default for TrapExperimentConfig {
    fn default() -> Self {
        TrapExperimentConfig {
            modes: vec!["electra".into(), "electra-mpa".into()],
            seeds: vec![1, 2, 3],
            steps: 10_000,
            corpus_seed: 1000,
            window: 2,
            eval_traps: 200,
            spec: trap_corpus_template(),
            train: trap_train_template(),
        }
    }
}

/// Corpus tuned so the co-occurrence pattern dominates the generator
/// well before the cue mapping: half the sentences carry the distractor
/// pair, a quarter carry traps, and the two cues stay rare.
pub fn trap_corpus_template() -> TrapSpec {
    TrapSpec {
        sentences: 4000,
        filler_types: 30,
        sentence_len: 10,
        pair_fraction: 0.5,
        trap_fraction: 0.25,
        cues: vec![
            ("compass".into(), "voyage".into()),
            ("lantern".into(), "cellar".into()),
        ],
        ..TrapSpec::default()
    }
}

/// Small, fast architecture for the synthetic corpus runs. The
/// generator is deliberately weak: it fits the dominant co-occurrence
/// quickly and keeps mis-predicting trap slots.
pub fn trap_train_template() -> TrainConfig {
    TrainConfig {
        steps: 10_000,
        batch_size: 16,
        max_len: 12,
        lr_peak: 1e-3,
        warmup_steps: 200,
        checkpoint_every: 0,
        eval_every: 0,
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
        guided_layers: 2,
        guided_heads: 1,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrapRunResult {
    pub mode: String,
    pub seed: u64,
    pub trap_detection_accuracy: Option<f64>,
    pub rare_context_mass: f64,
    pub cue_mass: f64,
    pub frequent_mass: f64,
    pub cloze_accuracy: f64,
    pub heldout_detection_accuracy: Option<f64>,
    pub mlm_accuracy: f64,
    pub final_l_g: f64,
    pub final_total: f64,
    pub final_misprediction_rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrapTable {
    pub rows: Vec<TrapRunResult>,
}

impl TrapTable {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "mode\tseed\ttrap_detection\trare_context_mass\tcue_mass\tfrequent_mass\tcloze\t\
             heldout_detection\tmlm_accuracy\tfinal_L_G\tfinal_total\tmisprediction_rate\n",
        );
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
                r.mode,
                r.seed,
                opt(r.trap_detection_accuracy),
                r.rare_context_mass,
                r.cue_mass,
                r.frequent_mass,
                r.cloze_accuracy,
                opt(r.heldout_detection_accuracy),
                r.mlm_accuracy,
                r.final_l_g,
                r.final_total,
                opt(r.final_misprediction_rate),
            ));
        }
        out
    }

    /// Rows for one mode, in seed order.
    pub fn rows_for(&self, mode: &str) -> Vec<&TrapRunResult> {
        self.rows.iter().filter(|r| r.mode == mode).collect()
    }
}

/// The training corpus an experiment config denotes.
pub fn training_corpus(cfg: &TrapExperimentConfig) -> crate::corpus::SynthCorpus {
    synth_corpus(&cfg.spec, cfg.corpus_seed)
}

/// The held-out trap sentences an experiment evaluates (fresh draws,
/// never part of the training corpus).
pub fn eval_trap_set(cfg: &TrapExperimentConfig) -> Vec<crate::corpus::TrapSentence> {
    synth_corpus(&cfg.spec, cfg.corpus_seed + 1)
        .traps
        .into_iter()
        .take(cfg.eval_traps)
        .collect()
}

/// Run every (mode, seed) pair on one shared corpus and context matrix.
pub fn run_trap_experiment(
    cfg: &TrapExperimentConfig,
    mut progress: impl FnMut(&str),
) -> Result<TrapTable, TrainError> {
    let corpus = synth_corpus(&cfg.spec, cfg.corpus_seed);
    let eval_corpus = synth_corpus(&cfg.spec, cfg.corpus_seed + 1);
    let heldout_corpus = synth_corpus(&cfg.spec, cfg.corpus_seed + 2);

    let lines: Vec<&str> = corpus.lines.iter().map(String::as_str).collect();
    let vocab = Vocabulary::build(lines.iter().copied(), 1000, 1)
        .map_err(|e| TrainError::Config(format!("trap corpus: {e}")))?;
    let sequences = encode_pack(lines.iter().copied(), &vocab, cfg.train.max_len);
    let heldout: Vec<&str> = heldout_corpus.lines.iter().map(String::as_str).collect();
    let heldout_seqs = encode_pack(heldout.iter().copied(), &vocab, cfg.train.max_len);
    let context = ContextMatrix::build(
        &sequences,
        vocab.top_k_non_special(vocab.len()),
        cfg.window,
    );
    let eval_traps: Vec<_> = eval_corpus
        .traps
        .iter()
        .take(cfg.eval_traps)
        .cloned()
        .collect();

    let jobs: Vec<(String, u64)> = cfg
        .modes
        .iter()
        .flat_map(|m| cfg.seeds.iter().map(move |&s| (m.clone(), s)))
        .collect();
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(jobs.len())
        .max(1);
    progress(&format!(
        "{} runs of {} steps each across {workers} worker threads",
        jobs.len(),
        cfg.steps
    ));

    // runs are independent; the shared inputs are read-only, and the
    // results slot into a fixed (mode, seed) order, so scheduling never
    // changes the table
    let mut results: Vec<Option<Result<TrapRunResult, TrainError>>> =
        (0..jobs.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results_mutex = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if idx >= jobs.len() {
                    break;
                }
                let (mode, seed) = &jobs[idx];
                let outcome = run_one(
                    cfg,
                    mode,
                    *seed,
                    vocab.len(),
                    &sequences,
                    &heldout_seqs,
                    &vocab,
                    &context,
                    &eval_traps,
                );
                results_mutex.lock().expect("results lock")[idx] = Some(outcome);
            });
        }
    });

    let mut rows = Vec::with_capacity(jobs.len());
    for slot in results {
        rows.push(slot.expect("every job ran")?);
    }
    Ok(TrapTable { rows })
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    cfg: &TrapExperimentConfig,
    mode: &str,
    seed: u64,
    vocab_size: usize,
    sequences: &[crate::corpus::PackedSequence],
    heldout_seqs: &[crate::corpus::PackedSequence],
    vocab: &Vocabulary,
    context: &ContextMatrix,
    eval_traps: &[crate::corpus::TrapSentence],
) -> Result<TrapRunResult, TrainError> {
    let mut config = cfg.train.clone();
    config.mode = mode.into();
    config.seed = seed;
    config.steps = cfg.steps;
    let mut state = init_state(&config, vocab_size)?;
    let mut last = None;
    train_steps(
        &mut state,
        &TrainData {
            sequences,
            context: Some(context),
        },
        cfg.steps,
        |m| last = Some(m.clone()),
    )?;
    let report = eval_probe(
        &state,
        heldout_seqs,
        vocab,
        &EvalOptions {
            max_sequences: 64,
            context: Some(context),
            trap: Some((&cfg.spec, eval_traps)),
            ..EvalOptions::default()
        },
    )?;
    let trap = report.trap.as_ref().expect("trap metrics requested");
    let last = last.expect("at least one step ran");
    Ok(TrapRunResult {
        mode: mode.into(),
        seed,
        trap_detection_accuracy: trap.detection_accuracy,
        rare_context_mass: trap.rare_context_mass,
        cue_mass: trap.cue_mass,
        frequent_mass: trap.frequent_mass,
        cloze_accuracy: trap.cloze_accuracy,
        heldout_detection_accuracy: report.detection_accuracy,
        mlm_accuracy: report.mlm_accuracy,
        final_l_g: last.l_g,
        final_total: last.total,
        final_misprediction_rate: last.misprediction_rate,
    })
}
