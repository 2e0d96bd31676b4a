use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::Deserialize;

use mpa_core::cooccur::ContextMatrix;
use mpa_core::corpus::{encode_pack, Vocabulary};
use mpa_core::model::Activation;
use mpa_core::train::{
    eval_probe, init_state, load_state_from, lookup, save_state_to, train_steps, EvalOptions,
    NetConfig, StepMetrics, TrainConfig, TrainData, TrainState,
};

use crate::manifest::RunManifest;
use crate::CliError;

#[derive(Parser)]
pub struct Args {
    /// Training mode; see the registry (bert, electra, bert-mpa,
    /// electra-mpa, mpa-ground, mpa-constant).
    #[arg(long)]
    pub mode: Option<String>,
    /// JSON config file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Context matrix file; required by guidance modes.
    #[arg(long)]
    pub cooccur: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Resume from a trainer state file; its embedded config wins.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Held-out corpus for periodic evaluation.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dry_run: bool,
}

/// File-level config: every field optional so that explicit settings
/// are distinguishable from defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<String>,
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub heldout: Option<PathBuf>,
    pub cooccur: Option<PathBuf>,
    pub steps: Option<u64>,
    pub batch_size: Option<usize>,
    pub max_len: Option<usize>,
    pub mask_prob: Option<f64>,
    pub lr_peak: Option<f64>,
    pub warmup_steps: Option<u64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub weight_decay: Option<f64>,
    pub dropout: Option<f64>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub constant_c: Option<f64>,
    pub argmax_replacements: Option<bool>,
    pub guided_layers: Option<usize>,
    pub guided_heads: Option<usize>,
    pub activation: Option<Activation>,
    pub seed: Option<u64>,
    pub checkpoint_every: Option<u64>,
    pub eval_every: Option<u64>,
    pub model: Option<NetConfig>,
    pub generator: Option<NetConfig>,
}

pub struct Resolved {
    pub config: TrainConfig,
    pub corpus: PathBuf,
    pub vocab: PathBuf,
    pub heldout: Option<PathBuf>,
    pub cooccur: Option<PathBuf>,
    pub gamma_explicit: bool,
    pub lambda_explicit: bool,
}

pub fn resolve(args: &Args) -> Result<Resolved, CliError> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let mut config = TrainConfig::default();
    macro_rules! take {
        ($field:ident) => {
            if let Some(v) = file.$field.clone() {
                config.$field = v;
            }
        };
    }
    take!(mode);
    take!(steps);
    take!(batch_size);
    take!(max_len);
    take!(mask_prob);
    take!(lr_peak);
    take!(warmup_steps);
    take!(adam_beta1);
    take!(adam_beta2);
    take!(adam_eps);
    take!(weight_decay);
    take!(dropout);
    take!(lambda);
    take!(gamma);
    take!(argmax_replacements);
    take!(guided_layers);
    take!(guided_heads);
    take!(activation);
    take!(seed);
    take!(checkpoint_every);
    take!(eval_every);
    take!(model);
    take!(generator);
    if file.constant_c.is_some() {
        config.constant_c = file.constant_c;
    }

    // flags override the file
    if let Some(mode) = &args.mode {
        config.mode = mode.clone();
    }
    if let Some(steps) = args.steps {
        config.steps = steps;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(gamma) = args.gamma {
        config.gamma = gamma;
    }
    if let Some(lambda) = args.lambda {
        config.lambda = lambda;
    }
    if let Some(batch) = args.batch_size {
        config.batch_size = batch;
    }

    let corpus = args
        .corpus
        .clone()
        .or(file.corpus)
        .ok_or_else(|| CliError::Config("no corpus given (flag --corpus or config file)".into()))?;
    let vocab = args
        .vocab
        .clone()
        .or(file.vocab)
        .ok_or_else(|| CliError::Config("no vocabulary given (flag --vocab or config file)".into()))?;

    Ok(Resolved {
        config,
        corpus,
        vocab,
        heldout: args.heldout.clone().or(file.heldout),
        cooccur: args.cooccur.clone().or(file.cooccur),
        gamma_explicit: args.gamma.is_some() || file.gamma.is_some(),
        lambda_explicit: args.lambda.is_some() || file.lambda.is_some(),
    })
}

pub fn run(args: Args) -> Result<(), CliError> {
    if let Some(resume) = &args.resume {
        return run_resumed(&args, resume);
    }
    let resolved = resolve(&args)?;
    let mode = lookup(&resolved.config.mode)
        .ok_or_else(|| CliError::Config(format!("unknown mode {:?}", resolved.config.mode)))?;

    // every config problem surfaces before any compute
    if mode.requires_context_matrix() && resolved.cooccur.is_none() {
        return Err(CliError::Config(format!(
            "mode {} needs --cooccur (or a cooccur path in the config file)",
            mode.name()
        )));
    }
    resolved.config.validate().map_err(CliError::from)?;
    if resolved.gamma_explicit && !mode.uses_gamma() {
        eprintln!(
            "warning: gamma is ignored in mode {} (no guidance loss)",
            mode.name()
        );
    }
    if resolved.lambda_explicit && !mode.uses_lambda() {
        eprintln!(
            "warning: lambda is ignored in mode {} (no detection loss)",
            mode.name()
        );
    }

    let resolved_json = serde_json::json!({
        "config": serde_json::to_value(&resolved.config).expect("config serializes"),
        "corpus": resolved.corpus.display().to_string(),
        "vocab": resolved.vocab.display().to_string(),
        "heldout": resolved.heldout.as_ref().map(|p| p.display().to_string()),
        "cooccur": resolved.cooccur.as_ref().map(|p| p.display().to_string()),
        "out_dir": args.out_dir.display().to_string(),
    });
    if args.dry_run {
        println!("{}", serde_json::to_string_pretty(&resolved_json).expect("json"));
        return Ok(());
    }

    let vocab = Vocabulary::load(&resolved.vocab)?;
    let lines = super::read_corpus_lines(&resolved.corpus)?;
    let sequences = encode_pack(
        lines.iter().map(String::as_str),
        &vocab,
        resolved.config.max_len,
    );
    if sequences.is_empty() {
        return Err(CliError::Config("corpus packed to zero sequences".into()));
    }
    let context = match &resolved.cooccur {
        Some(path) => Some(ContextMatrix::load(path)?),
        None => None,
    };
    let heldout = match &resolved.heldout {
        Some(path) => {
            let lines = super::read_corpus_lines(path)?;
            Some(encode_pack(
                lines.iter().map(String::as_str),
                &vocab,
                resolved.config.max_len,
            ))
        }
        None => None,
    };

    super::ensure_dir(&args.out_dir)?;
    let state = init_state(&resolved.config, vocab.len()).map_err(CliError::from)?;

    let mut manifest = RunManifest::new("pretrain", resolved_json);
    manifest.add_input(&resolved.corpus)?;
    manifest.add_input(&resolved.vocab)?;
    if let Some(p) = &resolved.cooccur {
        manifest.add_input(p)?;
    }
    if let Some(p) = &resolved.heldout {
        manifest.add_input(p)?;
    }

    drive(
        state,
        &sequences,
        context.as_ref(),
        heldout.as_deref(),
        &vocab,
        &args.out_dir,
        false,
        manifest,
    )
}

fn run_resumed(args: &Args, resume: &Path) -> Result<(), CliError> {
    if args.config.is_some() || args.mode.is_some() {
        eprintln!("warning: --resume uses the checkpoint's embedded config; --config/--mode ignored");
    }
    let state = load_state_from(resume).map_err(CliError::from)?;
    let corpus = args
        .corpus
        .clone()
        .ok_or_else(|| CliError::Config("--resume needs --corpus".into()))?;
    let vocab_path = args
        .vocab
        .clone()
        .ok_or_else(|| CliError::Config("--resume needs --vocab".into()))?;
    let vocab = Vocabulary::load(&vocab_path)?;
    let lines = super::read_corpus_lines(&corpus)?;
    let sequences = encode_pack(lines.iter().map(String::as_str), &vocab, state.config.max_len);
    let mode = lookup(&state.config.mode)
        .ok_or_else(|| CliError::Config(format!("unknown mode {:?}", state.config.mode)))?;
    if mode.requires_context_matrix() && args.cooccur.is_none() {
        return Err(CliError::Config(format!(
            "mode {} needs --cooccur",
            mode.name()
        )));
    }
    let context = match &args.cooccur {
        Some(path) => Some(ContextMatrix::load(path)?),
        None => None,
    };
    let heldout = match &args.heldout {
        Some(path) => {
            let lines = super::read_corpus_lines(path)?;
            Some(encode_pack(
                lines.iter().map(String::as_str),
                &vocab,
                state.config.max_len,
            ))
        }
        None => None,
    };
    super::ensure_dir(&args.out_dir)?;

    let resolved_json = serde_json::json!({
        "config": serde_json::to_value(&state.config).expect("config serializes"),
        "resumed_from": resume.display().to_string(),
        "resume_step": state.step,
        "out_dir": args.out_dir.display().to_string(),
    });
    if args.dry_run {
        println!("{}", serde_json::to_string_pretty(&resolved_json).expect("json"));
        return Ok(());
    }
    let mut manifest = RunManifest::new("pretrain", resolved_json);
    manifest.add_input(resume)?;
    manifest.add_input(&corpus)?;
    manifest.add_input(&vocab_path)?;

    drive(
        state,
        &sequences,
        context.as_ref(),
        heldout.as_deref(),
        &vocab,
        &args.out_dir,
        true,
        manifest,
    )
}

/// Shared training loop: metrics stream, periodic checkpoints and
/// evaluations, final state, manifest.
#[allow(clippy::too_many_arguments)]
fn drive(
    mut state: TrainState,
    sequences: &[mpa_core::corpus::PackedSequence],
    context: Option<&ContextMatrix>,
    heldout: Option<&[mpa_core::corpus::PackedSequence]>,
    vocab: &Vocabulary,
    out_dir: &Path,
    append_metrics: bool,
    mut manifest: RunManifest,
) -> Result<(), CliError> {
    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics_file = std::fs::OpenOptions::new()
        .create(true)
        .append(append_metrics)
        .truncate(!append_metrics)
        .write(true)
        .open(&metrics_path)?;

    let total = state.config.steps;
    let checkpoint_every = state.config.checkpoint_every;
    let eval_every = state.config.eval_every;
    let data = TrainData { sequences, context };

    let mut last_metrics: Option<StepMetrics> = None;
    let mut warned_empty_masks = false;
    while state.step < total {
        let mut next = total;
        for every in [checkpoint_every, eval_every] {
            if let Some(k) = state.step.checked_div(every) {
                next = next.min((k + 1) * every);
            }
        }
        train_steps(&mut state, &data, next, |m| {
            if m.l_g == 0.0 && !warned_empty_masks {
                eprintln!("warning: step {} selected no mask positions", m.step);
                warned_empty_masks = true;
            }
            writeln!(metrics_file, "{}", m.to_json_line()).expect("metrics stream");
            last_metrics = Some(m.clone());
        })
        .map_err(CliError::from)?;

        if checkpoint_every > 0 && state.step.is_multiple_of(checkpoint_every) && state.step < total {
            let path = out_dir.join(format!("trainer-state-{:06}.mpat", state.step));
            save_state_to(&state, &path).map_err(CliError::from)?;
            manifest.add_output(&path);
        }
        if eval_every > 0 && state.step.is_multiple_of(eval_every) {
            if let Some(heldout) = heldout {
                let report = eval_probe(&state, heldout, vocab, &EvalOptions::default())
                    .map_err(CliError::from)?;
                let path = out_dir.join(format!("eval-{:06}.json", state.step));
                std::fs::write(&path, serde_json::to_string_pretty(&report).expect("json"))?;
                manifest.add_output(&path);
            }
        }
    }
    metrics_file.flush()?;

    let final_path = out_dir.join("trainer-state-final.mpat");
    save_state_to(&state, &final_path).map_err(CliError::from)?;
    manifest.add_output(&final_path);
    manifest.add_output(&metrics_path);
    manifest.write(&out_dir.join("manifest.json"))?;

    match last_metrics {
        Some(m) => println!("{}", m.to_json_line()),
        None => println!("{{\"step\":{},\"note\":\"no steps run\"}}", state.step),
    }
    Ok(())
}
