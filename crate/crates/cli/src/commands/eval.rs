use std::path::PathBuf;

use clap::Parser;
use serde::{Deserialize, Serialize};

use mpa_core::cooccur::ContextMatrix;
use mpa_core::corpus::{encode_pack, TrapSentence, TrapSpec, Vocabulary};
use mpa_core::train::{eval_probe, load_state_from, EvalOptions};

use crate::manifest::RunManifest;
use crate::CliError;

/// Sidecar written by `experiment-trap`: the corpus recipe plus the
/// held-out trap sentences with their slot indices.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrapFile {
    pub spec: TrapSpec,
    pub traps: Vec<TrapSentence>,
}

#[derive(Parser)]
pub struct Args {
    /// Trainer state file (`MPAT`).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Held-out line-per-document text.
    #[arg(long)]
    pub heldout: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Context matrix for the attention-mass split.
    #[arg(long)]
    pub cooccur: Option<PathBuf>,
    /// Trap sidecar from `experiment-trap` for trap metrics.
    #[arg(long)]
    pub traps: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub max_sequences: usize,
    #[arg(long)]
    pub dry_run: bool,
}

pub fn run(args: Args) -> Result<(), CliError> {
    let config = serde_json::json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "heldout": args.heldout.display().to_string(),
        "report": args.report.display().to_string(),
        "vocab": args.vocab.display().to_string(),
        "cooccur": args.cooccur.as_ref().map(|p| p.display().to_string()),
        "traps": args.traps.as_ref().map(|p| p.display().to_string()),
        "max_sequences": args.max_sequences,
    });
    if args.dry_run {
        println!("{}", serde_json::to_string_pretty(&config).expect("json"));
        return Ok(());
    }

    let state = load_state_from(&args.checkpoint).map_err(CliError::from)?;
    let vocab = Vocabulary::load(&args.vocab)?;
    if state.models.main.config.vocab != vocab.len() {
        return Err(CliError::Format(format!(
            "checkpoint was trained with a vocabulary of {}, this one has {}",
            state.models.main.config.vocab,
            vocab.len()
        )));
    }
    let lines = super::read_corpus_lines(&args.heldout)?;
    let heldout = encode_pack(lines.iter().map(String::as_str), &vocab, state.config.max_len);
    let context = match &args.cooccur {
        Some(path) => Some(ContextMatrix::load(path)?),
        None => None,
    };
    let trap_file: Option<TrapFile> = match &args.traps {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            Some(
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?,
            )
        }
        None => None,
    };

    let report = eval_probe(
        &state,
        &heldout,
        &vocab,
        &EvalOptions {
            max_sequences: args.max_sequences,
            context: context.as_ref(),
            trap: trap_file.as_ref().map(|t| (&t.spec, t.traps.as_slice())),
            ..EvalOptions::default()
        },
    )
    .map_err(CliError::from)?;
    std::fs::write(
        &args.report,
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    )?;

    let mut manifest = RunManifest::new("eval", config);
    manifest.add_input(&args.checkpoint)?;
    manifest.add_input(&args.heldout)?;
    manifest.add_input(&args.vocab)?;
    manifest.add_output(&args.report);
    manifest.write(&args.report.with_extension("manifest.json"))?;

    println!(
        "mlm_accuracy {:.4}, perplexity {:.2}, detection {}",
        report.mlm_accuracy,
        report.mlm_perplexity,
        report
            .detection_accuracy
            .map_or("-".into(), |a| format!("{a:.4}")),
    );
    Ok(())
}
