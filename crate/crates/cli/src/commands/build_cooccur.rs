use std::path::PathBuf;

use clap::Parser;
use mpa_core::cooccur::ContextMatrix;
use mpa_core::corpus::{encode_pack, Vocabulary};

use crate::manifest::RunManifest;
use crate::CliError;

#[derive(Parser)]
pub struct Args {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Sub-vocabulary size: the top-k most frequent non-special tokens.
    #[arg(long, default_value_t = 2000)]
    pub topk: usize,
    /// Co-occurrence window within a packed sequence.
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    /// Packing length used while counting.
    #[arg(long, default_value_t = 128)]
    pub max_len: usize,
    #[arg(long)]
    pub dry_run: bool,
}

pub fn run(args: Args) -> Result<(), CliError> {
    let config = serde_json::json!({
        "corpus": args.corpus.display().to_string(),
        "vocab": args.vocab.display().to_string(),
        "out": args.out.display().to_string(),
        "topk": args.topk,
        "window": args.window,
        "max_len": args.max_len,
    });
    if args.dry_run {
        println!("{}", serde_json::to_string_pretty(&config).expect("json"));
        return Ok(());
    }
    if args.window == 0 {
        return Err(CliError::Config("window must be at least 1".into()));
    }
    let vocab = Vocabulary::load(&args.vocab)?;
    let available = vocab.len() - 4;
    let topk = if args.topk > available {
        eprintln!(
            "warning: --topk {} exceeds the {} non-special tokens; clamping",
            args.topk, available
        );
        available
    } else {
        args.topk
    };
    let lines = super::read_corpus_lines(&args.corpus)?;
    let sequences = encode_pack(lines.iter().map(String::as_str), &vocab, args.max_len);
    let matrix = ContextMatrix::build(&sequences, vocab.top_k_non_special(topk), args.window);
    matrix.save(&args.out)?;

    let mut manifest = RunManifest::new("build-cooccur", config);
    manifest.add_input(&args.corpus)?;
    manifest.add_input(&args.vocab)?;
    manifest.add_output(&args.out);
    manifest.write(&args.out.with_extension("manifest.json"))?;
    println!(
        "wrote {}x{} context matrix (window {}) to {}",
        matrix.k(),
        matrix.k(),
        matrix.window(),
        args.out.display()
    );
    Ok(())
}
