use std::path::PathBuf;

use clap::Parser;
use mpa_core::corpus::Vocabulary;

use crate::manifest::RunManifest;
use crate::CliError;

#[derive(Parser)]
pub struct Args {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Maximum number of non-special tokens kept.
    #[arg(long, default_value_t = 2000)]
    pub max_size: usize,
    /// Minimum corpus count for a token to get an id.
    #[arg(long, default_value_t = 1)]
    pub min_count: u64,
    /// Print the resolved configuration and exit without computing.
    #[arg(long)]
    pub dry_run: bool,
}

pub fn run(args: Args) -> Result<(), CliError> {
    let config = serde_json::json!({
        "corpus": args.corpus.display().to_string(),
        "out": args.out.display().to_string(),
        "max_size": args.max_size,
        "min_count": args.min_count,
    });
    if args.dry_run {
        println!("{}", serde_json::to_string_pretty(&config).expect("json"));
        return Ok(());
    }
    let lines = super::read_corpus_lines(&args.corpus)?;
    let vocab = Vocabulary::build(
        lines.iter().map(String::as_str),
        args.max_size,
        args.min_count,
    )?;
    vocab.save(&args.out)?;

    let mut manifest = RunManifest::new("build-vocab", config);
    manifest.add_input(&args.corpus)?;
    manifest.add_output(&args.out);
    manifest.write(&args.out.with_extension("manifest.json"))?;
    println!("wrote vocabulary of {} tokens to {}", vocab.len(), args.out.display());
    Ok(())
}
