use std::path::PathBuf;

use clap::Parser;

use mpa_core::experiment::{
    eval_trap_set, run_trap_experiment, training_corpus, TrapExperimentConfig,
};

use super::eval::TrapFile;
use crate::manifest::RunManifest;
use crate::CliError;

#[derive(Parser)]
pub struct Args {
    /// Base training seed; runs use seed, seed+1, … unless --seeds is given.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Explicit comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Number of derived seeds when --seeds is absent (the comparison
    /// needs at least 3).
    #[arg(long, default_value_t = 3)]
    pub n_seeds: u64,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Comma-separated mode names to compare.
    #[arg(long, value_delimiter = ',')]
    pub modes: Option<Vec<String>>,
    #[arg(long)]
    pub eval_traps: Option<usize>,
    #[arg(long)]
    pub dry_run: bool,
}

pub fn run(args: Args) -> Result<(), CliError> {
    let seeds = args
        .seeds
        .clone()
        .unwrap_or_else(|| (0..args.n_seeds.max(1)).map(|i| args.seed + i).collect());
    let mut cfg = TrapExperimentConfig {
        seeds,
        ..TrapExperimentConfig::default()
    };
    if let Some(steps) = args.steps {
        cfg.steps = steps;
        cfg.train.warmup_steps = cfg.train.warmup_steps.min(steps / 10);
    }
    if let Some(modes) = &args.modes {
        cfg.modes = modes.clone();
    }
    if let Some(n) = args.eval_traps {
        cfg.eval_traps = n;
    }
    for mode in &cfg.modes {
        if mpa_core::train::lookup(mode).is_none() {
            return Err(CliError::Config(format!("unknown mode {mode:?}")));
        }
    }

    let config_json = serde_json::to_value(&cfg).expect("experiment config serializes");
    if args.dry_run {
        println!("{}", serde_json::to_string_pretty(&config_json).expect("json"));
        return Ok(());
    }

    super::ensure_dir(&args.out_dir)?;
    let table = run_trap_experiment(&cfg, |msg| eprintln!("{msg}")).map_err(CliError::from)?;

    let corpus_path = args.out_dir.join("corpus.txt");
    std::fs::write(&corpus_path, training_corpus(&cfg).text())?;
    let traps_path = args.out_dir.join("traps.json");
    let trap_file = TrapFile {
        spec: cfg.spec.clone(),
        traps: eval_trap_set(&cfg),
    };
    std::fs::write(
        &traps_path,
        serde_json::to_string_pretty(&trap_file).expect("sidecar serializes") + "\n",
    )?;
    let tsv_path = args.out_dir.join("trap-table.tsv");
    std::fs::write(&tsv_path, table.to_tsv())?;
    let json_path = args.out_dir.join("trap-table.json");
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&table).expect("table serializes") + "\n",
    )?;

    let mut manifest = RunManifest::new("experiment-trap", config_json);
    for path in [&corpus_path, &traps_path, &tsv_path, &json_path] {
        manifest.add_output(path);
    }
    manifest.write(&args.out_dir.join("manifest.json"))?;

    print!("{}", table.to_tsv());
    Ok(())
}
