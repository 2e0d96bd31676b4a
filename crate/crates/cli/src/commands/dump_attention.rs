use std::io::Write;
use std::path::PathBuf;

use clap::Parser;
use serde::Serialize;

use mpa_core::corpus::{tokenize, Vocabulary, CLS, UNK};
use mpa_core::model::{bind, forward, load_model, ModelGraph};
use mpa_core::tensor::Tape;

use crate::manifest::RunManifest;
use crate::CliError;

#[derive(Parser)]
pub struct Args {
    /// Trainer state (`MPAT`, dumps the main model) or a bare model
    /// checkpoint (`MPAC`).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub sentence: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dry_run: bool,
}

/// One query row of one head: the exact pre-softmax logits the model
/// used and the attention weights they produced.
#[derive(Serialize)]
struct AttentionRecord<'a> {
    layer: usize,
    head: usize,
    guided: bool,
    query: usize,
    token: &'a str,
    unk: bool,
    pre_softmax: &'a [f64],
    post_softmax: &'a [f64],
}

pub fn run(args: Args) -> Result<(), CliError> {
    let config = serde_json::json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "vocab": args.vocab.display().to_string(),
        "sentence": args.sentence,
        "out": args.out.display().to_string(),
    });
    if args.dry_run {
        println!("{}", serde_json::to_string_pretty(&config).expect("json"));
        return Ok(());
    }

    let model = load_any_model(&args.checkpoint)?;
    let vocab = Vocabulary::load(&args.vocab)?;
    let tokens = tokenize(&args.sentence);
    if tokens.is_empty() {
        return Err(CliError::Config("the sentence has no tokens".into()));
    }
    let mut ids = vec![CLS];
    ids.extend(tokens.iter().map(|t| vocab.id(t)));
    let words: Vec<String> = std::iter::once("[CLS]".to_string())
        .chain(tokens.iter().cloned())
        .collect();

    let mut tape = Tape::new();
    let bound = bind(&mut tape, &model);
    let out = forward(&mut tape, &bound, &ids, None).map_err(CliError::from)?;

    let mut file = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    let n = ids.len();
    for slot in &out.attention {
        let logits = tape.data(slot.logits);
        let probs = tape.data(slot.probs);
        for query in 0..n {
            let record = AttentionRecord {
                layer: slot.layer,
                head: slot.head,
                guided: slot.guided,
                query,
                token: &words[query],
                unk: ids[query] == UNK,
                pre_softmax: &logits[query * n..(query + 1) * n],
                post_softmax: &probs[query * n..(query + 1) * n],
            };
            writeln!(
                file,
                "{}",
                serde_json::to_string(&record).expect("record serializes")
            )?;
        }
    }
    file.flush()?;

    let mut manifest = RunManifest::new("dump-attention", config);
    manifest.add_input(&args.checkpoint)?;
    manifest.add_input(&args.vocab)?;
    manifest.add_output(&args.out);
    manifest.write(&args.out.with_extension("manifest.json"))?;
    println!(
        "dumped {} rows ({} layers x {} heads x {} positions) to {}",
        out.attention.len() * n,
        model.config.layers,
        model.config.heads,
        n,
        args.out.display()
    );
    Ok(())
}

/// Sniff the magic: trainer states embed the model checkpoints.
fn load_any_model(path: &std::path::Path) -> Result<ModelGraph, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    match bytes.get(..4) {
        Some(b"MPAT") => {
            let state = mpa_core::train::load_state(bytes.as_slice()).map_err(CliError::from)?;
            Ok(state.models.main)
        }
        Some(b"MPAC") => Ok(load_model(bytes.as_slice()).map_err(CliError::from)?),
        _ => Err(CliError::Format(format!(
            "{}: neither a trainer state nor a model checkpoint",
            path.display()
        ))),
    }
}
