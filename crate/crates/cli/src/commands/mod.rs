pub mod build_cooccur;
pub mod build_vocab;
pub mod dump_attention;
pub mod eval;
pub mod experiment_trap;
pub mod pretrain;

use std::path::Path;

use crate::CliError;

/// Read a line-per-document corpus.
pub fn read_corpus_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}
