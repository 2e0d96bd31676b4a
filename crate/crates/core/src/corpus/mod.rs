//! Corpus ingestion: word-level vocabulary over a line-per-document
//! UTF-8 stream, fixed-length packed token sequences, and a synthetic
//! planted-pattern corpus generator for directional experiments.

mod pack;
mod synth;
mod vocab;

pub use pack::{encode_pack, tokenize, PackedSequence};
pub use synth::{synth_corpus, SynthCorpus, TrapSentence, TrapSpec};
pub use vocab::Vocabulary;

use thiserror::Error;

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const UNK: u32 = 2;
pub const CLS: u32 = 3;

pub const SPECIAL_TOKENS: [&str; 4] = ["[PAD]", "[MASK]", "[UNK]", "[CLS]"];

pub fn is_special(id: u32) -> bool {
    id < SPECIAL_TOKENS.len() as u32
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("vocabulary file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
