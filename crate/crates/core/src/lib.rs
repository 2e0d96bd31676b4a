//! Desk-scale transformer pre-training with mis-prediction-guided
//! attention regularization.
//!
//! The pipeline: build a word-level vocabulary from a line-per-document
//! corpus, count windowed co-occurrences into a normalized context matrix,
//! then pre-train a generator/discriminator transformer pair. When the
//! generator mis-predicts a masked token, selected attention heads of the
//! main model are regularized toward a target that down-weights keys
//! frequently co-occurring with the mis-predicted token.
//!
//! Everything runs on a small f64 tape-based autodiff kernel
//! ([`tensor`]) so that every gradient is checkable against central
//! finite differences.

pub mod cooccur;
pub mod corpus;
pub mod experiment;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod tensor;
pub mod train;

pub use tensor::{Tape, Tensor, TensorError, TensorId};
