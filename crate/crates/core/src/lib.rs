//! Consistent multiple sequence decoding.
//!
//! Several recurrent decoders run in lock step. At every step a gated graph
//! network fuses the previous outputs of correlated decoders into a context
//! vector that each decoder receives next to its own previous output.
//!
//! - [`diffcore`]: tensors, reverse-mode tape, SGD with momentum.
//! - [`cells`]: LSTM, GRU, linear and embedding blocks.
//! - [`fusion`]: decoder graph, adaptive attention, AGGREGATE/COMBINE.
//! - [`decoder`]: lock-step decoding in independent, doubled-input and
//!   consistent modes.
//! - [`synth`]: the coupled linear-sequence benchmark.
//! - [`relcap`]: a toy relational captioning task with shared-region coupling.
//! - [`metrics`]: BLEU-1, caption consistency, box-level diversity, recall.
//! - [`report`]: metric CSV tables and config hashes.
//! - [`cli`]: the `gen | train | eval | sweep` driver.

pub mod cells;
pub mod cli;
pub mod decoder;
pub mod diffcore;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod relcap;
pub mod report;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
