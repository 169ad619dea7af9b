//! Coupled linear-sequence benchmark.
//!
//! Each sample holds `y1(x) = a x + b` and `y2(x) = c x + d + y1(x)` on
//! `x = 1..=16`. Decoder 1 is conditioned on `[a, b]` then `y1(1)`, decoder 2
//! on `[c, d]` then `y2(1)`; both forecast the remaining 15 values. Decoder 2
//! cannot pin down `a` from its own inputs, so its error stays large unless
//! it sees decoder 1's outputs.

mod data;
mod model;
mod train;

pub use data::{
    build_dataset, decode_records, encode_records, read_records, sample_pair, write_records, PairedSequences,
    SplitSizes, SynthDataset, COEF_HIGH, COEF_LOW, FORECAST_LEN, SEQ_LEN, SPLIT_NAMES,
};
pub use model::{
    eval_mse, mse_of_forecasts, MseReport, Normalizer, SequenceHead, SynthConfig, SynthModel, NUM_SEQUENCES,
};
pub use train::{initial_state, run_epoch, train_synth, train_until, validation_loss};
