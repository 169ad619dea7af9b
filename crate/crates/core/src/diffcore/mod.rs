//! Differentiable core: tensors, a reverse-mode tape and SGD with momentum.
//!
//! Every forward op is recorded on a [`Tape`]; [`Tape::backward`] walks the
//! record in reverse and accumulates parameter gradients into a
//! [`ParamStore`]. All arithmetic is `f64`.

mod graph;
mod optim;
mod param;
mod tape;
mod tensor;

pub use graph::Neighborhoods;
pub use optim::Sgd;
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Binary, Gradients, Tape, Unary, Var};
pub use tensor::Tensor;

pub(crate) use tape::softmax_row;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for `(seed, stream)`; distinct streams are independent.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
