//! Recurrent and embedding building blocks.
//!
//! Each block comes as a pair: `*Params` holds [`ParamId`]s into a
//! [`ParamStore`], and `bind` snapshots those parameters onto a [`Tape`] as
//! `*Vars` for one forward pass. All ops work row-wise, so a batch is just a
//! matrix with one row per decoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Affine layer `y = x · Wᵀ + b`, `W: [out x in]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        LinearParams {
            weight: store.add_weight(format!("{name}.weight"), out_dim, in_dim, rng),
            bias: store.add_bias(format!("{name}.bias"), out_dim),
            in_dim,
            out_dim,
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> LinearVars {
        LinearVars {
            weight: tape.param(store, self.weight),
            bias: tape.param(store, self.bias),
        }
    }
}

impl LinearVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        linear(tape, x, self.weight, self.bias)
    }
}

pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    tape.linear(x, w, Some(b))
}

/// LSTM cell parameters. Gate blocks are stacked in the order
/// input, forget, cell candidate, output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_to_gates: ParamId,
    pub hidden_to_gates: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub input_to_gates: Var,
    pub hidden_to_gates: Var,
    pub bias: Var,
    pub hidden_dim: usize,
}

impl LstmParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        LstmParams {
            input_to_gates: store.add_weight(format!("{name}.w_ih"), 4 * hidden_dim, input_dim, rng),
            hidden_to_gates: store.add_weight(format!("{name}.w_hh"), 4 * hidden_dim, hidden_dim, rng),
            bias: store.add_bias(format!("{name}.bias"), 4 * hidden_dim),
            input_dim,
            hidden_dim,
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> LstmVars {
        LstmVars {
            input_to_gates: tape.param(store, self.input_to_gates),
            hidden_to_gates: tape.param(store, self.hidden_to_gates),
            bias: tape.param(store, self.bias),
            hidden_dim: self.hidden_dim,
        }
    }
}

/// One LSTM update without peepholes. Returns `(h', c')`.
pub fn lstm_step(tape: &mut Tape, x: Var, h: Var, c: Var, p: &LstmVars) -> Result<(Var, Var)> {
    let hd = p.hidden_dim;
    if tape.value(h).cols() != hd || tape.shape(h) != tape.shape(c) {
        return Err(Error::dim("lstm_step state", tape.shape(h), tape.shape(c)));
    }
    let from_x = tape.linear(x, p.input_to_gates, Some(p.bias))?;
    let from_h = tape.linear(h, p.hidden_to_gates, None)?;
    if tape.shape(from_x) != tape.shape(from_h) {
        return Err(Error::dim("lstm_step", tape.shape(x), tape.shape(h)));
    }
    let gates = tape.add(from_x, from_h)?;
    let i = tape.slice_cols(gates, 0, hd)?;
    let f = tape.slice_cols(gates, hd, hd)?;
    let g = tape.slice_cols(gates, 2 * hd, hd)?;
    let o = tape.slice_cols(gates, 3 * hd, hd)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// GRU parameters for a `d`-dimensional state driven by a `d`-dimensional
/// input: update gate `z`, reset gate `r`, candidate `n`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GruParams {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_n: ParamId,
    pub u_n: ParamId,
    pub b_n: ParamId,
    pub dim: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_n: Var,
    pub u_n: Var,
    pub b_n: Var,
}

impl GruParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        let mut w = |suffix: &str, store: &mut ParamStore| store.add_weight(format!("{name}.{suffix}"), dim, dim, rng);
        let (w_z, u_z) = (w("w_z", store), w("u_z", store));
        let (w_r, u_r) = (w("w_r", store), w("u_r", store));
        let (w_n, u_n) = (w("w_n", store), w("u_n", store));
        GruParams {
            w_z,
            u_z,
            b_z: store.add_bias(format!("{name}.b_z"), dim),
            w_r,
            u_r,
            b_r: store.add_bias(format!("{name}.b_r"), dim),
            w_n,
            u_n,
            b_n: store.add_bias(format!("{name}.b_n"), dim),
            dim,
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> GruVars {
        GruVars {
            w_z: tape.param(store, self.w_z),
            u_z: tape.param(store, self.u_z),
            b_z: tape.param(store, self.b_z),
            w_r: tape.param(store, self.w_r),
            u_r: tape.param(store, self.u_r),
            b_r: tape.param(store, self.b_r),
            w_n: tape.param(store, self.w_n),
            u_n: tape.param(store, self.u_n),
            b_n: tape.param(store, self.b_n),
        }
    }
}

/// Gated update of node state `h_prev` with aggregated message `a`:
///
/// ```text
/// z  = σ(W_z a + U_z h + b_z)
/// r  = σ(W_r a + U_r h + b_r)
/// n  = tanh(W_n a + U_n (r ⊙ h) + b_n)
/// h' = (1 - z) ⊙ h + z ⊙ n
/// ```
pub fn gru_combine(tape: &mut Tape, h_prev: Var, a: Var, p: &GruVars) -> Result<Var> {
    if tape.shape(h_prev) != tape.shape(a) {
        return Err(Error::dim("gru_combine", tape.shape(h_prev), tape.shape(a)));
    }
    let gate = |tape: &mut Tape, w: Var, u: Var, b: Var, state: Var| -> Result<Var> {
        let from_a = tape.linear(a, w, Some(b))?;
        let from_h = tape.linear(state, u, None)?;
        tape.add(from_a, from_h)
    };
    let z = gate(tape, p.w_z, p.u_z, p.b_z, h_prev)?;
    let z = tape.sigmoid(z);
    let r = gate(tape, p.w_r, p.u_r, p.b_r, h_prev)?;
    let r = tape.sigmoid(r);
    let reset = tape.mul(r, h_prev)?;
    let n = gate(tape, p.w_n, p.u_n, p.b_n, reset)?;
    let n = tape.tanh(n);
    let keep = tape.affine(z, -1.0, 1.0);
    let kept = tape.mul(keep, h_prev)?;
    let fresh = tape.mul(z, n)?;
    tape.add(kept, fresh)
}

/// Token embedding table `[vocab x dim]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub table: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        EmbeddingTable {
            table: store.add_weight(name.to_string(), vocab_size, dim, rng),
            vocab_size,
            dim,
        }
    }
}

/// Looks up one row per id; gradients scatter back into the looked-up rows.
pub fn embed(tape: &mut Tape, table: Var, ids: &[usize]) -> Result<Var> {
    tape.gather_rows(table, ids)
}
