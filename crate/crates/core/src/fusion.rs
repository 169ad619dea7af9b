//! Consistency fusion: gated graph message passing over decoder outputs.
//!
//! One iteration computes per-source messages `m_u = W · h_u`, a scalar score
//! `s_u = fc_att(m_u)` per source, normalizes scores over each receiver's
//! in-neighbors with a softmax, sums the weighted messages into `a_v`, and
//! updates every node with a GRU (`a_v` as input, `h_v` as state). `W`, the
//! attention net and the GRU are shared across iterations.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{gru_combine, GruParams, GruVars, LinearParams, LinearVars};
use crate::diffcore::{Neighborhoods, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Negative slope of the leaky ReLUs inside the attention net.
pub const ATTENTION_SLOPE: f64 = 0.01;

/// Binary decoder-dependency matrix. `E(i, j) = 1` means decoder `j`'s
/// messages reach decoder `i`. The diagonal is always zero.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderGraph {
    n: usize,
    entries: Vec<u8>,
}

impl DecoderGraph {
    /// `n` decoders, no edges.
    pub fn empty(n: usize) -> Self {
        DecoderGraph {
            n,
            entries: vec![0; n * n],
        }
    }

    pub fn fully_connected(n: usize) -> Self {
        let mut g = DecoderGraph::empty(n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    g.entries[i * n + j] = 1;
                }
            }
        }
        g
    }

    /// Path `0 - 1 - ... - (n-1)`.
    pub fn path(n: usize) -> Self {
        let pairs: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        build_adjacency(&pairs, n).expect("path indices are in range")
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::Index {
                what: "decoder",
                index: i,
                bound: self.n,
            });
        }
        Ok(())
    }

    /// Lets `from`'s messages reach `to` only. Self-loops are ignored.
    pub fn add_directed(&mut self, from: usize, to: usize) -> Result<()> {
        self.check(from)?;
        self.check(to)?;
        if from != to {
            self.entries[to * self.n + from] = 1;
        }
        Ok(())
    }

    pub fn add_undirected(&mut self, i: usize, j: usize) -> Result<()> {
        self.add_directed(i, j)?;
        self.add_directed(j, i)
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.n + j] == 1
    }

    pub fn matrix(&self) -> Vec<Vec<u8>> {
        self.entries
            .chunks(self.n.max(1))
            .take(self.n)
            .map(<[u8]>::to_vec)
            .collect()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn num_edges(&self) -> usize {
        self.entries.iter().filter(|&&e| e == 1).count()
    }

    /// In-neighbor lists, ascending.
    pub fn neighborhoods(&self) -> Neighborhoods {
        let lists = (0..self.n)
            .map(|v| (0..self.n).filter(|&u| self.get(v, u)).collect())
            .collect();
        Neighborhoods::from_lists(lists).expect("indices are below n")
    }

    /// Whether each node hears from at least one neighbor.
    pub fn has_neighbors(&self) -> Vec<bool> {
        (0..self.n).map(|v| (0..self.n).any(|u| self.get(v, u))).collect()
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::dim("permuted", &[self.n], &[perm.len()]));
        }
        let mut out = DecoderGraph::empty(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                if self.get(i, j) {
                    out.entries[perm[i] * self.n + perm[j]] = 1;
                }
            }
        }
        Ok(out)
    }

    /// `copies` disjoint copies laid out node-major: local node `v` of copy
    /// `s` becomes row `v * copies + s`.
    pub fn batched(&self, copies: usize) -> DecoderGraph {
        let total = self.n * copies;
        let mut out = DecoderGraph::empty(total);
        for i in 0..self.n {
            for j in 0..self.n {
                if self.get(i, j) {
                    for s in 0..copies {
                        out.entries[(i * copies + s) * total + j * copies + s] = 1;
                    }
                }
            }
        }
        out
    }

    /// Disjoint union with each graph occupying a contiguous block of rows.
    pub fn block_diagonal(graphs: &[&DecoderGraph]) -> DecoderGraph {
        let total = graphs.iter().map(|g| g.n).sum();
        let mut out = DecoderGraph::empty(total);
        let mut base = 0;
        for g in graphs {
            for i in 0..g.n {
                for j in 0..g.n {
                    if g.get(i, j) {
                        out.entries[(base + i) * total + base + j] = 1;
                    }
                }
            }
            base += g.n;
        }
        out
    }
}

/// Symmetric adjacency from correlated index pairs. Self-pairs are dropped.
pub fn build_adjacency(correlations: &[(usize, usize)], n: usize) -> Result<DecoderGraph> {
    let mut g = DecoderGraph::empty(n);
    for &(i, j) in correlations {
        g.add_undirected(i, j)?;
    }
    Ok(g)
}

/// Which fusion variant to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// `K` rounds of attention, aggregation and GRU combination.
    Full,
    /// Plain mean of the directly connected neighbors' inputs.
    NoGnn,
    /// One gated round with uniform neighbor weights.
    EqualAttention,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Full => "full",
            FusionMode::NoGnn => "no_gnn",
            FusionMode::EqualAttention => "equal_attention",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(FusionMode::Full),
            "no_gnn" | "no-gnn" => Ok(FusionMode::NoGnn),
            "equal_attention" | "equal-attention" => Ok(FusionMode::EqualAttention),
            other => Err(Error::Config(format!("unknown fusion mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// Message-passing iterations for [`FusionMode::Full`]; the ablation
    /// modes always run a single round.
    pub iterations: usize,
}

impl FusionConfig {
    pub fn full(iterations: usize) -> Self {
        FusionConfig {
            mode: FusionMode::Full,
            iterations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == FusionMode::Full && self.iterations < 1 {
            return Err(Error::Config("fusion needs at least one iteration (K >= 1)".into()));
        }
        Ok(())
    }
}

/// Graph kernel, attention net and GRU of the fusion block.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FusionParams {
    pub kernel: ParamId,
    pub attention: [LinearParams; 3],
    pub gru: GruParams,
    pub dim: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct FusionVars {
    pub kernel: Var,
    pub attention: [LinearVars; 3],
    pub gru: GruVars,
    pub dim: usize,
}

/// Hidden widths of the attention net: `d -> d/2 -> d/4 -> 1`, at least 1 each.
pub fn attention_widths(dim: usize) -> [usize; 4] {
    [dim, (dim / 2).max(1), (dim / 4).max(1), 1]
}

impl FusionParams {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        let kernel = store.add_weight(format!("{name}.kernel"), dim, dim, rng);
        let w = attention_widths(dim);
        let attention = [
            LinearParams::new(store, &format!("{name}.att0"), w[0], w[1], rng),
            LinearParams::new(store, &format!("{name}.att1"), w[1], w[2], rng),
            LinearParams::new(store, &format!("{name}.att2"), w[2], w[3], rng),
        ];
        let gru = GruParams::new(store, &format!("{name}.gru"), dim, rng);
        FusionParams {
            kernel,
            attention,
            gru,
            dim,
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> FusionVars {
        FusionVars {
            kernel: tape.param(store, self.kernel),
            attention: [
                self.attention[0].bind(tape, store),
                self.attention[1].bind(tape, store),
                self.attention[2].bind(tape, store),
            ],
            gru: self.gru.bind(tape, store),
            dim: self.dim,
        }
    }
}

/// `W · h_u` for every node row.
pub fn messages(tape: &mut Tape, h: Var, p: &FusionVars) -> Result<Var> {
    if tape.value(h).cols() != p.dim || tape.value(h).rank() != 2 {
        return Err(Error::dim("fusion messages", tape.shape(h), &[p.dim]));
    }
    tape.matmul_nt(h, p.kernel)
}

/// Raw per-source attention `fc_att(m_u)`, shape `[n x 1]`.
pub fn raw_scores(tape: &mut Tape, msgs: Var, p: &FusionVars) -> Result<Var> {
    let x = p.attention[0].forward(tape, msgs)?;
    let x = tape.leaky_relu(x, ATTENTION_SLOPE)?;
    let x = p.attention[1].forward(tape, x)?;
    let x = tape.leaky_relu(x, ATTENTION_SLOPE)?;
    p.attention[2].forward(tape, x)
}

/// Normalized attention per edge: raw scores softmaxed over each receiver's
/// in-neighbors. Returns `(msgs, alpha)`.
pub fn attention_scores(tape: &mut Tape, h: Var, p: &FusionVars, graph: &Rc<Neighborhoods>) -> Result<(Var, Var)> {
    let msgs = messages(tape, h, p)?;
    let raw = raw_scores(tape, msgs, p)?;
    let alpha = tape.neighbor_softmax(raw, graph)?;
    Ok((msgs, alpha))
}

/// `a_v = Σ_{u ∈ N(v)} α_{v,u} m_u`; isolated receivers get zero rows.
pub fn aggregate(tape: &mut Tape, alpha: Var, msgs: Var, graph: &Rc<Neighborhoods>) -> Result<Var> {
    tape.neighbor_sum(alpha, msgs, graph)
}

/// Runs the configured fusion on node features `h0: [n x d]`.
pub fn fuse(tape: &mut Tape, h0: Var, graph: &Rc<Neighborhoods>, p: &FusionVars, config: &FusionConfig) -> Result<Var> {
    config.validate()?;
    match config.mode {
        FusionMode::NoGnn => {
            let uniform = tape.constant(Tensor::vector(graph.uniform_weights()));
            aggregate(tape, uniform, h0, graph)
        }
        FusionMode::EqualAttention => {
            let msgs = messages(tape, h0, p)?;
            let uniform = tape.constant(Tensor::vector(graph.uniform_weights()));
            let a = aggregate(tape, uniform, msgs, graph)?;
            gru_combine(tape, h0, a, &p.gru)
        }
        FusionMode::Full => {
            let mut h = h0;
            for _ in 0..config.iterations {
                let (msgs, alpha) = attention_scores(tape, h, p, graph)?;
                let a = aggregate(tape, alpha, msgs, graph)?;
                h = gru_combine(tape, h, a, &p.gru)?;
            }
            Ok(h)
        }
    }
}
