//! Lock-step decoding of many sequences.
//!
//! All decoders advance together: row `i` of every state matrix belongs to
//! decoder `i`. Three modes share the same LSTM machinery:
//!
//! - `Independent`: the LSTM input is the decoder's own previous output
//!   representation `r_own`.
//! - `Baseline2x`: the input is `[r_own, r_own]`, doubling the input width
//!   without any cross-decoder information.
//! - `Consistent`: the input is `[r_fuse, r_own]`, where `r_fuse` is the
//!   fused representation of all decoders' previous outputs.
//!
//! Before `context_start` the first half of a doubled input is zero.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{lstm_step, LstmParams, LstmVars};
use crate::diffcore::{Neighborhoods, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::fusion::{fuse, DecoderGraph, FusionConfig, FusionParams, FusionVars};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMode {
    Independent,
    Baseline2x,
    Consistent,
}

impl DecoderMode {
    pub const ALL: [DecoderMode; 3] = [
        DecoderMode::Independent,
        DecoderMode::Baseline2x,
        DecoderMode::Consistent,
    ];

    /// LSTM input width for representation width `d`.
    pub fn input_width(self, d: usize) -> usize {
        match self {
            DecoderMode::Independent => d,
            DecoderMode::Baseline2x | DecoderMode::Consistent => 2 * d,
        }
    }
}

impl fmt::Display for DecoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderMode::Independent => "independent",
            DecoderMode::Baseline2x => "baseline2x",
            DecoderMode::Consistent => "consistent",
        })
    }
}

impl FromStr for DecoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" | "baseline" => Ok(DecoderMode::Independent),
            "baseline2x" | "baseline-2x" => Ok(DecoderMode::Baseline2x),
            "consistent" => Ok(DecoderMode::Consistent),
            other => Err(Error::Config(format!("unknown decoder mode {other:?}"))),
        }
    }
}

/// How discrete decoders pick the emitted token.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Greedy,
    Sample { temperature: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub mode: DecoderMode,
    /// Width `d` of output representations, `r_own` and `r_fuse`.
    pub repr_dim: usize,
    pub hidden_dim: usize,
    /// Number of separately parameterized LSTMs.
    pub groups: usize,
    pub fusion: FusionConfig,
    /// First step at which the second input slot carries information.
    pub context_start: usize,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.repr_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("decoder dims and group count must be positive".into()));
        }
        if self.mode == DecoderMode::Consistent {
            self.fusion.validate()?;
        }
        Ok(())
    }
}

/// Parameters of all decoders plus the shared fusion block.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiDecoder {
    pub config: DecoderConfig,
    pub lstm: Vec<LstmParams>,
    pub fusion: Option<FusionParams>,
}

pub struct BoundDecoder {
    config: DecoderConfig,
    lstm: Vec<LstmVars>,
    fusion: Option<FusionVars>,
}

impl MultiDecoder {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, config: DecoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let width = config.mode.input_width(config.repr_dim);
        let lstm = (0..config.groups)
            .map(|g| LstmParams::new(store, &format!("{name}.lstm{g}"), width, config.hidden_dim, rng))
            .collect();
        let fusion = (config.mode == DecoderMode::Consistent)
            .then(|| FusionParams::new(store, &format!("{name}.fusion"), config.repr_dim, rng));
        Ok(MultiDecoder { config, lstm, fusion })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundDecoder {
        BoundDecoder {
            config: self.config.clone(),
            lstm: self.lstm.iter().map(|p| p.bind(tape, store)).collect(),
            fusion: self.fusion.as_ref().map(|p| p.bind(tape, store)),
        }
    }
}

/// Row layout of one lock-step decode: the dependency graph over all rows and
/// which contiguous row block each parameter group drives.
#[derive(Clone, Debug)]
pub struct DecodeLayout {
    pub graph: Rc<Neighborhoods>,
    /// 1.0 for rows with at least one in-neighbor, else 0.0.
    pub connected: Vec<f64>,
    /// `(start, len)` per parameter group.
    pub groups: Vec<(usize, usize)>,
}

impl DecodeLayout {
    /// Every row uses the single parameter group.
    pub fn shared(graph: &DecoderGraph) -> Self {
        let n = graph.num_nodes();
        DecodeLayout {
            graph: Rc::new(graph.neighborhoods()),
            connected: indicator(&graph.has_neighbors()),
            groups: vec![(0, n)],
        }
    }

    /// `batch` copies of `graph`, node-major, with local node `v` driven by
    /// parameter group `v`.
    pub fn per_node_batch(graph: &DecoderGraph, batch: usize) -> Self {
        let big = graph.batched(batch);
        DecodeLayout {
            graph: Rc::new(big.neighborhoods()),
            connected: indicator(&big.has_neighbors()),
            groups: (0..graph.num_nodes()).map(|v| (v * batch, batch)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.connected.len()
    }
}

fn indicator(flags: &[bool]) -> Vec<f64> {
    flags.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

/// Hidden and cell state of every decoder plus the shared step counter.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub hidden: Var,
    pub cell: Var,
    pub step: usize,
}

/// Forms the LSTM input from the own and fused representations.
pub fn input_combine(tape: &mut Tape, r_own: Var, r_fuse: Var, mode: DecoderMode) -> Result<Var> {
    if tape.shape(r_own) != tape.shape(r_fuse) {
        return Err(Error::dim("input_combine", tape.shape(r_own), tape.shape(r_fuse)));
    }
    match mode {
        DecoderMode::Independent => Ok(r_own),
        DecoderMode::Baseline2x => tape.concat(r_own, r_own),
        DecoderMode::Consistent => tape.concat(r_fuse, r_own),
    }
}

impl BoundDecoder {
    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn init_state(&self, tape: &mut Tape, rows: usize) -> DecoderState {
        let zeros = tape.zeros(&[rows, self.config.hidden_dim]);
        DecoderState {
            hidden: zeros,
            cell: zeros,
            step: 0,
        }
    }

    /// Fused context for every row from the previous step's outputs, with
    /// rows that have no neighbors forced to zero.
    pub fn fused_context(&self, tape: &mut Tape, prev_out: Var, layout: &DecodeLayout) -> Result<Var> {
        let vars = self
            .fusion
            .as_ref()
            .ok_or_else(|| Error::Contract("fused context requested without a fusion block".into()))?;
        let fused = fuse(tape, prev_out, &layout.graph, vars, &self.config.fusion)?;
        tape.scale_rows(fused, &layout.connected)
    }

    /// Advances every decoder by one step.
    ///
    /// `prev_out` is the output representation of every decoder at step
    /// `t - 1`; consistent mode needs it from `context_start` on.
    pub fn step_all(
        &self,
        tape: &mut Tape,
        state: DecoderState,
        r_own: Var,
        prev_out: Option<Var>,
        layout: &DecodeLayout,
        t: usize,
    ) -> Result<DecoderState> {
        if state.step != t {
            return Err(Error::Contract(format!(
                "decoders are at step {} but step {t} was requested",
                state.step
            )));
        }
        let rows = layout.rows();
        if tape.value(r_own).rows() != rows || tape.value(state.hidden).rows() != rows {
            return Err(Error::Contract(format!(
                "layout has {rows} decoders but inputs have {} rows",
                tape.value(r_own).rows()
            )));
        }
        let mode = self.config.mode;
        let warm = t >= self.config.context_start;
        let x = match mode {
            DecoderMode::Independent => r_own,
            DecoderMode::Baseline2x if warm => input_combine(tape, r_own, r_own, mode)?,
            DecoderMode::Consistent if warm => {
                let prev = prev_out
                    .ok_or_else(|| Error::Contract(format!("step {t} needs the previous outputs for fusion")))?;
                let r_fuse = self.fused_context(tape, prev, layout)?;
                input_combine(tape, r_own, r_fuse, mode)?
            }
            DecoderMode::Baseline2x | DecoderMode::Consistent => {
                let zeros = tape.zeros(tape.shape(r_own).to_vec().as_slice());
                input_combine(tape, r_own, zeros, DecoderMode::Consistent)?
            }
        };
        let (hidden, cell) = self.run_groups(tape, x, state, layout)?;
        Ok(DecoderState {
            hidden,
            cell,
            step: t + 1,
        })
    }

    fn run_groups(&self, tape: &mut Tape, x: Var, state: DecoderState, layout: &DecodeLayout) -> Result<(Var, Var)> {
        if layout.groups.len() != self.lstm.len() {
            return Err(Error::Contract(format!(
                "layout has {} parameter groups, decoder has {}",
                layout.groups.len(),
                self.lstm.len()
            )));
        }
        if let [only] = self.lstm.as_slice() {
            return lstm_step(tape, x, state.hidden, state.cell, only);
        }
        let mut hs = Vec::with_capacity(self.lstm.len());
        let mut cs = Vec::with_capacity(self.lstm.len());
        for (p, &(start, len)) in self.lstm.iter().zip(&layout.groups) {
            let xg = tape.slice_rows(x, start, len)?;
            let hg = tape.slice_rows(state.hidden, start, len)?;
            let cg = tape.slice_rows(state.cell, start, len)?;
            let (h, c) = lstm_step(tape, xg, hg, cg, p)?;
            hs.push(h);
            cs.push(c);
        }
        Ok((tape.concat_rows(&hs)?, tape.concat_rows(&cs)?))
    }
}

/// Task-specific ends of a lock-step decode.
pub trait DecodeTask {
    /// `r_own` for every decoder at step `t`, `[rows x d]`.
    fn own_input(&mut self, tape: &mut Tape, t: usize) -> Result<Var>;

    /// Consumes the hidden state after step `t` and returns the output
    /// representation that the next step fuses, `[rows x d]`.
    fn emit(&mut self, tape: &mut Tape, t: usize, hidden: Var) -> Result<Var>;
}

/// Runs `steps` lock-step updates, feeding each step's outputs to the next.
pub fn decode<T: DecodeTask>(
    tape: &mut Tape,
    decoder: &BoundDecoder,
    layout: &DecodeLayout,
    steps: usize,
    task: &mut T,
) -> Result<DecoderState> {
    let mut state = decoder.init_state(tape, layout.rows());
    let mut prev_out = None;
    for t in 0..steps {
        let r_own = task.own_input(tape, t)?;
        state = decoder.step_all(tape, state, r_own, prev_out, layout, t)?;
        prev_out = Some(task.emit(tape, t, state.hidden)?);
    }
    Ok(state)
}
