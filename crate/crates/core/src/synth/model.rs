use serde::{Deserialize, Serialize};

use super::data::{PairedSequences, SplitSizes, FORECAST_LEN, SEQ_LEN};
use crate::cells::LinearParams;
use crate::decoder::{decode, DecodeLayout, DecodeTask, DecoderConfig, DecoderMode, MultiDecoder};
use crate::diffcore::{seeded_rng, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::fusion::{DecoderGraph, FusionConfig};

/// Decoders in the benchmark: `y1` and `y2`.
pub const NUM_SEQUENCES: usize = 2;

/// Hyperparameters of one synthetic run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub sizes: SplitSizes,
    pub hidden: usize,
    /// Width of the input embedding and of the output representation.
    pub embed: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before the learning rate halves.
    /// `None` keeps it constant.
    pub plateau_patience: Option<usize>,
    pub clip_norm: Option<f64>,
    pub teacher_forcing: bool,
    pub fusion: FusionConfig,
    pub seed: u64,
}

impl SynthConfig {
    /// Full-size setup: 70K/5K/5K pairs, hidden 2048, constant lr 1e-6.
    pub fn paper() -> Self {
        SynthConfig {
            sizes: SplitSizes {
                train: 70_000,
                val: 5_000,
                test: 5_000,
            },
            hidden: 2048,
            embed: 32,
            lr: 1e-6,
            min_lr: 1e-6,
            momentum: 0.98,
            batch_size: 40,
            epochs: 50,
            plateau_patience: None,
            clip_norm: None,
            teacher_forcing: false,
            fusion: FusionConfig::full(1),
            seed: 0,
        }
    }

    /// Single-core setup: 8K/1K/1K pairs, hidden 256, lr from 2e-2 halved on
    /// validation plateaus.
    pub fn desk() -> Self {
        SynthConfig {
            sizes: SplitSizes {
                train: 8_000,
                val: 1_000,
                test: 1_000,
            },
            hidden: 256,
            embed: 32,
            lr: 2e-2,
            min_lr: 1e-6,
            momentum: 0.9,
            batch_size: 40,
            epochs: 10,
            plateau_patience: Some(1),
            clip_norm: Some(5.0),
            teacher_forcing: false,
            fusion: FusionConfig::full(1),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden == 0 || self.embed == 0 {
            return Err(Error::Config("batch size, hidden and embed must be positive".into()));
        }
        if self.sizes.train == 0 {
            return Err(Error::Config("training split is empty".into()));
        }
        self.fusion.validate()
    }

    pub fn decoder_config(&self, mode: DecoderMode) -> DecoderConfig {
        DecoderConfig {
            mode,
            repr_dim: self.embed,
            hidden_dim: self.hidden,
            groups: NUM_SEQUENCES,
            fusion: self.fusion,
            context_start: 2,
        }
    }
}

/// Affine standardization of coefficients and of each sequence's values,
/// fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub coef_mean: f64,
    pub coef_std: f64,
    pub value_mean: [f64; NUM_SEQUENCES],
    pub value_std: [f64; NUM_SEQUENCES],
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(1e-12))
}

impl Normalizer {
    pub fn fit(train: &[PairedSequences]) -> Self {
        let coefs = train.iter().flat_map(|p| [p.a, p.b, p.c, p.d]);
        let (coef_mean, coef_std) = mean_std(coefs);
        let (m1, s1) = mean_std(train.iter().flat_map(|p| p.y1));
        let (m2, s2) = mean_std(train.iter().flat_map(|p| p.y2));
        Normalizer {
            coef_mean,
            coef_std,
            value_mean: [m1, m2],
            value_std: [s1, s2],
        }
    }

    pub fn coef(&self, v: f64) -> f64 {
        (v - self.coef_mean) / self.coef_std
    }

    pub fn value(&self, which: usize, v: f64) -> f64 {
        (v - self.value_mean[which]) / self.value_std[which]
    }

    pub fn unvalue(&self, which: usize, z: f64) -> f64 {
        z * self.value_std[which] + self.value_mean[which]
    }
}

/// Per-sequence input embeddings and output layers around the LSTM.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SequenceHead {
    pub coef_in: LinearParams,
    pub value_in: LinearParams,
    pub repr_out: LinearParams,
    pub value_out: LinearParams,
}

/// Two coupled forecasters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthModel {
    pub mode: DecoderMode,
    pub config: SynthConfig,
    pub norm: Normalizer,
    pub store: ParamStore,
    pub decoder: MultiDecoder,
    pub heads: Vec<SequenceHead>,
}

impl SynthModel {
    pub fn new(config: &SynthConfig, mode: DecoderMode, norm: Normalizer) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(config.seed, 100);
        let mut store = ParamStore::new();
        let decoder = MultiDecoder::new(&mut store, "decoder", config.decoder_config(mode), &mut rng)?;
        let e = config.embed;
        let heads = (0..NUM_SEQUENCES)
            .map(|g| SequenceHead {
                coef_in: LinearParams::new(&mut store, &format!("seq{g}.coef_in"), 2, e, &mut rng),
                value_in: LinearParams::new(&mut store, &format!("seq{g}.value_in"), 1, e, &mut rng),
                repr_out: LinearParams::new(&mut store, &format!("seq{g}.repr_out"), config.hidden, e, &mut rng),
                value_out: LinearParams::new(&mut store, &format!("seq{g}.value_out"), e, 1, &mut rng),
            })
            .collect();
        Ok(SynthModel {
            mode,
            config: config.clone(),
            norm,
            store,
            decoder,
            heads,
        })
    }

    /// Graph of the two decoders: connected both ways.
    pub fn graph() -> DecoderGraph {
        DecoderGraph::fully_connected(NUM_SEQUENCES)
    }

    /// Records a forward pass over `batch` on `tape`.
    ///
    /// Returns the standardized forecasts `[sequence][step]`, each `[B x 1]`,
    /// and the training loss: mean squared error over both sequences and all
    /// forecast steps.
    pub fn forward(
        &self,
        tape: &mut Tape,
        batch: &[PairedSequences],
        teacher_forcing: bool,
    ) -> Result<(Vec<Vec<Var>>, Var)> {
        let b = batch.len();
        let layout = DecodeLayout::per_node_batch(&Self::graph(), b);
        let decoder = self.decoder.bind(tape, &self.store);
        let mut task = ForecastTask::new(self, tape, batch, teacher_forcing);
        decode(tape, &decoder, &layout, SEQ_LEN, &mut task)?;
        let mut losses = Vec::with_capacity(NUM_SEQUENCES * FORECAST_LEN);
        for (g, preds) in task.preds.iter().enumerate() {
            for (i, &p) in preds.iter().enumerate() {
                let target = tape.constant(task.targets(g, i + 1));
                losses.push(tape.mse(p, target)?);
            }
        }
        let loss = mean_of_scalars(tape, &losses)?;
        Ok((task.preds, loss))
    }

    /// Free-running forecasts in original units, `[sample][sequence][step]`.
    pub fn predict(&self, samples: &[PairedSequences]) -> Result<Vec<[Vec<f64>; NUM_SEQUENCES]>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(250) {
            let mut tape = Tape::new();
            let (preds, _) = self.forward(&mut tape, chunk, false)?;
            for s in 0..chunk.len() {
                let per_seq = std::array::from_fn(|g| {
                    preds[g]
                        .iter()
                        .map(|&p| self.norm.unvalue(g, tape.value(p).data()[s]))
                        .collect()
                });
                out.push(per_seq);
            }
        }
        Ok(out)
    }
}

fn mean_of_scalars(tape: &mut Tape, scalars: &[Var]) -> Result<Var> {
    let (&first, rest) = scalars
        .split_first()
        .ok_or_else(|| Error::Contract("no loss terms".into()))?;
    let mut total = first;
    for &s in rest {
        total = tape.add(total, s)?;
    }
    Ok(tape.affine(total, 1.0 / scalars.len() as f64, 0.0))
}

struct ForecastTask<'m> {
    model: &'m SynthModel,
    batch: &'m [PairedSequences],
    teacher_forcing: bool,
    coef_in: Vec<(Var, Var)>,
    value_in: Vec<(Var, Var)>,
    repr_out: Vec<(Var, Var)>,
    value_out: Vec<(Var, Var)>,
    preds: Vec<Vec<Var>>,
}

impl<'m> ForecastTask<'m> {
    fn new(model: &'m SynthModel, tape: &mut Tape, batch: &'m [PairedSequences], teacher_forcing: bool) -> Self {
        let bind = |tape: &mut Tape, p: &LinearParams| {
            let v = p.bind(tape, &model.store);
            (v.weight, v.bias)
        };
        let mut t = ForecastTask {
            model,
            batch,
            teacher_forcing,
            coef_in: Vec::new(),
            value_in: Vec::new(),
            repr_out: Vec::new(),
            value_out: Vec::new(),
            preds: (0..NUM_SEQUENCES).map(|_| Vec::with_capacity(FORECAST_LEN)).collect(),
        };
        for h in &model.heads {
            t.coef_in.push(bind(tape, &h.coef_in));
            t.value_in.push(bind(tape, &h.value_in));
            t.repr_out.push(bind(tape, &h.repr_out));
            t.value_out.push(bind(tape, &h.value_out));
        }
        t
    }

    /// Standardized `y_g(x)` for every sample, `[B x 1]`; `x` is 1-based.
    fn targets(&self, g: usize, step: usize) -> Tensor {
        let data = self
            .batch
            .iter()
            .map(|p| self.model.norm.value(g, p.values(g)[step]))
            .collect();
        Tensor::from_parts(vec![self.batch.len(), 1], data)
    }
}

impl DecodeTask for ForecastTask<'_> {
    fn own_input(&mut self, tape: &mut Tape, t: usize) -> Result<Var> {
        let mut parts = Vec::with_capacity(NUM_SEQUENCES);
        for g in 0..NUM_SEQUENCES {
            let part = if t == 0 {
                let data = self
                    .batch
                    .iter()
                    .flat_map(|p| p.coefficients(g).map(|c| self.model.norm.coef(c)))
                    .collect();
                let x = tape.constant(Tensor::from_parts(vec![self.batch.len(), 2], data));
                let (w, b) = self.coef_in[g];
                tape.linear(x, w, Some(b))?
            } else {
                // step t consumes y(x = t)
                let x = if t == 1 || self.teacher_forcing {
                    tape.constant(self.targets(g, t - 1))
                } else {
                    self.preds[g][t - 2]
                };
                let (w, b) = self.value_in[g];
                tape.linear(x, w, Some(b))?
            };
            parts.push(part);
        }
        tape.concat_rows(&parts)
    }

    fn emit(&mut self, tape: &mut Tape, t: usize, hidden: Var) -> Result<Var> {
        let b = self.batch.len();
        let mut reprs = Vec::with_capacity(NUM_SEQUENCES);
        for g in 0..NUM_SEQUENCES {
            let h = tape.slice_rows(hidden, g * b, b)?;
            let (w, bias) = self.repr_out[g];
            let o = tape.linear(h, w, Some(bias))?;
            if t >= 1 {
                let (w, bias) = self.value_out[g];
                let y = tape.linear(o, w, Some(bias))?;
                self.preds[g].push(y);
            }
            reprs.push(o);
        }
        tape.concat_rows(&reprs)
    }
}

/// Test-set error in original units: mean over samples and forecast steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub mse_y1: f64,
    pub mse_y2: f64,
}

/// Global mean squared error of forecasts against `y(x = 2..=16)`.
pub fn mse_of_forecasts(samples: &[PairedSequences], forecasts: &[[Vec<f64>; NUM_SEQUENCES]]) -> Result<MseReport> {
    if samples.len() != forecasts.len() || samples.is_empty() {
        return Err(Error::Contract(format!(
            "{} samples vs {} forecasts",
            samples.len(),
            forecasts.len()
        )));
    }
    let mut sums = [0.0; NUM_SEQUENCES];
    for (p, f) in samples.iter().zip(forecasts) {
        for g in 0..NUM_SEQUENCES {
            if f[g].len() != FORECAST_LEN {
                return Err(Error::dim("forecast", &[FORECAST_LEN], &[f[g].len()]));
            }
            for i in 0..FORECAST_LEN {
                let e = f[g][i] - p.values(g)[i + 1];
                sums[g] += e * e;
            }
        }
    }
    let n = (samples.len() * FORECAST_LEN) as f64;
    Ok(MseReport {
        mse_y1: sums[0] / n,
        mse_y2: sums[1] / n,
    })
}

pub fn eval_mse(model: &SynthModel, test: &[PairedSequences]) -> Result<MseReport> {
    let forecasts = model.predict(test)?;
    mse_of_forecasts(test, &forecasts)
}
