use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{feature_dim, Caption, LabelVariant, Scene, SceneConfig};
use super::vocab::{PosTag, Vocabulary};
use crate::cells::{embed, EmbeddingTable, LinearParams, LinearVars};
use crate::decoder::{decode, DecodeLayout, DecodeTask, DecoderConfig, DecoderMode, MultiDecoder, Sampling};
use crate::diffcore::{seeded_rng, softmax_row, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::fusion::{DecoderGraph, FusionConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelcapConfig {
    pub scene: SceneConfig,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub embed: usize,
    pub hidden: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub momentum: f64,
    /// The learning rate halves after this many epochs.
    pub halve_every: usize,
    pub epochs: usize,
    /// Scenes decoded together in one training batch.
    pub scenes_per_batch: usize,
    /// Weight of the tag loss next to the word loss.
    pub pos_weight: f64,
    pub clip_norm: Option<f64>,
    pub weight_decay: f64,
    pub fusion: FusionConfig,
    pub label_set: LabelVariant,
    /// Longest generated caption, end marker included.
    pub max_len: usize,
    pub temperature: f64,
    /// Sampled captioning runs for box-level diversity.
    pub runs: usize,
    pub seed: u64,
}

impl RelcapConfig {
    /// Small single-core setup on 10-region, 20-pair scenes.
    pub fn desk() -> Self {
        RelcapConfig {
            scene: SceneConfig::default(),
            train_scenes: 200,
            test_scenes: 50,
            embed: 32,
            hidden: 64,
            lr: 0.2,
            min_lr: 1e-6,
            momentum: 0.9,
            halve_every: 10,
            epochs: 30,
            scenes_per_batch: 1,
            pos_weight: 0.1,
            clip_norm: Some(5.0),
            weight_decay: 1e-4,
            fusion: FusionConfig::full(2),
            label_set: LabelVariant::Original,
            max_len: 8,
            temperature: 1.0,
            runs: 5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.embed == 0 || self.hidden == 0 || self.scenes_per_batch == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "embed, hidden, batch and max length must be positive".into(),
            ));
        }
        if self.pos_weight < 0.0 || self.temperature <= 0.0 {
            return Err(Error::Config("tag weight must be >= 0 and temperature > 0".into()));
        }
        self.fusion.validate()
    }

    pub fn decoder_config(&self, mode: DecoderMode) -> DecoderConfig {
        DecoderConfig {
            mode,
            repr_dim: self.embed,
            hidden_dim: self.hidden,
            groups: 1,
            fusion: self.fusion,
            context_start: 2,
        }
    }
}

/// One caption decoder per relation pair, all sharing parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelcapModel {
    pub mode: DecoderMode,
    pub config: RelcapConfig,
    pub store: ParamStore,
    pub words: EmbeddingTable,
    pub features: LinearParams,
    pub decoder: MultiDecoder,
    pub word_head: LinearParams,
    pub pos_head: LinearParams,
}

/// A decoded caption with its predicted tags, end marker stripped.
pub type GeneratedCaption = Caption;

enum Choice {
    Teacher(Vec<Vec<usize>>),
    Greedy,
    Sample { temperature: f64, rng: ChaCha8Rng },
}

struct CaptionTask<'a> {
    vocab: &'a Vocabulary,
    rows: usize,
    features: Tensor,
    feature_proj: LinearVars,
    table: Var,
    word_head: LinearVars,
    pos_head: LinearVars,
    choice: Choice,
    last: Option<Var>,
    word_logits: Vec<Var>,
    pos_logits: Vec<Var>,
    chosen: Vec<Vec<usize>>,
    finished: Vec<bool>,
}

impl CaptionTask<'_> {
    /// Emitted token per row. Under teacher forcing this is the greedy
    /// choice, which is what correlated decoders hear at inference time.
    fn pick(&mut self, logits: &Tensor) -> Vec<usize> {
        let eos = self.vocab.eos();
        let mut out = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let token = match &mut self.choice {
                _ if self.finished[r] => eos,
                Choice::Teacher(_) | Choice::Greedy => argmax(logits.row(r)),
                Choice::Sample { temperature, rng } => {
                    let scaled: Vec<f64> = logits.row(r).iter().map(|v| v / *temperature).collect();
                    sample_index(&softmax_row(&scaled), rng)
                }
            };
            if token == eos {
                self.finished[r] = true;
            }
            out.push(token);
        }
        out
    }
}

impl DecodeTask for CaptionTask<'_> {
    fn own_input(&mut self, tape: &mut Tape, t: usize) -> Result<Var> {
        match t {
            0 => {
                let x = tape.constant(self.features.clone());
                self.feature_proj.forward(tape, x)
            }
            1 => embed(tape, self.table, &vec![self.vocab.sos(); self.rows]),
            _ if matches!(self.choice, Choice::Teacher(_)) => {
                let eos = self.vocab.eos();
                let Choice::Teacher(targets) = &self.choice else {
                    unreachable!()
                };
                let ids: Vec<usize> = targets.iter().map(|w| w.get(t - 2).copied().unwrap_or(eos)).collect();
                embed(tape, self.table, &ids)
            }
            _ => self
                .last
                .ok_or_else(|| Error::Contract(format!("no emitted words before step {t}"))),
        }
    }

    fn emit(&mut self, tape: &mut Tape, t: usize, hidden: Var) -> Result<Var> {
        if t == 0 {
            let d = tape.value(self.table).cols();
            return Ok(tape.zeros(&[self.rows, d]));
        }
        let logits = self.word_head.forward(tape, hidden)?;
        let tags = self.pos_head.forward(tape, hidden)?;
        let tokens = self.pick(tape.value(logits));
        let out = embed(tape, self.table, &tokens)?;
        self.word_logits.push(logits);
        self.pos_logits.push(tags);
        self.chosen.push(tokens);
        self.last = Some(out);
        Ok(out)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Row layout of several scenes decoded together: pair rows of scene `i`
/// follow those of scene `i - 1`.
pub fn batch_graph(scenes: &[&Scene]) -> DecoderGraph {
    let graphs: Vec<DecoderGraph> = scenes.iter().map(|s| s.graph()).collect();
    DecoderGraph::block_diagonal(&graphs.iter().collect::<Vec<_>>())
}

impl RelcapModel {
    pub fn new(config: &RelcapConfig, mode: DecoderMode) -> Result<Self> {
        config.validate()?;
        let vocab = Vocabulary::toy();
        let mut rng = seeded_rng(config.seed, 200);
        let mut store = ParamStore::new();
        let words = EmbeddingTable::new(&mut store, "words", vocab.len(), config.embed, &mut rng);
        let features = LinearParams::new(&mut store, "features", feature_dim(&vocab), config.embed, &mut rng);
        let decoder = MultiDecoder::new(&mut store, "decoder", config.decoder_config(mode), &mut rng)?;
        let word_head = LinearParams::new(&mut store, "word_head", config.hidden, vocab.len(), &mut rng);
        let pos_head = LinearParams::new(&mut store, "pos_head", config.hidden, PosTag::ALL.len(), &mut rng);
        Ok(RelcapModel {
            mode,
            config: config.clone(),
            store,
            words,
            features,
            decoder,
            word_head,
            pos_head,
        })
    }

    fn task<'v>(
        &self,
        tape: &mut Tape,
        vocab: &'v Vocabulary,
        scenes: &[&Scene],
        choice: Choice,
    ) -> Result<CaptionTask<'v>> {
        let width = feature_dim(vocab);
        let mut data = Vec::new();
        for s in scenes {
            for p in &s.pairs {
                if p.features.len() != width {
                    return Err(Error::dim("pair features", &[p.features.len()], &[width]));
                }
                data.extend_from_slice(&p.features);
            }
        }
        let rows = data.len() / width;
        Ok(CaptionTask {
            vocab,
            rows,
            features: Tensor::from_parts(vec![rows, width], data),
            feature_proj: self.features.bind(tape, &self.store),
            table: tape.param(&self.store, self.words.table),
            word_head: self.word_head.bind(tape, &self.store),
            pos_head: self.pos_head.bind(tape, &self.store),
            choice,
            last: None,
            word_logits: Vec::new(),
            pos_logits: Vec::new(),
            chosen: Vec::new(),
            finished: vec![false; rows],
        })
    }

    /// Teacher-forced loss over `scenes`: word cross-entropy plus
    /// `pos_weight` times tag cross-entropy, each averaged over its targets.
    pub fn loss(&self, tape: &mut Tape, scenes: &[&Scene]) -> Result<Var> {
        let vocab = Vocabulary::toy();
        let mut words = Vec::new();
        let mut tags = Vec::new();
        for s in scenes {
            for c in s.labels(self.config.label_set).captions {
                let mut ids = vocab.ids(&c.tokens)?;
                ids.push(vocab.eos());
                words.push(ids);
                tags.push(c.tags.iter().map(|t| t.index()).collect::<Vec<_>>());
            }
        }
        let longest = words.iter().map(Vec::len).max().unwrap_or(0);
        let layout = DecodeLayout::shared(&batch_graph(scenes));
        let decoder = self.decoder.bind(tape, &self.store);
        let mut task = self.task(tape, &vocab, scenes, Choice::Teacher(words.clone()))?;
        decode(tape, &decoder, &layout, longest + 1, &mut task)?;

        let n_words: usize = words.iter().map(Vec::len).sum();
        let n_tags: usize = tags.iter().map(Vec::len).sum();
        let mut total: Option<Var> = None;
        for i in 0..longest {
            let wt: Vec<Option<usize>> = words.iter().map(|w| w.get(i).copied()).collect();
            let pt: Vec<Option<usize>> = tags.iter().map(|p| p.get(i).copied()).collect();
            let lw = tape.cross_entropy_masked(task.word_logits[i], &wt, 1.0 / n_words.max(1) as f64)?;
            let lp =
                tape.cross_entropy_masked(task.pos_logits[i], &pt, self.config.pos_weight / n_tags.max(1) as f64)?;
            let step = tape.add(lw, lp)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, step)?,
                None => step,
            });
        }
        total.ok_or_else(|| Error::Contract("no captions to score".into()))
    }

    /// Captions every pair of every scene; returns `[scene][pair]`.
    pub fn caption_scenes(
        &self,
        scenes: &[&Scene],
        sampling: Sampling,
        seed: u64,
    ) -> Result<Vec<Vec<GeneratedCaption>>> {
        let vocab = Vocabulary::toy();
        let choice = match sampling {
            Sampling::Greedy => Choice::Greedy,
            Sampling::Sample { temperature } => {
                if temperature <= 0.0 {
                    return Err(Error::Config(format!("temperature {temperature} must be positive")));
                }
                Choice::Sample {
                    temperature,
                    rng: seeded_rng(seed, 300),
                }
            }
        };
        let mut tape = Tape::new();
        let layout = DecodeLayout::shared(&batch_graph(scenes));
        let decoder = self.decoder.bind(&mut tape, &self.store);
        let mut task = self.task(&mut tape, &vocab, scenes, choice)?;
        decode(&mut tape, &decoder, &layout, self.config.max_len + 1, &mut task)?;

        let mut out = Vec::with_capacity(scenes.len());
        let mut row = 0;
        for s in scenes {
            let mut captions = Vec::with_capacity(s.pairs.len());
            for _ in &s.pairs {
                let mut c = Caption {
                    tokens: Vec::new(),
                    tags: Vec::new(),
                };
                for (step, tokens) in task.chosen.iter().enumerate() {
                    let token = tokens[row];
                    if token == vocab.eos() {
                        break;
                    }
                    let tag = argmax(tape.value(task.pos_logits[step]).row(row));
                    c.tokens.push(vocab.word(token).to_string());
                    c.tags.push(PosTag::from_index(tag).expect("three tag classes"));
                }
                captions.push(c);
                row += 1;
            }
            out.push(captions);
        }
        Ok(out)
    }

    /// Captions of a single scene over `runs` decodes; `[run][pair]`.
    pub fn caption_scene(
        &self,
        scene: &Scene,
        sampling: Sampling,
        runs: usize,
        seed: u64,
    ) -> Result<Vec<Vec<GeneratedCaption>>> {
        (0..runs)
            .map(|run| {
                let mut all = self.caption_scenes(&[scene], sampling, seed.wrapping_add(run as u64))?;
                Ok(all.remove(0))
            })
            .collect()
    }
}
