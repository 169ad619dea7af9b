use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::{PosTag, Vocabulary};
use crate::diffcore::seeded_rng;
use crate::error::{Error, Result};
use crate::fusion::DecoderGraph;

const FORMAT: &str = "multidecode-relcap-scenes";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_regions: usize,
    pub n_pairs: usize,
    /// Probability that a mention is relabeled with a uniformly drawn synonym.
    pub synonym_rate: f64,
    /// Standard deviation of the noise on the naming cue in each view.
    pub style_noise: f64,
    /// Standard deviation of the noise on all other feature entries.
    pub feature_noise: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            n_regions: 10,
            n_pairs: 20,
            synonym_rate: 0.5,
            style_noise: 1.2,
            feature_noise: 0.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_regions;
        if n < 2 {
            return Err(Error::Config("a scene needs at least two regions".into()));
        }
        if self.n_pairs < n.div_ceil(2) || self.n_pairs > n * (n - 1) {
            return Err(Error::Config(format!(
                "{} pairs cannot cover {n} regions with distinct ordered pairs",
                self.n_pairs
            )));
        }
        if !(0.0..=1.0).contains(&self.synonym_rate) {
            return Err(Error::Config(format!(
                "synonym rate {} is not a probability",
                self.synonym_rate
            )));
        }
        if self.style_noise < 0.0 || self.feature_noise < 0.0 {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

/// Width of one region view: concept, adjective and naming-cue blocks. The
/// cue block marks the favored noun's position within its synonym group.
pub fn view_dim(vocab: &Vocabulary) -> usize {
    vocab.num_concepts() + vocab.adjectives().len() + vocab.max_synonyms()
}

/// Width of a pair's features: subject view, object view, union view.
pub fn feature_dim(vocab: &Vocabulary) -> usize {
    2 * view_dim(vocab) + vocab.predicates().len()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: usize,
    pub adjective: String,
    /// The noun this region's appearance favors within the scene.
    pub name: String,
    pub synonyms: Vec<String>,
    /// Noise-free appearance vector.
    pub appearance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationPair {
    pub subject: usize,
    pub predicate: String,
    pub object: usize,
    /// Noisy subject view, object view and union view, concatenated.
    pub features: Vec<f64>,
}

/// Caption tokens (without start and end markers) and their tags.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub tokens: Vec<String>,
    pub tags: Vec<PosTag>,
}

impl Caption {
    /// Tokens tagged `tag`, in order.
    pub fn span(&self, tag: PosTag) -> Vec<String> {
        self.tokens
            .iter()
            .zip(&self.tags)
            .filter(|(_, &t)| t == tag)
            .map(|(w, _)| w.clone())
            .collect()
    }

    /// Whether the tags form subject, predicate and object runs in that order.
    pub fn tags_are_contiguous(&self) -> bool {
        self.tokens.len() == self.tags.len() && self.tags.windows(2).all(|w| w[0] <= w[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: usize,
    pub regions: Vec<Region>,
    pub pairs: Vec<RelationPair>,
    /// Original labels, one caption per pair.
    pub captions: Vec<Caption>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelVariant {
    Original,
    Consistent,
}

impl fmt::Display for LabelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelVariant::Original => "original",
            LabelVariant::Consistent => "consistent",
        })
    }
}

impl FromStr for LabelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(LabelVariant::Original),
            "consistent" => Ok(LabelVariant::Consistent),
            other => Err(Error::Config(format!("unknown label set {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub variant: LabelVariant,
    pub captions: Vec<Caption>,
}

impl Scene {
    pub fn labels(&self, variant: LabelVariant) -> LabelSet {
        match variant {
            LabelVariant::Original => LabelSet {
                variant,
                captions: self.captions.clone(),
            },
            LabelVariant::Consistent => make_consistent_labels(self),
        }
    }

    /// Captions are coupled when their pairs share a region.
    pub fn graph(&self) -> DecoderGraph {
        shared_region_graph(&self.pairs)
    }

    /// `(pair index, role)` of every mention of `region`.
    pub fn mentions(&self, region: usize) -> Vec<(usize, PosTag)> {
        let mut out = Vec::new();
        for (i, p) in self.pairs.iter().enumerate() {
            if p.subject == region {
                out.push((i, PosTag::Subj));
            }
            if p.object == region {
                out.push((i, PosTag::Obj));
            }
        }
        out
    }
}

/// Adjacency of pair-captions under the shared-region rule.
pub fn shared_region_graph(pairs: &[RelationPair]) -> DecoderGraph {
    let mut g = DecoderGraph::empty(pairs.len());
    for i in 0..pairs.len() {
        for j in i + 1..pairs.len() {
            let (a, b) = (&pairs[i], &pairs[j]);
            if a.subject == b.subject || a.subject == b.object || a.object == b.subject || a.object == b.object {
                g.add_undirected(i, j).expect("indices in range");
            }
        }
    }
    g
}

fn noisy_view<R: Rng>(clean: &[f64], cue_start: usize, config: &SceneConfig, rng: &mut R) -> Vec<f64> {
    let feature = Normal::new(0.0, config.feature_noise).expect("valid std");
    let style = Normal::new(0.0, config.style_noise).expect("valid std");
    clean
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let noise = if i >= cue_start {
                style.sample(rng)
            } else {
                feature.sample(rng)
            };
            v + noise
        })
        .collect()
}

fn one_hot(len: usize, at: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[at] = 1.0;
    v
}

/// Distinct ordered pairs touching every region at least once.
fn draw_pairs<R: Rng>(n_regions: usize, n_pairs: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n_regions).collect();
    order.shuffle(rng);
    let mut chosen = BTreeSet::new();
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut add = |s: usize, o: usize, pairs: &mut Vec<(usize, usize)>| {
        if s != o && chosen.insert((s, o)) {
            pairs.push((s, o));
        }
    };
    for chunk in order.chunks(2) {
        let (s, o) = match *chunk {
            [s, o] => (s, o),
            [s] => (s, (s + 1 + rng.gen_range(0..n_regions - 1)) % n_regions),
            _ => unreachable!(),
        };
        if rng.gen_bool(0.5) {
            add(s, o, &mut pairs);
        } else {
            add(o, s, &mut pairs);
        }
    }
    while pairs.len() < n_pairs {
        let s = rng.gen_range(0..n_regions);
        let o = rng.gen_range(0..n_regions);
        add(s, o, &mut pairs);
    }
    pairs.shuffle(rng);
    pairs
}

/// Draws one scene. Regions get distinct concepts when the vocabulary allows.
pub fn generate_scene<R: Rng>(rng: &mut R, id: usize, config: &SceneConfig, vocab: &Vocabulary) -> Result<Scene> {
    config.validate()?;
    let n_concepts = vocab.num_concepts();
    let n_adj = vocab.adjectives().len();
    let width = view_dim(vocab);
    let cue_start = n_concepts + n_adj;

    let mut concepts: Vec<usize> = (0..n_concepts).collect();
    concepts.shuffle(rng);
    let mut regions = Vec::with_capacity(config.n_regions);
    let mut dominant = Vec::with_capacity(config.n_regions);
    for r in 0..config.n_regions {
        let concept = if r < n_concepts {
            concepts[r]
        } else {
            rng.gen_range(0..n_concepts)
        };
        let adj = rng.gen_range(0..n_adj);
        let group = vocab.synonyms(concept);
        let favored = rng.gen_range(0..group.len());
        let mut appearance = one_hot(width, concept);
        appearance[n_concepts + adj] = 1.0;
        appearance[cue_start + favored] = 1.0;
        regions.push(Region {
            id: r,
            adjective: vocab.word(vocab.adjectives()[adj]).to_string(),
            name: vocab.word(group[favored]).to_string(),
            synonyms: group.iter().map(|&w| vocab.word(w).to_string()).collect(),
            appearance,
        });
        dominant.push(favored);
    }

    let mut pairs = Vec::with_capacity(config.n_pairs);
    let mut captions = Vec::with_capacity(config.n_pairs);
    let n_pred = vocab.predicates().len();
    for (s, o) in draw_pairs(config.n_regions, config.n_pairs, rng) {
        let pred = rng.gen_range(0..n_pred);
        let mut features = noisy_view(&regions[s].appearance, cue_start, config, rng);
        features.extend(noisy_view(&regions[o].appearance, cue_start, config, rng));
        features.extend(noisy_view(&one_hot(n_pred, pred), n_pred, config, rng));
        let mut mention = |r: &Region, favored: usize| {
            let k = if rng.gen_bool(config.synonym_rate) {
                rng.gen_range(0..r.synonyms.len())
            } else {
                favored
            };
            vec![r.adjective.clone(), r.synonyms[k].clone()]
        };
        let subj = mention(&regions[s], dominant[s]);
        let obj = mention(&regions[o], dominant[o]);
        let predicate = vocab.word(vocab.predicates()[pred]).to_string();
        let mut tokens = subj;
        tokens.push(predicate.clone());
        tokens.extend(obj);
        captions.push(Caption {
            tokens,
            tags: vec![PosTag::Subj, PosTag::Subj, PosTag::Pred, PosTag::Obj, PosTag::Obj],
        });
        pairs.push(RelationPair {
            subject: s,
            predicate,
            object: o,
            features,
        });
    }
    Ok(Scene {
        id,
        regions,
        pairs,
        captions,
    })
}

/// `n` scenes, scene `i` drawn from stream `i` of `seed`.
pub fn build_corpus(n: usize, config: &SceneConfig, seed: u64) -> Result<Vec<Scene>> {
    let vocab = Vocabulary::toy();
    (0..n)
        .map(|i| generate_scene(&mut seeded_rng(seed, i as u64), i, config, &vocab))
        .collect()
}

/// Replaces every mention of a region with the region's most frequent
/// description in the scene; ties go to the lexicographically smallest.
pub fn make_consistent_labels(scene: &Scene) -> LabelSet {
    let mut captions = scene.captions.clone();
    for region in 0..scene.regions.len() {
        let mentions = scene.mentions(region);
        let mut counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for &(p, role) in &mentions {
            *counts.entry(scene.captions[p].span(role)).or_default() += 1;
        }
        // BTreeMap iterates in lexicographic order, so the first maximum wins
        let Some(modal) = counts
            .iter()
            .fold(None::<(&Vec<String>, usize)>, |best, (d, &c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((d, c)),
            })
            .map(|(d, _)| d.clone())
        else {
            continue;
        };
        for &(p, role) in &mentions {
            replace_span(&mut captions[p], role, &modal);
        }
    }
    LabelSet {
        variant: LabelVariant::Consistent,
        captions,
    }
}

fn replace_span(caption: &mut Caption, role: PosTag, words: &[String]) {
    let mut tokens = Vec::with_capacity(caption.tokens.len());
    let mut tags = Vec::with_capacity(caption.tags.len());
    let mut written = false;
    for (w, &t) in caption.tokens.iter().zip(&caption.tags) {
        if t == role {
            if !written {
                tokens.extend(words.iter().cloned());
                tags.extend(std::iter::repeat_n(role, words.len()));
                written = true;
            }
        } else {
            tokens.push(w.clone());
            tags.push(t);
        }
    }
    caption.tokens = tokens;
    caption.tags = tags;
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// JSON Lines: a header object, then one scene per line.
pub fn write_scenes(path: &Path, scenes: &[Scene]) -> Result<()> {
    let mut out = Vec::new();
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
    };
    let mut line = |v: String| {
        out.extend_from_slice(v.as_bytes());
        out.push(b'\n');
    };
    line(serde_json::to_string(&header).expect("serializable"));
    for s in scenes {
        line(serde_json::to_string(s).expect("serializable"));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_scenes(path: &Path) -> Result<Vec<Scene>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty file"))?
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::format(
            path,
            format!(
                "expected {FORMAT} v{VERSION}, found {} v{}",
                header.format, header.version
            ),
        ));
    }
    let mut scenes = Vec::new();
    for (no, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let scene = serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", no + 2)))?;
        scenes.push(scene);
    }
    Ok(scenes)
}
