//! Caption metrics: BLEU-1, per-box consistency, box-level diversity across
//! sampled runs, and image-level recall.
//!
//! Scores are reported on a 0–100 scale. Pairwise scores between two
//! descriptions use the mean of both BLEU-1 directions, so every score is
//! independent of the order in which descriptions are listed.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A corpus-level score and how many items it averages over.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub n_items: usize,
}

/// Clipped unigram precision times the brevity penalty
/// `exp(min(0, 1 - |ref| / |cand|))`. An empty candidate scores 0.
pub fn bleu1<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Domain("BLEU-1 needs a nonempty reference".into()));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut ref_counts: HashMap<&T, usize> = HashMap::new();
    for w in reference {
        *ref_counts.entry(w).or_default() += 1;
    }
    let mut cand_counts: HashMap<&T, usize> = HashMap::new();
    for w in candidate {
        *cand_counts.entry(w).or_default() += 1;
    }
    let clipped: usize = cand_counts
        .iter()
        .map(|(w, &c)| c.min(ref_counts.get(w).copied().unwrap_or(0)))
        .sum();
    let precision = clipped as f64 / candidate.len() as f64;
    let ratio = reference.len() as f64 / candidate.len() as f64;
    let bp = (1.0 - ratio).min(0.0).exp();
    Ok(precision * bp)
}

/// Symmetrized BLEU-1 of two nonempty descriptions.
pub fn pair_score<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<f64> {
    Ok(0.5 * (bleu1(a, b)? + bleu1(b, a)?))
}

/// Mean symmetrized BLEU-1 over all unordered pairs, or `None` with fewer
/// than two descriptions.
pub fn mean_pairwise<T: Eq + Hash>(descriptions: &[Vec<T>]) -> Result<Option<f64>> {
    let n = descriptions.len();
    if n < 2 {
        return Ok(None);
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += pair_score(&descriptions[i], &descriptions[j])?;
        }
    }
    Ok(Some(total / (n * (n - 1) / 2) as f64))
}

/// Descriptions of one box gathered from every caption that mentions it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxDescriptionGroup {
    pub box_id: usize,
    pub descriptions: Vec<Vec<String>>,
    /// Mentions whose extracted description was empty.
    pub dropped: usize,
}

impl BoxDescriptionGroup {
    pub fn new(box_id: usize) -> Self {
        BoxDescriptionGroup {
            box_id,
            ..Default::default()
        }
    }

    /// Records one mention; empty descriptions are counted and dropped.
    pub fn push(&mut self, description: Vec<String>) {
        if description.is_empty() {
            self.dropped += 1;
        } else {
            self.descriptions.push(description);
        }
    }
}

/// Mean over every box described at least twice within its image of the
/// box's mean pairwise BLEU-1, times 100.
pub fn consistency_score(images: &[Vec<BoxDescriptionGroup>]) -> Result<Score> {
    let mut total = 0.0;
    let mut n = 0;
    for groups in images {
        for g in groups {
            if let Some(s) = mean_pairwise(&g.descriptions)? {
                total += s;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::UndefinedScore(
            "no box is described by two or more captions".into(),
        ));
    }
    Ok(Score {
        value: 100.0 * total / n as f64,
        n_items: n,
    })
}

/// Box-level diversity over repeated sampled runs.
///
/// `per_box_runs[i]` holds the descriptions of one box in one relation, one
/// per run. Lower is more diverse.
pub fn bbox_diversity(per_box_runs: &[Vec<Vec<String>>], runs: usize) -> Result<Score> {
    if runs < 2 {
        return Err(Error::Config(format!(
            "box diversity needs at least two runs, got {runs}"
        )));
    }
    let mut total = 0.0;
    let mut n = 0;
    for descs in per_box_runs {
        if descs.len() != runs {
            return Err(Error::Contract(format!(
                "expected {runs} descriptions per box, got {}",
                descs.len()
            )));
        }
        let kept: Vec<Vec<String>> = descs.iter().filter(|d| !d.is_empty()).cloned().collect();
        if let Some(s) = mean_pairwise(&kept)? {
            total += s;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::UndefinedScore("no box has two nonempty runs".into()));
    }
    Ok(Score {
        value: 100.0 * total / n as f64,
        n_items: n,
    })
}

/// Fraction of each image's distinct ground-truth words that appear anywhere
/// in its generated captions, averaged over images, times 100.
///
/// Reconstruction of a metric defined elsewhere; images whose ground truth
/// has no words are skipped.
pub fn image_level_recall(generated: &[Vec<Vec<String>>], ground_truth: &[Vec<Vec<String>>]) -> Result<Score> {
    if generated.len() != ground_truth.len() {
        return Err(Error::Contract(format!(
            "{} generated images vs {} ground-truth images",
            generated.len(),
            ground_truth.len()
        )));
    }
    let mut total = 0.0;
    let mut n = 0;
    for (gen, gt) in generated.iter().zip(ground_truth) {
        let wanted: HashSet<&String> = gt.iter().flatten().collect();
        if wanted.is_empty() {
            continue;
        }
        let produced: HashSet<&String> = gen.iter().flatten().collect();
        let hit = wanted.iter().filter(|w| produced.contains(*w)).count();
        total += hit as f64 / wanted.len() as f64;
        n += 1;
    }
    if n == 0 {
        return Err(Error::UndefinedScore("no image has ground-truth words".into()));
    }
    Ok(Score {
        value: 100.0 * total / n as f64,
        n_items: n,
    })
}
