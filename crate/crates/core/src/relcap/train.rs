use serde::{Deserialize, Serialize};

use super::model::{GeneratedCaption, RelcapConfig, RelcapModel};
use super::scene::{build_corpus, LabelVariant, Scene};
use super::vocab::PosTag;
use crate::decoder::{DecoderMode, Sampling};
use crate::diffcore::{Sgd, Tape};
use crate::error::{Error, Result};
use crate::metrics::{bbox_diversity, consistency_score, image_level_recall, BoxDescriptionGroup, Score};
use crate::training::{epoch_order, LrSchedule, TrainState};

/// Scenes captioned together at evaluation time.
const EVAL_CHUNK: usize = 10;

pub fn initial_state(config: &RelcapConfig) -> TrainState {
    TrainState::new(
        config.lr,
        config.min_lr,
        LrSchedule::HalveEvery {
            epochs: config.halve_every,
        },
    )
}

/// Training and test scenes drawn from disjoint seed streams.
pub fn build_splits(config: &RelcapConfig) -> Result<(Vec<Scene>, Vec<Scene>)> {
    let train = build_corpus(config.train_scenes, &config.scene, config.seed.wrapping_mul(2))?;
    let test = build_corpus(config.test_scenes, &config.scene, config.seed.wrapping_mul(2) + 1)?;
    Ok((train, test))
}

/// One shuffled pass over `scenes`; returns the mean batch loss.
pub fn run_epoch(model: &mut RelcapModel, scenes: &[Scene], state: &TrainState) -> Result<f64> {
    let config = model.config.clone();
    let sgd = Sgd::new(state.lr, config.momentum)?.with_weight_decay(config.weight_decay)?;
    let order = epoch_order(scenes.len(), config.seed, state.epoch);
    let mut total = 0.0;
    let mut batches = 0;
    for chunk in order.chunks(config.scenes_per_batch) {
        let batch: Vec<&Scene> = chunk.iter().map(|&i| &scenes[i]).collect();
        let mut tape = Tape::new();
        let loss = model.loss(&mut tape, &batch)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Divergence {
                epoch: state.epoch + 1,
                loss: value,
            });
        }
        total += value;
        batches += 1;
        model.store.zero_grads();
        tape.backward(loss, &mut model.store)?;
        if let Some(max) = config.clip_norm {
            model.store.clip_grad_norm(max);
        }
        sgd.step(&mut model.store)?;
    }
    Ok(total / batches.max(1) as f64)
}

pub fn train_until<F>(
    model: &mut RelcapModel,
    scenes: &[Scene],
    state: &mut TrainState,
    epochs: usize,
    mut on_epoch: F,
) -> Result<()>
where
    F: FnMut(&RelcapModel, &TrainState) -> Result<()>,
{
    while state.epoch < epochs {
        let loss = run_epoch(model, scenes, state)?;
        state.finish_epoch(loss, None)?;
        on_epoch(model, state)?;
    }
    Ok(())
}

pub fn train_relcap(scenes: &[Scene], config: &RelcapConfig, mode: DecoderMode) -> Result<(RelcapModel, TrainState)> {
    let mut model = RelcapModel::new(config, mode)?;
    let mut state = initial_state(config);
    train_until(&mut model, scenes, &mut state, config.epochs, |_, _| Ok(()))?;
    Ok((model, state))
}

/// Groups each region's descriptions, extracted by tag, over one scene's captions.
pub fn box_groups(scene: &Scene, captions: &[GeneratedCaption]) -> Result<Vec<BoxDescriptionGroup>> {
    if captions.len() != scene.pairs.len() {
        return Err(Error::Contract(format!(
            "{} captions for {} pairs",
            captions.len(),
            scene.pairs.len()
        )));
    }
    let mut groups: Vec<BoxDescriptionGroup> = (0..scene.regions.len()).map(BoxDescriptionGroup::new).collect();
    for (p, c) in scene.pairs.iter().zip(captions) {
        groups[p.subject].push(c.span(PosTag::Subj));
        groups[p.object].push(c.span(PosTag::Obj));
    }
    Ok(groups)
}

fn caption_all(
    model: &RelcapModel,
    scenes: &[Scene],
    sampling: Sampling,
    seed: u64,
) -> Result<Vec<Vec<GeneratedCaption>>> {
    let mut out = Vec::with_capacity(scenes.len());
    for (i, chunk) in scenes.chunks(EVAL_CHUNK).enumerate() {
        let refs: Vec<&Scene> = chunk.iter().collect();
        out.extend(model.caption_scenes(&refs, sampling, seed.wrapping_add(i as u64))?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelcapReport {
    pub consistency: Score,
    pub bbox_diversity: Score,
    pub image_recall: Score,
    /// Share of greedy caption tokens equal to the reference token at the
    /// same position, times 100.
    pub token_accuracy: f64,
    pub dropped_descriptions: usize,
}

/// An undefined score (no box with two usable descriptions, say) becomes NaN
/// over zero items so that a report can still be written.
fn defined_or_nan(score: Result<Score>) -> Result<Score> {
    match score {
        Err(Error::UndefinedScore(_)) => Ok(Score {
            value: f64::NAN,
            n_items: 0,
        }),
        other => other,
    }
}

/// Greedy captions drive consistency and recall; `runs` sampled decodes
/// drive box-level diversity.
pub fn evaluate(model: &RelcapModel, scenes: &[Scene], runs: usize, seed: u64) -> Result<RelcapReport> {
    let greedy = caption_all(model, scenes, Sampling::Greedy, seed)?;
    let mut images = Vec::with_capacity(scenes.len());
    let mut dropped = 0;
    let mut hits = 0usize;
    let mut total = 0usize;
    for (scene, caps) in scenes.iter().zip(&greedy) {
        let groups = box_groups(scene, caps)?;
        dropped += groups.iter().map(|g| g.dropped).sum::<usize>();
        images.push(groups);
        for (gen, reference) in caps.iter().zip(&scene.labels(model.config.label_set).captions) {
            total += reference.tokens.len();
            hits += gen.tokens.iter().zip(&reference.tokens).filter(|(a, b)| a == b).count();
        }
    }
    let consistency = defined_or_nan(consistency_score(&images))?;

    let sampling = Sampling::Sample {
        temperature: model.config.temperature,
    };
    let mut sampled = Vec::with_capacity(runs);
    for run in 0..runs {
        sampled.push(caption_all(
            model,
            scenes,
            sampling,
            seed.wrapping_add(1_000 * (run as u64 + 1)),
        )?);
    }
    let mut per_box = Vec::new();
    for (si, scene) in scenes.iter().enumerate() {
        for pi in 0..scene.pairs.len() {
            for role in [PosTag::Subj, PosTag::Obj] {
                per_box.push(sampled.iter().map(|run| run[si][pi].span(role)).collect());
            }
        }
    }
    let bbox_diversity = defined_or_nan(bbox_diversity(&per_box, runs))?;

    let generated: Vec<Vec<Vec<String>>> = greedy
        .iter()
        .map(|caps| caps.iter().map(|c| c.tokens.clone()).collect())
        .collect();
    let truth: Vec<Vec<Vec<String>>> = scenes
        .iter()
        .map(|s| {
            s.labels(LabelVariant::Original)
                .captions
                .into_iter()
                .map(|c| c.tokens)
                .collect()
        })
        .collect();
    let image_recall = image_level_recall(&generated, &truth)?;

    Ok(RelcapReport {
        consistency,
        bbox_diversity,
        image_recall,
        token_accuracy: 100.0 * hits as f64 / total.max(1) as f64,
        dropped_descriptions: dropped,
    })
}
