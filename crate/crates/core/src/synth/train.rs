use super::data::{PairedSequences, SynthDataset};
use super::model::{Normalizer, SynthConfig, SynthModel};
use crate::decoder::DecoderMode;
use crate::diffcore::{Sgd, Tape};
use crate::error::{Error, Result};
use crate::training::{epoch_order, LrSchedule, TrainState};

pub fn initial_state(config: &SynthConfig) -> TrainState {
    let schedule = match config.plateau_patience {
        Some(patience) => LrSchedule::HalveOnPlateau { patience },
        None => LrSchedule::Constant,
    };
    TrainState::new(config.lr, config.min_lr, schedule)
}

/// Mean training loss of `samples` without updating anything.
pub fn validation_loss(model: &SynthModel, samples: &[PairedSequences]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(250) {
        let mut tape = Tape::new();
        let (_, loss) = model.forward(&mut tape, chunk, false)?;
        total += tape.value(loss).item()? * chunk.len() as f64;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// One pass over the training split in the seeded order of the next epoch.
/// Returns the mean batch loss.
pub fn run_epoch(model: &mut SynthModel, train: &[PairedSequences], state: &TrainState) -> Result<f64> {
    let config = model.config.clone();
    let sgd = Sgd::new(state.lr, config.momentum)?;
    let order = epoch_order(train.len(), config.seed, state.epoch);
    let mut total = 0.0;
    let mut batch = Vec::with_capacity(config.batch_size);
    for chunk in order.chunks(config.batch_size) {
        batch.clear();
        batch.extend(chunk.iter().map(|&i| train[i].clone()));
        let mut tape = Tape::new();
        let (_, loss) = model.forward(&mut tape, &batch, config.teacher_forcing)?;
        let value = tape.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Divergence {
                epoch: state.epoch + 1,
                loss: value,
            });
        }
        total += value * batch.len() as f64;
        model.store.zero_grads();
        tape.backward(loss, &mut model.store)?;
        if let Some(max) = config.clip_norm {
            model.store.clip_grad_norm(max);
        }
        sgd.step(&mut model.store)?;
    }
    Ok(total / train.len().max(1) as f64)
}

/// Continues training until `state.epoch == epochs`, validating after each
/// epoch. `on_epoch` sees the model after every epoch (for checkpoints).
pub fn train_until<F>(
    model: &mut SynthModel,
    data: &SynthDataset,
    state: &mut TrainState,
    epochs: usize,
    mut on_epoch: F,
) -> Result<()>
where
    F: FnMut(&SynthModel, &TrainState) -> Result<()>,
{
    while state.epoch < epochs {
        let train_loss = run_epoch(model, &data.train, state)?;
        let val_loss = if data.val.is_empty() {
            None
        } else {
            Some(validation_loss(model, &data.val)?)
        };
        state.finish_epoch(train_loss, val_loss)?;
        on_epoch(model, state)?;
    }
    Ok(())
}

/// Builds a model for `mode` and trains it for `config.epochs`.
pub fn train_synth(data: &SynthDataset, config: &SynthConfig, mode: DecoderMode) -> Result<(SynthModel, TrainState)> {
    let mut model = SynthModel::new(config, mode, Normalizer::fit(&data.train))?;
    let mut state = initial_state(config);
    train_until(&mut model, data, &mut state, config.epochs, |_, _| Ok(()))?;
    Ok((model, state))
}
