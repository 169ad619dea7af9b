//! Epoch bookkeeping shared by both tasks: learning-rate schedules and a
//! resumable training state.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diffcore::seeded_rng;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Halve after `patience` epochs without a new best validation loss.
    HalveOnPlateau {
        patience: usize,
    },
    /// Halve after every `epochs` epochs.
    HalveEvery {
        epochs: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Everything besides parameters needed to continue a run exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub schedule: LrSchedule,
    pub best_val: Option<f64>,
    pub stale_epochs: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(lr: f64, min_lr: f64, schedule: LrSchedule) -> Self {
        TrainState {
            epoch: 0,
            lr,
            min_lr,
            schedule,
            best_val: None,
            stale_epochs: 0,
            history: Vec::new(),
        }
    }

    /// Records a finished epoch and applies the schedule.
    pub fn finish_epoch(&mut self, train_loss: f64, val_loss: Option<f64>) -> Result<()> {
        let epoch = self.epoch + 1;
        if !train_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: train_loss,
            });
        }
        self.history.push(EpochRecord {
            epoch,
            lr: self.lr,
            train_loss,
            val_loss,
        });
        self.epoch = epoch;
        match self.schedule {
            LrSchedule::Constant => {}
            LrSchedule::HalveEvery { epochs } => {
                if epochs > 0 && epoch.is_multiple_of(epochs) {
                    self.halve();
                }
            }
            LrSchedule::HalveOnPlateau { patience } => {
                let v = val_loss.unwrap_or(train_loss);
                match self.best_val {
                    Some(best) if v >= best => {
                        self.stale_epochs += 1;
                        if self.stale_epochs >= patience.max(1) {
                            self.halve();
                            self.stale_epochs = 0;
                        }
                    }
                    _ => {
                        self.best_val = Some(v);
                        self.stale_epochs = 0;
                    }
                }
            }
        }
        Ok(())
    }

    fn halve(&mut self) {
        self.lr = (self.lr * 0.5).max(self.min_lr);
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.history.last().map(|r| r.train_loss)
    }
}

/// Sample order for `epoch`, a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed, 1_000 + epoch as u64));
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateau_halves_after_patience() {
        let mut s = TrainState::new(1.0, 0.1, LrSchedule::HalveOnPlateau { patience: 2 });
        s.finish_epoch(1.0, Some(1.0)).unwrap();
        s.finish_epoch(1.0, Some(1.1)).unwrap();
        assert_eq!(s.lr, 1.0);
        s.finish_epoch(1.0, Some(1.2)).unwrap();
        assert_eq!(s.lr, 0.5);
        for _ in 0..20 {
            s.finish_epoch(1.0, Some(5.0)).unwrap();
        }
        assert_eq!(s.lr, 0.1);
    }

    #[test]
    fn halve_every_two() {
        let mut s = TrainState::new(1e-3, 1e-6, LrSchedule::HalveEvery { epochs: 2 });
        s.finish_epoch(1.0, None).unwrap();
        assert_eq!(s.lr, 1e-3);
        s.finish_epoch(1.0, None).unwrap();
        assert_eq!(s.lr, 5e-4);
    }

    #[test]
    fn nan_loss_is_divergence() {
        let mut s = TrainState::new(1.0, 0.1, LrSchedule::Constant);
        s.finish_epoch(0.5, None).unwrap();
        assert!(matches!(
            s.finish_epoch(f64::NAN, None),
            Err(Error::Divergence { epoch: 2, .. })
        ));
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(50, 1, 3);
        assert_eq!(a, epoch_order(50, 1, 3));
        assert_ne!(a, epoch_order(50, 1, 4));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
}
