use super::ParamStore;
use crate::error::{Error, Result};

/// SGD with classical momentum and optional L2 decay:
/// `buffer <- momentum * buffer + grad + decay * value; value <- value - lr * buffer`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Sgd {
            lr,
            momentum,
            weight_decay: 0.0,
        })
    }

    pub fn with_weight_decay(mut self, decay: f64) -> Result<Self> {
        if !(decay >= 0.0) {
            return Err(Error::Config(format!("weight decay must be non-negative, got {decay}")));
        }
        self.weight_decay = decay;
        Ok(self)
    }

    pub fn step(&self, store: &mut ParamStore) -> Result<()> {
        if let Some((_, p)) = store.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::Contract(format!("parameter {} has no gradient", p.name)));
        }
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let p = store.get_mut(id);
            let grad = p.grad.as_ref().expect("checked above");
            for ((buf, g), v) in p
                .momentum
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(p.value.data_mut().iter_mut())
            {
                *buf = self.momentum * *buf + g + self.weight_decay * *v;
                *v -= self.lr * *buf;
            }
        }
        Ok(())
    }
}
