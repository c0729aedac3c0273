use std::io::Write;

use serde::{Deserialize, Serialize};

use super::optim::{Optimizer, OptimizerKind};
use super::params::{Gradients, ParamStore};
use super::tape::Activation;
use super::NnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub activation: Activation,
    pub seed: u64,
    /// Stop after this many epochs without a new best validation loss.
    pub early_stop: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            activation: Activation::Tanh,
            seed: 0,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    /// A learning rate of exactly zero is accepted and leaves weights untouched.
    pub fn validate(&self) -> Result<(), NnError> {
        if self.epochs == 0 {
            return Err(NnError::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig(format!(
                "learning rate must be a non-negative finite number, got {}",
                self.learning_rate
            )));
        }
        if self.early_stop == Some(0) {
            return Err(NnError::InvalidConfig("early-stop patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// Loss of a model on fixed data, as seen by [`train`].
pub trait Objective {
    /// Training loss and its parameter gradients.
    fn train_loss(&self, params: &ParamStore) -> Result<(f64, Gradients), NnError>;

    /// Validation loss, or `None` when there is no validation split.
    fn val_loss(&self, params: &ParamStore) -> Result<Option<f64>, NnError>;
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossCurves {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
    pub best_epoch: usize,
}

impl LossCurves {
    pub fn best_val(&self) -> Option<f64> {
        self.val.get(self.best_epoch).copied()
    }

    pub fn final_train(&self) -> Option<f64> {
        self.train.last().copied()
    }
}

/// Full-batch training. Losses for epoch `e` are measured before its update;
/// `params` ends at the state with the lowest validation loss (training loss
/// when there is no validation split).
pub fn train(params: &mut ParamStore, cfg: &TrainConfig, objective: &dyn Objective) -> Result<LossCurves, NnError> {
    cfg.validate()?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, params);
    let mut curves = LossCurves::default();
    let mut best = (f64::INFINITY, params.clone());
    for epoch in 0..cfg.epochs {
        let (loss, grads) = objective.train_loss(params)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(NnError::NonFiniteLoss { epoch });
        }
        let val = objective.val_loss(params)?;
        if let Some(v) = val {
            if !v.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch });
            }
            curves.val.push(v);
        }
        curves.train.push(loss);
        let score = val.unwrap_or(loss);
        if score < best.0 {
            best = (score, params.clone());
            curves.best_epoch = epoch;
        }
        if let Some(patience) = cfg.early_stop {
            if epoch - curves.best_epoch >= patience {
                log::debug!("early stop at epoch {epoch}, best {}", curves.best_epoch);
                break;
            }
        }
        params.zero_grads();
        params.accumulate_grads(&grads);
        opt.step(params);
    }
    *params = best.1;
    params.zero_grads();
    Ok(curves)
}

/// `epoch,train_loss,val_loss` rows; the validation column is empty when absent.
pub fn write_loss_csv(curves: &LossCurves, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,val_loss")?;
    for (e, t) in curves.train.iter().enumerate() {
        match curves.val.get(e) {
            Some(v) => writeln!(out, "{e},{t:e},{v:e}")?,
            None => writeln!(out, "{e},{t:e},")?,
        }
    }
    Ok(())
}
