use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    SoftmaxXent,
    SigmoidXent,
    Mse,
}

impl LossKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Cls => LossKind::SoftmaxXent,
            Task::Reg => LossKind::Mse,
            Task::Ren => LossKind::SigmoidXent,
        }
    }
}

pub const BATCH_SIZES: [usize; 2] = [16, 32];
pub const MAX_EPOCHS: usize = 1000;

/// Hyperparameters of one training run. Every field has a default, so a
/// JSON config may name only the fields it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Epochs at which the learning rate is multiplied by `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u32,
    /// Defaults to the natural loss of the task when absent.
    pub loss: Option<LossKind>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Stop after this many consecutive epochs with a perfect running train
    /// metric; 0 disables early stopping.
    pub patience: usize,
    /// Running train pixel error counted as perfect for regression.
    pub reg_stop_px: f64,
    /// Full train/test evaluation every this many epochs (and always after
    /// the last one).
    pub eval_every: usize,
    /// Examples per forward pass during evaluation.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.005,
            milestones: vec![200, 400, 600, 800],
            lr_decay: 0.1,
            weight_decay: 0.0,
            batch_size: 32,
            epochs: 1000,
            seed: 0,
            loss: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 10,
            reg_stop_px: 0.1,
            eval_every: 1,
            eval_batch: 64,
        }
    }
}

impl TrainConfig {
    pub fn loss_for(&self, task: Task) -> LossKind {
        self.loss.unwrap_or(LossKind::for_task(task))
    }

    /// Checks ranges and that the loss fits the task's output head.
    pub fn validate(&self, task: Task) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lr.is_finite() && self.lr > 0.0) {
            problems.push(format!("lr must be > 0 (got {})", self.lr));
        }
        if !(self.weight_decay.is_finite() && (0.0..1.0).contains(&self.weight_decay)) {
            problems.push(format!("weight decay must be in [0, 1) (got {})", self.weight_decay));
        }
        if !BATCH_SIZES.contains(&self.batch_size) {
            problems.push(format!("batch size must be one of {BATCH_SIZES:?} (got {})", self.batch_size));
        }
        if !(1..=MAX_EPOCHS).contains(&self.epochs) {
            problems.push(format!("epochs must be in [1, {MAX_EPOCHS}] (got {})", self.epochs));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            problems.push(format!("lr decay must be in (0, 1] (got {})", self.lr_decay));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            problems.push("adam betas must be in [0, 1) and eps > 0".to_string());
        }
        if self.eval_every == 0 || self.eval_batch == 0 {
            problems.push("eval_every and eval_batch must be ≥ 1".to_string());
        }
        if self.loss_for(task) != LossKind::for_task(task) {
            problems.push(format!("loss {:?} does not fit the {task} task", self.loss_for(task)));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(problems.join("; ")))
        }
    }
}
