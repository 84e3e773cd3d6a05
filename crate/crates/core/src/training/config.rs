use serde::{Deserialize, Serialize};

use crate::error::{GfdError, Result};
use crate::losses::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Classify among `{real, GAN_1, .., GAN_N}`.
    Attribution,
    /// Binary real/fake classification.
    Detection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub gamma: f64,
    pub step_size: usize,
    pub batch_size: usize,
    pub max_iters: usize,
    pub weights: LossWeights,
    pub pretrain_c_iters: usize,
    pub seed: u64,
    pub task: Task,
    pub adam: AdamConfig,
    /// Periodic checkpoint interval in iterations (0 disables).
    pub checkpoint_every: usize,
    /// Validation interval in iterations (0 validates only at the end).
    pub val_every: usize,
    /// Cache decoded images in memory.
    pub cache_images: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            gamma: 0.9,
            step_size: 500,
            batch_size: 16,
            max_iters: 10_000,
            weights: LossWeights::attribution(),
            pretrain_c_iters: 1000,
            seed: 0,
            task: Task::Attribution,
            adam: AdamConfig::default(),
            checkpoint_every: 1000,
            val_every: 500,
            cache_images: true,
        }
    }
}

impl TrainConfig {
    pub fn for_task(task: Task) -> Self {
        let weights = match task {
            Task::Attribution => LossWeights::attribution(),
            Task::Detection => LossWeights::detection(),
        };
        Self {
            task,
            weights,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(GfdError::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(GfdError::Config(format!(
                "gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.step_size == 0 {
            return Err(GfdError::Config("step_size must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(GfdError::Config("batch_size must be >= 1".into()));
        }
        self.weights.validate()
    }
}
