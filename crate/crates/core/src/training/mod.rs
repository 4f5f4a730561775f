//! Contrastive training of the joint model on seen classes.

pub mod gradcheck;
pub mod loss;
mod model;
pub mod optim;
mod trainer;

use serde::{Deserialize, Serialize};

pub use model::{
    batch_concept_union, batch_loss, kink_margin, Batch, JointModel, LossBreakdown, LossSettings, ModelError,
    PreparedVideo, TextBank, PARAM_NAMES,
};
pub use trainer::{train, Checkpoint, CheckpointError, TrainError, TrainLogRecord, TrainOutcome, TrainingData};

/// Optimisation and objective settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Softmax temperature.
    pub tau: f64,
    /// Weight of the rehearsal loss.
    pub lambda: f64,
    /// Objects kept per video for the object stream and rehearsal labels.
    pub n_objects: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Divide each sample's three-term sum by 3.
    pub average_three: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            lambda: 1.0,
            n_objects: 5,
            base_lr: 1e-4,
            weight_decay: 1e-4,
            epochs: 10,
            warmup_fraction: 0.1,
            batch_size: 64,
            seed: 0,
            average_three: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tau > 0.0) {
            return Err(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lambda >= 0.0) {
            return Err(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.epochs == 0 {
            return Err("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be at least 1".into());
        }
        if self.n_objects == 0 {
            return Err("n_objects must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(format!(
                "warmup_fraction must be in [0, 1], got {}",
                self.warmup_fraction
            ));
        }
        if !(self.base_lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err("base_lr must be positive and weight_decay non-negative".into());
        }
        Ok(())
    }

    pub fn loss_settings(&self) -> LossSettings {
        LossSettings {
            tau: self.tau,
            lambda: self.lambda,
            average_three: self.average_three,
        }
    }
}
