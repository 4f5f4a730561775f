use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{batch_loss, Batch, LossBreakdown, ModelError, PreparedVideo, TextBank};
use super::optim::{Adam, AdamSettings, WarmupCosine};
use super::{JointModel, TrainConfig};
use crate::evaluation::{self, EvalSet};
use crate::ClassId;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyManifest,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("video {video_id} has label {label:?} outside the seen classes")]
    BadLabel { video_id: String, label: Option<ClassId> },
    #[error("non-finite loss at epoch {epoch} step {step}: {breakdown:?}")]
    NonFinite {
        epoch: usize,
        step: usize,
        breakdown: LossBreakdown,
        snapshot: Box<JointModel>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("validation failed: {0}")]
    Validation(#[from] evaluation::EvalError),
}

/// One optimisation step. Validation metrics are filled on the last step
/// of each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub step: usize,
    pub l_ar: f64,
    pub l_er: f64,
    pub loss: f64,
    pub lr: f64,
    pub val_top1: Option<f64>,
    pub val_top5: Option<f64>,
}

pub struct TrainingData<'a> {
    pub train: &'a [PreparedVideo],
    pub seen_classes: &'a [ClassId],
    pub bank: &'a TextBank,
    pub val: Option<EvalSet<'a>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the selected epoch.
    pub model: JointModel,
    pub log: Vec<TrainLogRecord>,
    /// One-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_top1: Option<f64>,
}

/// Runs minibatch Adam over `data.train` starting from `model`.
///
/// The whole loop is single-threaded in effect: batch contributions are
/// reduced in a fixed order, so identical inputs give identical curves.
/// With a validation set the parameters of the best validation top-1 epoch
/// are returned (earliest on ties); otherwise the final parameters.
pub fn train(data: &TrainingData<'_>, cfg: &TrainConfig, mut model: JointModel) -> Result<TrainOutcome, TrainError> {
    cfg.validate().map_err(TrainError::InvalidConfig)?;
    if data.train.is_empty() {
        return Err(TrainError::EmptyManifest);
    }
    let column: HashMap<ClassId, usize> = data.seen_classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let class_pooled = data
        .seen_classes
        .iter()
        .map(|c| {
            data.bank
                .class(*c)
                .ok_or_else(|| ModelError::Batch(format!("seen class {c} has no description")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let labels = data
        .train
        .iter()
        .map(|v| {
            v.label
                .and_then(|l| column.get(&l).copied())
                .ok_or_else(|| TrainError::BadLabel {
                    video_id: v.video_id.clone(),
                    label: v.label,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let settings = cfg.loss_settings();
    let steps_per_epoch = data.train.len().div_ceil(cfg.batch_size);
    let schedule = WarmupCosine::new(cfg.base_lr, steps_per_epoch * cfg.epochs, cfg.warmup_fraction);
    let mut adam = Adam::for_model(
        AdamSettings {
            weight_decay: cfg.weight_decay,
            ..AdamSettings::default()
        },
        &model,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut log = Vec::with_capacity(steps_per_epoch * cfg.epochs);
    let mut best: Option<(f64, usize, JointModel)> = None;
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch {
                videos: chunk.iter().map(|&i| &data.train[i]).collect(),
                labels: chunk.iter().map(|&i| labels[i]).collect(),
                class_pooled: class_pooled.clone(),
                concept_pooled: &data.bank.concepts,
            };
            let (breakdown, grad) = batch_loss(&model, &batch, &settings, true)?;
            let grad = grad.expect("gradient requested");
            if !breakdown.total.is_finite() || !grad.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    step,
                    breakdown,
                    snapshot: Box::new(model),
                });
            }
            let lr = schedule.lr(step);
            adam.step_model(&mut model, &grad, lr);
            log.push(TrainLogRecord {
                epoch,
                step,
                l_ar: breakdown.ar,
                l_er: breakdown.er,
                loss: breakdown.total,
                lr,
                val_top1: None,
                val_top5: None,
            });
            step += 1;
        }
        if let Some(val) = &data.val {
            let result = evaluation::evaluate(&model, val, data.bank, 0)?;
            if let Some(last) = log.last_mut() {
                last.val_top1 = Some(result.top1);
                last.val_top5 = Some(result.top5);
            }
            log::debug!("epoch {epoch}: val top-1 {:.2} top-5 {:.2}", result.top1, result.top5);
            // ties go to the later epoch, which is further along the decay
            if best.as_ref().is_none_or(|(b, _, _)| result.top1 >= *b) {
                best = Some((result.top1, epoch, model.clone()));
            }
        }
    }

    Ok(match best {
        Some((top1, epoch, m)) => TrainOutcome {
            model: m,
            log,
            best_epoch: epoch,
            best_val_top1: Some(top1),
        },
        None => TrainOutcome {
            model,
            log,
            best_epoch: cfg.epochs,
            best_val_top1: None,
        },
    })
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed checkpoint {path}: {source}")]
    Format { path: String, source: serde_json::Error },
    #[error("checkpoint format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
}

/// Serialized trained parameters plus the settings that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub train: TrainConfig,
    pub best_epoch: usize,
    pub model: JointModel,
}

impl Checkpoint {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn new(config_hash: String, train: TrainConfig, best_epoch: usize, model: JointModel) -> Self {
        Self {
            format_version: Self::FORMAT_VERSION,
            config_hash,
            seed: train.seed,
            train,
            best_epoch,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let json = serde_json::to_vec_pretty(self).map_err(|source| CheckpointError::Format {
            path: path.display().to_string(),
            source,
        })?;
        std::fs::write(path, json).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ckpt: Self = serde_json::from_slice(&bytes).map_err(|source| CheckpointError::Format {
            path: path.display().to_string(),
            source,
        })?;
        if ckpt.format_version != Self::FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: ckpt.format_version,
                expected: Self::FORMAT_VERSION,
            });
        }
        Ok(ckpt)
    }
}
