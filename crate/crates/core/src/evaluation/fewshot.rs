//! Supervised few-shot reference: a linear softmax classifier trained on
//! fixed spatio-temporal features of the target classes.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{summarize_rankings, EvalError, Ranking, SplitEval};
use crate::training::loss::{contrastive_loss_with_grad, one_hot};
use crate::training::optim::{Adam, AdamSettings, WarmupCosine};
use crate::ClassId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            base_lr: 1e-2,
            weight_decay: 1e-4,
            warmup_fraction: 0.1,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Linear classifier `W x + b` with one row per target class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub classes: Vec<ClassId>,
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl LinearProbe {
    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn logits(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weight * x + &self.bias
    }

    pub fn rank(&self, x: &DVector<f64>) -> Ranking {
        Ranking::from_scores(&self.classes, self.logits(x).as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub shots: usize,
    pub train_top1: f64,
    pub test: SplitEval,
    pub probe: LinearProbe,
}

/// Fits a cross-entropy linear probe on `train` (feature, label) pairs and
/// evaluates top-1/top-5 on `test`. Every class in `classes` needs at least
/// one training sample.
pub fn few_shot_probe(
    train: &[(DVector<f64>, ClassId)],
    test: &[(DVector<f64>, ClassId)],
    classes: &[ClassId],
    cfg: &ProbeConfig,
) -> Result<ProbeReport, EvalError> {
    if classes.is_empty() {
        return Err(EvalError::EmptyClassSet);
    }
    let index: BTreeMap<ClassId, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut counts = vec![0usize; classes.len()];
    for (_, y) in train {
        let i = *index
            .get(y)
            .ok_or_else(|| EvalError::InvalidDataset(format!("training label {y} is not a target class")))?;
        counts[i] += 1;
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(EvalError::InvalidDataset(format!(
            "class {} has no training samples",
            classes[i]
        )));
    }
    let dim = train[0].0.len();
    let shots = counts.iter().copied().min().unwrap_or(0);

    let mut probe = LinearProbe {
        classes: classes.to_vec(),
        weight: DMatrix::zeros(classes.len(), dim),
        bias: DVector::zeros(classes.len()),
    };
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size.max(1));
    let schedule = WarmupCosine::new(cfg.base_lr, steps_per_epoch * cfg.epochs.max(1), cfg.warmup_fraction);
    let mut adam = Adam::new(
        AdamSettings {
            weight_decay: cfg.weight_decay,
            ..AdamSettings::default()
        },
        &[probe.weight.len(), probe.bias.len()],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    for _ in 0..cfg.epochs.max(1) {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut gw = DMatrix::zeros(probe.weight.nrows(), dim);
            let mut gb = DVector::zeros(probe.bias.len());
            for &i in chunk {
                let (x, y) = &train[i];
                let q = one_hot(classes.len(), index[y]);
                let (_, g) = contrastive_loss_with_grad(&probe.logits(x), &q, 1.0)
                    .map_err(|e| EvalError::InvalidArgument(e.to_string()))?;
                gw += &g * x.transpose();
                gb += g;
            }
            let scale = 1.0 / chunk.len() as f64;
            gw *= scale;
            gb *= scale;
            adam.step(
                &mut [probe.weight.as_mut_slice(), probe.bias.as_mut_slice()],
                &[gw.as_slice(), gb.as_slice()],
                schedule.lr(step),
            );
            step += 1;
        }
    }

    let train_rankings: Vec<Ranking> = train.iter().map(|(x, _)| probe.rank(x)).collect();
    let train_labels: Vec<ClassId> = train.iter().map(|(_, y)| *y).collect();
    let train_top1 = super::topk_accuracy(&train_rankings, &train_labels, 1)?;
    let rankings: Vec<Ranking> = test.iter().map(|(x, _)| probe.rank(x)).collect();
    let labels: Vec<ClassId> = test.iter().map(|(_, y)| *y).collect();
    let test = summarize_rankings(&rankings, &labels, classes.len(), 0)?;
    Ok(ProbeReport {
        shots,
        train_top1,
        test,
        probe,
    })
}

/// Mean probe accuracy at one shot count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotResult {
    pub shots: usize,
    pub mean_top1: f64,
    pub mean_top5: f64,
    /// Top-1 of each support draw.
    pub draws: Vec<f64>,
}

/// Few-shot curve over `shots`. The last `queries_per_class` samples of each
/// class form a fixed query set; support sets are drawn from the rest,
/// `draws` times per shot count, with seeds derived from `cfg.seed`.
pub fn few_shot_curve(
    samples: &[(DVector<f64>, ClassId)],
    classes: &[ClassId],
    shots: &[usize],
    queries_per_class: usize,
    draws: usize,
    cfg: &ProbeConfig,
) -> Result<Vec<ShotResult>, EvalError> {
    if draws == 0 || queries_per_class == 0 {
        return Err(EvalError::InvalidDataset(
            "draws and queries per class must be positive".into(),
        ));
    }
    let mut pools: BTreeMap<ClassId, Vec<&(DVector<f64>, ClassId)>> =
        classes.iter().map(|&c| (c, Vec::new())).collect();
    for s in samples {
        if let Some(p) = pools.get_mut(&s.1) {
            p.push(s);
        }
    }
    let mut query = Vec::new();
    for (c, pool) in pools.iter_mut() {
        if pool.len() <= queries_per_class {
            return Err(EvalError::InvalidDataset(format!(
                "class {c} has {} samples, need more than {queries_per_class}",
                pool.len()
            )));
        }
        query.extend(pool.split_off(pool.len() - queries_per_class).into_iter().cloned());
    }
    let mut out = Vec::with_capacity(shots.len());
    for &n in shots {
        let mut top1 = Vec::with_capacity(draws);
        let mut top5 = 0.0;
        for d in 0..draws {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(d as u64));
            let mut support = Vec::new();
            for (c, pool) in &pools {
                if pool.len() < n {
                    return Err(EvalError::InvalidDataset(format!(
                        "class {c} has fewer than {n} support samples"
                    )));
                }
                support.extend(pool.choose_multiple(&mut rng, n).map(|s| (*s).clone()));
            }
            let report = few_shot_probe(
                &support,
                &query,
                classes,
                &ProbeConfig {
                    seed: cfg.seed + d as u64,
                    ..cfg.clone()
                },
            )?;
            top1.push(report.test.top1);
            top5 += report.test.top5;
        }
        out.push(ShotResult {
            shots: n,
            mean_top1: top1.iter().sum::<f64>() / draws as f64,
            mean_top5: top5 / draws as f64,
            draws: top1,
        });
    }
    Ok(out)
}
