//! Reference zero-shot baselines evaluated with the same harness as the
//! main model.
//!
//! DEVISE, ALE, SJE and ESZSL learn a bilinear compatibility
//! `F(v, y) = φ(v)ᵀ W ψ(y)` between a video feature and a class feature;
//! DEM regresses visual features from class features and classifies by
//! nearest neighbour in visual space. Class features are L2-normalized
//! mean-pooled token vectors of the class names.

mod bilinear;
mod dem;
mod eszsl;

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::{summarize_rankings, EvalError, Ranking, SplitEval};
use crate::linalg;
use crate::text::{self, TokenEncoder};
use crate::training::optim::{Adam, AdamSettings, WarmupCosine};
use crate::ClassId;

pub use bilinear::{ale_step, devise_step, sje_step, AleWeights, BilinearModel};
pub use dem::{dem_loss, dem_step, DemModel};
pub use eszsl::{eszsl_objective, eszsl_solve, EszslConfig};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("regularized matrix is singular or ill-conditioned (condition number {condition:.3e})")]
    Singular { condition: f64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty training set")]
    Empty,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("class feature: {0}")]
    Text(String),
}

/// Loss of a batch and its gradient with respect to the model weights.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<G> {
    pub loss: f64,
    pub grad: G,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Devise,
    Ale,
    Sje,
    Dem,
    Eszsl,
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "devise" => Ok(Self::Devise),
            "ale" => Ok(Self::Ale),
            "sje" => Ok(Self::Sje),
            "dem" => Ok(Self::Dem),
            "eszsl" => Ok(Self::Eszsl),
            other => Err(format!(
                "unknown baseline {other:?}; expected devise, ale, sje, dem or eszsl"
            )),
        }
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Self::Devise => "devise",
            Self::Ale => "ale",
            Self::Sje => "sje",
            Self::Dem => "dem",
            Self::Eszsl => "eszsl",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub margin: f64,
    pub epochs: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub dem_hidden: usize,
    pub dem_lambda: f64,
    pub eszsl: EszslConfig,
    /// Build class features from full descriptions instead of names.
    pub use_descriptions: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            margin: 0.2,
            epochs: 50,
            base_lr: 1e-2,
            weight_decay: 1e-4,
            batch_size: 32,
            seed: 0,
            dem_hidden: 64,
            dem_lambda: 1e-4,
            eszsl: EszslConfig::default(),
            use_descriptions: false,
        }
    }
}

/// L2-normalized mean of the token vectors of `text`.
pub fn class_feature(text_in: &str, enc: &dyn TokenEncoder) -> Result<DVector<f64>, BaselineError> {
    let tokens = text::tokenize(text_in);
    if tokens.is_empty() {
        return Err(BaselineError::Text(format!("no tokens in {text_in:?}")));
    }
    let pooled = text::sentence_pool(&enc.encode(&tokens)).map_err(|e| BaselineError::Text(e.to_string()))?;
    linalg::normalize(&pooled)
        .map(|(u, _)| u)
        .ok_or_else(|| BaselineError::Text(format!("zero feature for {text_in:?}")))
}

/// Stacks class features as columns.
pub fn class_feature_matrix(texts: &[&str], enc: &dyn TokenEncoder) -> Result<DMatrix<f64>, BaselineError> {
    let cols = texts
        .iter()
        .map(|t| class_feature(t, enc))
        .collect::<Result<Vec<_>, _>>()?;
    if cols.is_empty() {
        return Err(BaselineError::Empty);
    }
    Ok(DMatrix::from_columns(&cols))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FittedBaseline {
    Bilinear { method: BaselineKind, model: BilinearModel },
    Dem { model: DemModel },
}

impl FittedBaseline {
    /// Compatibility of one video with every class column (higher is better).
    pub fn scores(&self, video: &DVector<f64>, classes: &DMatrix<f64>) -> Vec<f64> {
        match self {
            Self::Bilinear { model, .. } => model.scores(video, classes).iter().copied().collect(),
            Self::Dem { model } => (0..classes.ncols())
                .map(|j| -(video - model.map_class(&classes.column(j).into_owned())).norm_squared())
                .collect(),
        }
    }

    pub fn rank(&self, video: &DVector<f64>, classes: &DMatrix<f64>, class_ids: &[ClassId]) -> Ranking {
        Ranking::from_scores(class_ids, &self.scores(video, classes))
    }
}

/// Trains `kind` on seen-class videos. `labels` index columns of `classes`.
pub fn fit(
    kind: BaselineKind,
    videos: &[DVector<f64>],
    labels: &[usize],
    classes: &DMatrix<f64>,
    cfg: &BaselineConfig,
) -> Result<FittedBaseline, BaselineError> {
    if videos.is_empty() || videos.len() != labels.len() {
        return Err(BaselineError::Empty);
    }
    let dv = videos[0].len();
    let dc = classes.nrows();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes.ncols()) {
        return Err(BaselineError::ShapeMismatch(format!(
            "label {bad} outside {} classes",
            classes.ncols()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match kind {
        BaselineKind::Eszsl => {
            let phi = DMatrix::from_columns(videos);
            let y = DMatrix::from_fn(
                videos.len(),
                classes.ncols(),
                |n, s| if labels[n] == s { 1.0 } else { -1.0 },
            );
            let w = eszsl_solve(&phi, &y, classes, &cfg.eszsl)?;
            Ok(FittedBaseline::Bilinear {
                method: kind,
                model: BilinearModel { w, margin: cfg.margin },
            })
        }
        BaselineKind::Dem => {
            let mut model = DemModel::init(dc, cfg.dem_hidden, dv, cfg.dem_lambda, cfg.seed);
            let mut adam = Adam::new(AdamSettings::default(), &[model.w1.len(), model.w2.len()]);
            run_epochs(videos.len(), cfg, &mut rng, |idx, lr| {
                let vs: Vec<&DVector<f64>> = idx.iter().map(|&i| &videos[i]).collect();
                let cs: Vec<DVector<f64>> = idx.iter().map(|&i| classes.column(labels[i]).into_owned()).collect();
                let out = dem_step(&vs, &cs.iter().collect::<Vec<_>>(), &model)?;
                adam.step(
                    &mut [model.w1.as_mut_slice(), model.w2.as_mut_slice()],
                    &[out.grad.0.as_slice(), out.grad.1.as_slice()],
                    lr,
                );
                Ok(())
            })?;
            Ok(FittedBaseline::Dem { model })
        }
        BaselineKind::Devise | BaselineKind::Ale | BaselineKind::Sje => {
            let mut model = BilinearModel::init(dv, dc, cfg.margin, cfg.seed);
            let ale = AleWeights::new(classes.ncols());
            let mut adam = Adam::new(
                AdamSettings {
                    weight_decay: cfg.weight_decay,
                    ..AdamSettings::default()
                },
                &[model.w.len()],
            );
            run_epochs(videos.len(), cfg, &mut rng, |idx, lr| {
                let vs: Vec<&DVector<f64>> = idx.iter().map(|&i| &videos[i]).collect();
                let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                let out = match kind {
                    BaselineKind::Devise => devise_step(&vs, &ys, classes, &model)?,
                    BaselineKind::Ale => ale_step(&vs, &ys, classes, &model, &ale)?,
                    _ => sje_step(&vs, &ys, classes, &model)?,
                };
                adam.step(&mut [model.w.as_mut_slice()], &[out.grad.as_slice()], lr);
                Ok(())
            })?;
            Ok(FittedBaseline::Bilinear { method: kind, model })
        }
    }
}

fn run_epochs(
    n: usize,
    cfg: &BaselineConfig,
    rng: &mut ChaCha8Rng,
    mut step: impl FnMut(&[usize], f64) -> Result<(), BaselineError>,
) -> Result<(), BaselineError> {
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(BaselineError::InvalidConfig(
            "batch_size and epochs must be positive".into(),
        ));
    }
    let steps = n.div_ceil(cfg.batch_size) * cfg.epochs;
    let schedule = WarmupCosine::new(cfg.base_lr, steps, 0.1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            step(chunk, schedule.lr(t))?;
            t += 1;
        }
    }
    Ok(())
}

/// Zero-shot evaluation of a fitted baseline on unseen classes.
pub fn evaluate(
    fitted: &FittedBaseline,
    videos: &[(DVector<f64>, ClassId)],
    classes: &DMatrix<f64>,
    class_ids: &[ClassId],
    split_index: usize,
) -> Result<SplitEval, BaselineError> {
    let rankings: Vec<Ranking> = videos.iter().map(|(v, _)| fitted.rank(v, classes, class_ids)).collect();
    let labels: Vec<ClassId> = videos.iter().map(|(_, y)| *y).collect();
    Ok(summarize_rankings(&rankings, &labels, class_ids.len(), split_index)?)
}
