//! Similarity scores and the contrastive objectives built on them.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("label row has no positive entry")]
    NoPositive,
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Video-to-class similarities `p_v = x_vo · Z` and `p_o = x_ov · Z`, where
/// the columns of `z` are unit class embeddings.
pub fn similarity(
    x_vo: &DVector<f64>,
    x_ov: &DVector<f64>,
    z: &DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>), LossError> {
    if x_vo.len() != z.nrows() || x_ov.len() != z.nrows() {
        return Err(LossError::ShapeMismatch(format!(
            "embeddings of length {}/{} against a {}-row class matrix",
            x_vo.len(),
            x_ov.len(),
            z.nrows()
        )));
    }
    Ok((z.tr_mul(x_vo), z.tr_mul(x_ov)))
}

/// `p = p_v + max(p_o, 0)`: negative object-stream evidence is dropped.
pub fn fuse_scores(p_v: &DVector<f64>, p_o: &DVector<f64>) -> DVector<f64> {
    p_v.zip_map(p_o, |v, o| v + o.max(0.0))
}

/// Log-softmax of `p / tau` computed with max subtraction.
fn log_softmax(p: &DVector<f64>, tau: f64) -> DVector<f64> {
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max) / tau;
    let lse = p.iter().map(|&v| (v / tau - max).exp()).sum::<f64>().ln() + max;
    p.map(|v| v / tau - lse)
}

fn check(p: &DVector<f64>, q: &DVector<f64>, tau: f64) -> Result<f64, LossError> {
    if !(tau > 0.0) {
        return Err(LossError::BadTemperature(tau));
    }
    if p.len() != q.len() {
        return Err(LossError::ShapeMismatch(format!(
            "score row of length {} with label row of length {}",
            p.len(),
            q.len()
        )));
    }
    let positives: f64 = q.sum();
    if positives <= 0.0 {
        return Err(LossError::NoPositive);
    }
    Ok(positives)
}

/// Multi-label contrastive loss
/// `-(1/Σq) Σ_i q_i log softmax(p/τ)_i`.
pub fn contrastive_loss(p: &DVector<f64>, q: &DVector<f64>, tau: f64) -> Result<f64, LossError> {
    contrastive_loss_with_grad(p, q, tau).map(|(l, _)| l)
}

/// Loss value and `dL/dp = (softmax(p/τ) - q/Σq) / τ`.
pub fn contrastive_loss_with_grad(
    p: &DVector<f64>,
    q: &DVector<f64>,
    tau: f64,
) -> Result<(f64, DVector<f64>), LossError> {
    let positives = check(p, q, tau)?;
    let log_prob = log_softmax(p, tau);
    let loss = -q.dot(&log_prob) / positives;
    let grad = log_prob.zip_map(q, |lp, qi| (lp.exp() - qi / positives) / tau);
    Ok((loss.max(0.0), grad))
}

/// The three score rows produced for one video against one label space.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTriple {
    /// Fused score `p`.
    pub fused: DVector<f64>,
    pub visual: DVector<f64>,
    pub object: DVector<f64>,
}

/// Sum of the contrastive losses of the three rows, optionally divided by 3.
pub fn triple_loss(s: &ScoreTriple, q: &DVector<f64>, tau: f64, average_three: bool) -> Result<f64, LossError> {
    let sum = contrastive_loss(&s.fused, q, tau)?
        + contrastive_loss(&s.visual, q, tau)?
        + contrastive_loss(&s.object, q, tau)?;
    Ok(if average_three { sum / 3.0 } else { sum })
}

pub fn one_hot(len: usize, index: usize) -> DVector<f64> {
    let mut q = DVector::zeros(len);
    q[index] = 1.0;
    q
}

/// Action recognition loss: batch mean of the three contrastive terms
/// against one-hot labels.
pub fn ar_loss(batch: &[ScoreTriple], labels: &[usize], tau: f64, average_three: bool) -> Result<f64, LossError> {
    if batch.len() != labels.len() || batch.is_empty() {
        return Err(LossError::ShapeMismatch(format!(
            "{} score triples with {} labels",
            batch.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (s, &label) in batch.iter().zip(labels) {
        if label >= s.fused.len() {
            return Err(LossError::ShapeMismatch(format!(
                "label {label} outside {} classes",
                s.fused.len()
            )));
        }
        total += triple_loss(s, &one_hot(s.fused.len(), label), tau, average_three)?;
    }
    Ok(total / batch.len() as f64)
}

/// Rehearsal loss value plus the number of videos skipped for having no
/// positive concept in the label space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErLoss {
    pub value: f64,
    pub excluded: usize,
}

/// Concept scores for one video: `p_c = p_cv + p_co` (plain sum).
pub fn concept_scores(
    x_vo: &DVector<f64>,
    x_ov: &DVector<f64>,
    concepts: &DMatrix<f64>,
) -> Result<ScoreTriple, LossError> {
    let (visual, object) = similarity(x_vo, x_ov, concepts)?;
    Ok(ScoreTriple {
        fused: &visual + &object,
        visual,
        object,
    })
}

/// Rehearsal loss over a batch: each video's embeddings are scored against
/// the batch concept matrix and trained toward its own detected concepts.
pub fn er_loss(
    videos: &[(DVector<f64>, DVector<f64>)],
    concepts: &DMatrix<f64>,
    concept_labels: &[DVector<f64>],
    tau: f64,
    average_three: bool,
) -> Result<ErLoss, LossError> {
    if videos.len() != concept_labels.len() {
        return Err(LossError::ShapeMismatch(format!(
            "{} videos with {} concept label rows",
            videos.len(),
            concept_labels.len()
        )));
    }
    let mut total = 0.0;
    let mut counted = 0usize;
    for ((x_vo, x_ov), q) in videos.iter().zip(concept_labels) {
        if q.sum() <= 0.0 {
            continue;
        }
        let s = concept_scores(x_vo, x_ov, concepts)?;
        total += triple_loss(&s, q, tau, average_three)?;
        counted += 1;
    }
    let excluded = videos.len() - counted;
    Ok(ErLoss {
        value: if counted == 0 { 0.0 } else { total / counted as f64 },
        excluded,
    })
}

pub fn total_loss(ar: f64, er: f64, lambda: f64) -> f64 {
    ar + lambda * er
}
