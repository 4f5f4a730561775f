use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BaselineError, StepOutput};
use crate::linalg;

/// Two-layer ReLU map from class space into visual space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemModel {
    /// `hidden × D_class`.
    pub w1: DMatrix<f64>,
    /// `D_video × hidden`.
    pub w2: DMatrix<f64>,
    pub lambda: f64,
}

impl DemModel {
    pub fn init(class_dim: usize, hidden: usize, video_dim: usize, lambda: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            w1: linalg::uniform_matrix(hidden, class_dim, 1.0 / (class_dim as f64).sqrt(), &mut rng),
            w2: linalg::uniform_matrix(video_dim, hidden, 1.0 / (hidden as f64).sqrt(), &mut rng),
            lambda,
        }
    }

    /// `relu(W2 relu(W1 ψ))`.
    pub fn map_class(&self, class: &DVector<f64>) -> DVector<f64> {
        let h = (&self.w1 * class).map(|a| a.max(0.0));
        (&self.w2 * h).map(|b| b.max(0.0))
    }

    fn regularizer(&self) -> f64 {
        self.lambda * (self.w1.norm_squared() + self.w2.norm_squared())
    }
}

pub fn dem_loss(videos: &[&DVector<f64>], classes: &[&DVector<f64>], model: &DemModel) -> Result<f64, BaselineError> {
    dem_step(videos, classes, model).map(|o| o.loss)
}

/// Mean squared reconstruction error of the visual features plus the L2
/// penalty on both layers; gradient is `(dW1, dW2)`.
pub fn dem_step(
    videos: &[&DVector<f64>],
    classes: &[&DVector<f64>],
    model: &DemModel,
) -> Result<StepOutput<(DMatrix<f64>, DMatrix<f64>)>, BaselineError> {
    if videos.len() != classes.len() || videos.is_empty() {
        return Err(BaselineError::ShapeMismatch(format!(
            "{} videos with {} class features",
            videos.len(),
            classes.len()
        )));
    }
    let n = videos.len() as f64;
    let mut g1 = &model.w1 * (2.0 * model.lambda);
    let mut g2 = &model.w2 * (2.0 * model.lambda);
    let mut loss = 0.0;
    for (v, c) in videos.iter().zip(classes) {
        if c.len() != model.w1.ncols() || v.len() != model.w2.nrows() {
            return Err(BaselineError::ShapeMismatch(format!(
                "class dim {} / video dim {} for W1 {:?}, W2 {:?}",
                c.len(),
                v.len(),
                model.w1.shape(),
                model.w2.shape()
            )));
        }
        let a = &model.w1 * *c;
        let h = a.map(|x| x.max(0.0));
        let b = &model.w2 * &h;
        let out = b.map(|x| x.max(0.0));
        let diff = *v - &out;
        loss += diff.norm_squared();
        let d_out = diff * (-2.0 / n);
        let d_b = d_out.zip_map(&b, |d, x| if x > 0.0 { d } else { 0.0 });
        g2 += &d_b * h.transpose();
        let d_h = model.w2.tr_mul(&d_b);
        let d_a = d_h.zip_map(&a, |d, x| if x > 0.0 { d } else { 0.0 });
        g1 += &d_a * c.transpose();
    }
    Ok(StepOutput {
        loss: loss / n + model.regularizer(),
        grad: (g1, g2),
    })
}
