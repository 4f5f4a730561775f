use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BaselineError, StepOutput};
use crate::linalg;

/// Bilinear compatibility `F(v, y) = vᵀ W ψ(y)` with a fixed ranking margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilinearModel {
    /// `D_video × D_class`.
    pub w: DMatrix<f64>,
    pub margin: f64,
}

impl BilinearModel {
    pub fn init(video_dim: usize, class_dim: usize, margin: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / ((video_dim * class_dim) as f64).sqrt();
        Self {
            w: linalg::uniform_matrix(video_dim, class_dim, bound, &mut rng),
            margin,
        }
    }

    /// `F(v, y)` for every class column.
    pub fn scores(&self, video: &DVector<f64>, classes: &DMatrix<f64>) -> DVector<f64> {
        classes.tr_mul(&self.w.tr_mul(video))
    }

    fn check(&self, videos: &[&DVector<f64>], labels: &[usize], classes: &DMatrix<f64>) -> Result<(), BaselineError> {
        if videos.len() != labels.len() || videos.is_empty() {
            return Err(BaselineError::ShapeMismatch(format!(
                "{} videos with {} labels",
                videos.len(),
                labels.len()
            )));
        }
        if classes.nrows() != self.w.ncols() {
            return Err(BaselineError::ShapeMismatch(format!(
                "class features of dim {} for W with {} columns",
                classes.nrows(),
                self.w.ncols()
            )));
        }
        for (v, &y) in videos.iter().zip(labels) {
            if v.len() != self.w.nrows() || y >= classes.ncols() {
                return Err(BaselineError::ShapeMismatch(format!(
                    "video of dim {} (W has {} rows), label {y} of {} classes",
                    v.len(),
                    self.w.nrows(),
                    classes.ncols()
                )));
            }
        }
        Ok(())
    }

    /// Hinge values `[Δ(yⁿ, y) + F(v, y) − F(v, yⁿ)]₊` for every class; the
    /// true class gets 0.
    fn hinges(&self, video: &DVector<f64>, label: usize, classes: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
        let f = self.scores(video, classes);
        let truth = f[label];
        let raw = DVector::from_fn(
            f.len(),
            |y, _| if y == label { 0.0 } else { self.margin + f[y] - truth },
        );
        (raw.map(|h| h.max(0.0)), raw)
    }

    /// `dF(v,y)/dW − dF(v,yⁿ)/dW = v (ψ_y − ψ_yⁿ)ᵀ`.
    fn pair_grad(video: &DVector<f64>, classes: &DMatrix<f64>, y: usize, label: usize) -> DMatrix<f64> {
        video * (classes.column(y) - classes.column(label)).transpose()
    }
}

/// Pairwise ranking loss summed over classes, averaged over the batch.
pub fn devise_step(
    videos: &[&DVector<f64>],
    labels: &[usize],
    classes: &DMatrix<f64>,
    model: &BilinearModel,
) -> Result<StepOutput<DMatrix<f64>>, BaselineError> {
    model.check(videos, labels, classes)?;
    let mut loss = 0.0;
    let mut grad = DMatrix::zeros(model.w.nrows(), model.w.ncols());
    for (v, &label) in videos.iter().zip(labels) {
        let (h, _) = model.hinges(v, label, classes);
        for y in 0..h.len() {
            if h[y] > 0.0 {
                loss += h[y];
                grad += BilinearModel::pair_grad(v, classes, y, label);
            }
        }
    }
    let n = videos.len() as f64;
    Ok(StepOutput {
        loss: loss / n,
        grad: grad / n,
    })
}

/// Prefix sums `l_k = Σ_{i≤k} 1/i` of the rank weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AleWeights {
    prefix: Vec<f64>,
}

impl AleWeights {
    pub fn new(class_count: usize) -> Self {
        let mut prefix = Vec::with_capacity(class_count + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for i in 1..=class_count {
            acc += 1.0 / i as f64;
            prefix.push(acc);
        }
        Self { prefix }
    }

    /// `l_r / r`, or 0 when no class violates the margin.
    pub fn weight(&self, violators: usize) -> f64 {
        if violators == 0 {
            0.0
        } else {
            self.prefix[violators] / violators as f64
        }
    }
}

/// Weighted approximate ranking loss: the hinge sum scaled by `l_r / r`,
/// where `r` counts wrong classes scoring within the margin of the truth.
pub fn ale_step(
    videos: &[&DVector<f64>],
    labels: &[usize],
    classes: &DMatrix<f64>,
    model: &BilinearModel,
    weights: &AleWeights,
) -> Result<StepOutput<DMatrix<f64>>, BaselineError> {
    model.check(videos, labels, classes)?;
    if weights.prefix.len() <= classes.ncols() {
        return Err(BaselineError::ShapeMismatch(format!(
            "rank weights cover {} classes, need {}",
            weights.prefix.len() - 1,
            classes.ncols()
        )));
    }
    let mut loss = 0.0;
    let mut grad = DMatrix::zeros(model.w.nrows(), model.w.ncols());
    for (v, &label) in videos.iter().zip(labels) {
        let (h, raw) = model.hinges(v, label, classes);
        let violators = (0..raw.len()).filter(|&y| y != label && raw[y] >= 0.0).count();
        let w = weights.weight(violators);
        if w == 0.0 {
            continue;
        }
        for y in 0..h.len() {
            if h[y] > 0.0 {
                loss += w * h[y];
                grad += BilinearModel::pair_grad(v, classes, y, label) * w;
            }
        }
    }
    let n = videos.len() as f64;
    Ok(StepOutput {
        loss: loss / n,
        grad: grad / n,
    })
}

/// Structured joint embedding loss: only the hardest violating class counts.
pub fn sje_step(
    videos: &[&DVector<f64>],
    labels: &[usize],
    classes: &DMatrix<f64>,
    model: &BilinearModel,
) -> Result<StepOutput<DMatrix<f64>>, BaselineError> {
    model.check(videos, labels, classes)?;
    let mut loss = 0.0;
    let mut grad = DMatrix::zeros(model.w.nrows(), model.w.ncols());
    for (v, &label) in videos.iter().zip(labels) {
        let (h, _) = model.hinges(v, label, classes);
        // lowest index wins ties
        let (worst, value) = h
            .iter()
            .enumerate()
            .fold((label, 0.0), |acc, (y, &val)| if val > acc.1 { (y, val) } else { acc });
        if value > 0.0 {
            loss += value;
            grad += BilinearModel::pair_grad(v, classes, worst, label);
        }
    }
    let n = videos.len() as f64;
    Ok(StepOutput {
        loss: loss / n,
        grad: grad / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn identity_model(dim: usize) -> BilinearModel {
        BilinearModel {
            w: DMatrix::identity(dim, dim),
            margin: 0.2,
        }
    }

    /// Scores written out with explicit loops.
    fn oracle_scores(w: &DMatrix<f64>, v: &DVector<f64>, classes: &DMatrix<f64>) -> Vec<f64> {
        let mut out = vec![0.0; classes.ncols()];
        for y in 0..classes.ncols() {
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    out[y] += v[i] * w[(i, j)] * classes[(j, y)];
                }
            }
        }
        out
    }

    fn random_case(seed: u64) -> (BilinearModel, Vec<DVector<f64>>, Vec<usize>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = BilinearModel {
            w: DMatrix::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0)),
            margin: 0.2,
        };
        let videos = (0..4)
            .map(|_| DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let labels = vec![0, 2, 4, 1];
        let classes = DMatrix::from_fn(3, 5, |_, _| rng.gen_range(-1.0..1.0));
        (model, videos, labels, classes)
    }

    #[test]
    fn devise_zero_when_separated_and_margin_on_ties() {
        let m = identity_model(2);
        let classes = DMatrix::identity(2, 2);
        let v = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(devise_step(&[&v], &[0], &classes, &m).unwrap().loss, 0.0);
        let tie = DVector::from_vec(vec![0.5, 0.5]);
        assert_abs_diff_eq!(
            devise_step(&[&tie], &[0], &classes, &m).unwrap().loss,
            0.2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn devise_matches_loop_oracle() {
        let (model, videos, labels, classes) = random_case(10);
        let refs: Vec<&DVector<f64>> = videos.iter().collect();
        let mut expected = 0.0;
        for (v, &y) in videos.iter().zip(&labels) {
            let f = oracle_scores(&model.w, v, &classes);
            for c in 0..f.len() {
                let delta = if c == y { 0.0 } else { 0.2 };
                expected += (delta + f[c] - f[y]).max(0.0);
            }
        }
        assert_abs_diff_eq!(
            devise_step(&refs, &labels, &classes, &model).unwrap().loss,
            expected / 4.0,
            epsilon = 1e-8
        );
    }

    #[test]
    fn ale_examples() {
        let m = identity_model(2);
        let weights = AleWeights::new(3);
        let classes = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0]);
        let clear = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(ale_step(&[&clear], &[0], &classes, &m, &weights).unwrap().loss, 0.0);
        // one violator (class 1) with hinge 0.2 + 0.45 - 0.5
        let close = DVector::from_vec(vec![0.5, 0.45]);
        let out = ale_step(&[&close], &[0], &classes, &m, &weights).unwrap();
        assert_abs_diff_eq!(out.loss, 0.15, epsilon = 1e-12);
        assert_eq!(weights.weight(1), 1.0);
        assert_abs_diff_eq!(weights.weight(2), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn ale_matches_loop_oracle() {
        let (model, videos, labels, classes) = random_case(20);
        let refs: Vec<&DVector<f64>> = videos.iter().collect();
        let mut expected = 0.0;
        for (v, &y) in videos.iter().zip(&labels) {
            let f = oracle_scores(&model.w, v, &classes);
            let mut r = 0;
            let mut hinge_sum = 0.0;
            for c in 0..f.len() {
                if c == y {
                    continue;
                }
                if f[c] + 0.2 >= f[y] {
                    r += 1;
                }
                hinge_sum += (0.2 + f[c] - f[y]).max(0.0);
            }
            if r > 0 {
                let l_r: f64 = (1..=r).map(|i| 1.0 / i as f64).sum();
                expected += l_r / r as f64 * hinge_sum;
            }
        }
        let out = ale_step(&refs, &labels, &classes, &model, &AleWeights::new(5)).unwrap();
        assert_abs_diff_eq!(out.loss, expected / 4.0, epsilon = 1e-8);
    }

    #[test]
    fn sje_examples_and_oracle() {
        let m = identity_model(2);
        let classes = DMatrix::identity(2, 2);
        assert_eq!(
            sje_step(&[&DVector::from_vec(vec![1.0, 0.0])], &[0], &classes, &m)
                .unwrap()
                .loss,
            0.0
        );
        let tie = DVector::from_vec(vec![0.5, 0.5]);
        assert_abs_diff_eq!(
            sje_step(&[&tie], &[1], &classes, &m).unwrap().loss,
            0.2,
            epsilon = 1e-15
        );

        let (model, videos, labels, classes) = random_case(30);
        let refs: Vec<&DVector<f64>> = videos.iter().collect();
        let mut expected = 0.0;
        for (v, &y) in videos.iter().zip(&labels) {
            let f = oracle_scores(&model.w, v, &classes);
            let mut best: f64 = 0.0;
            for c in 0..f.len() {
                let delta = if c == y { 0.0 } else { 0.2 };
                best = best.max(delta + f[c] - f[y]);
            }
            expected += best;
        }
        assert_abs_diff_eq!(
            sje_step(&refs, &labels, &classes, &model).unwrap().loss,
            expected / 4.0,
            epsilon = 1e-8
        );
    }

    #[test]
    fn hinge_gradients_match_finite_differences() {
        let (model, videos, labels, classes) = random_case(40);
        let refs: Vec<&DVector<f64>> = videos.iter().collect();
        let weights = AleWeights::new(5);
        type StepFn<'a> = dyn Fn(&BilinearModel) -> StepOutput<DMatrix<f64>> + 'a;
        let steps: Vec<Box<StepFn<'_>>> = vec![
            Box::new(|m| devise_step(&refs, &labels, &classes, m).unwrap()),
            Box::new(|m| ale_step(&refs, &labels, &classes, m, &weights).unwrap()),
            Box::new(|m| sje_step(&refs, &labels, &classes, m).unwrap()),
        ];
        for f in &steps {
            let analytic = f(&model).grad;
            for idx in 0..model.w.len() {
                let eps = 1e-6;
                let mut hi = model.clone();
                hi.w.as_mut_slice()[idx] += eps;
                let mut lo = model.clone();
                lo.w.as_mut_slice()[idx] -= eps;
                let fd = (f(&hi).loss - f(&lo).loss) / (2.0 * eps);
                assert_abs_diff_eq!(analytic.as_slice()[idx], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn hinge_losses_are_nonnegative() {
        for seed in 0..50 {
            let (model, videos, labels, classes) = random_case(100 + seed);
            let refs: Vec<&DVector<f64>> = videos.iter().collect();
            assert!(devise_step(&refs, &labels, &classes, &model).unwrap().loss >= 0.0);
            assert!(
                ale_step(&refs, &labels, &classes, &model, &AleWeights::new(5))
                    .unwrap()
                    .loss
                    >= 0.0
            );
            assert!(sje_step(&refs, &labels, &classes, &model).unwrap().loss >= 0.0);
        }
    }
}
