//! Small vector helpers shared by the embedding and training code.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Norms below this are treated as a degenerate (zero) embedding.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Extra division passes used to land on a rounding fixed point.
const REFINE_PASSES: usize = 3;

/// Returns `v / ‖v‖₂` and the norm, or `None` when the norm is numerically zero.
///
/// The result is refined until dividing it by its own norm no longer
/// changes any bit, so normalizing an already-normalized vector (or any
/// power-of-two multiple of it) returns it unchanged.
pub fn normalize(v: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let norm = v.norm();
    if !norm.is_finite() || norm < DEGENERATE_NORM {
        return None;
    }
    let mut unit = v / norm;
    for _ in 0..REFINE_PASSES {
        let next = &unit / unit.norm();
        if next == unit {
            break;
        }
        unit = next;
    }
    Some((unit, norm))
}

/// Backward pass of `x = y / ‖y‖`: maps `dL/dx` to `dL/dy`.
pub fn normalize_backward(x: &DVector<f64>, norm: f64, grad_x: &DVector<f64>) -> DVector<f64> {
    let along = x.dot(grad_x);
    (grad_x - x * along) / norm
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Uniform `[-bound, bound]` initialisation, the usual fan-in scheme for linear layers.
pub fn uniform_matrix<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}

pub fn uniform_vector<R: Rng>(len: usize, bound: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.gen_range(-bound..=bound))
}

pub fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    #[test]
    fn normalize_is_idempotent_bitwise() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for len in 1..40 {
            let v = super::uniform_vector(len, 3.0, &mut rng);
            let (u, _) = super::normalize(&v).unwrap();
            assert_eq!(super::normalize(&u).unwrap().0, u);
            assert_eq!(super::normalize(&(&u * 0.5)).unwrap().0, u);
        }
    }

    use super::*;

    #[test]
    fn normalize_rejects_zero() {
        assert!(normalize(&DVector::zeros(4)).is_none());
        let (u, n) = normalize(&DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert_eq!(n, 5.0);
        assert_eq!(u.as_slice(), &[0.6, 0.8]);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
    }
}
