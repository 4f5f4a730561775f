use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use super::BaselineError;

/// Ridge weights of the closed-form solver. The penalty on `‖W‖²` is fixed
/// to `gamma * lambda`, which is what makes the solution closed-form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EszslConfig {
    pub gamma: f64,
    pub lambda: f64,
    /// Condition numbers above this are reported as singular.
    pub max_condition: f64,
}

impl Default for EszslConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            lambda: 1.0,
            max_condition: 1e12,
        }
    }
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn factor(m: DMatrix<f64>, max_condition: f64) -> Result<Cholesky<f64, Dyn>, BaselineError> {
    let condition = condition_number(&m);
    if !condition.is_finite() || condition > max_condition {
        return Err(BaselineError::Singular { condition });
    }
    Cholesky::new(m).ok_or(BaselineError::Singular { condition })
}

/// `W = (Φ Φᵀ + γI)⁻¹ Φ Y Ψᵀ (Ψ Ψᵀ + λI)⁻¹`.
///
/// `phi` is `D × N` (videos as columns), `y` is `N × S`, `psi` is `Dc × S`.
pub fn eszsl_solve(
    phi: &DMatrix<f64>,
    y: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    cfg: &EszslConfig,
) -> Result<DMatrix<f64>, BaselineError> {
    if phi.ncols() != y.nrows() || psi.ncols() != y.ncols() {
        return Err(BaselineError::ShapeMismatch(format!(
            "Φ {:?}, Y {:?}, Ψ {:?}",
            phi.shape(),
            y.shape(),
            psi.shape()
        )));
    }
    let d = phi.nrows();
    let dc = psi.nrows();
    let left = factor(
        phi * phi.transpose() + DMatrix::identity(d, d) * cfg.gamma,
        cfg.max_condition,
    )?;
    let right = factor(
        psi * psi.transpose() + DMatrix::identity(dc, dc) * cfg.lambda,
        cfg.max_condition,
    )?;
    let middle = phi * y * psi.transpose();
    let a = left.solve(&middle);
    // X B = a with B symmetric  ⇔  B Xᵀ = aᵀ
    Ok(right.solve(&a.transpose()).transpose())
}

/// `‖ΦᵀWΨ − Y‖² + γ‖WΨ‖² + λ‖ΦᵀW‖² + γλ‖W‖²`, minimized by [`eszsl_solve`].
pub fn eszsl_objective(
    w: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    y: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    cfg: &EszslConfig,
) -> f64 {
    let fit = phi.transpose() * w * psi - y;
    fit.norm_squared()
        + cfg.gamma * (w * psi).norm_squared()
        + cfg.lambda * (phi.transpose() * w).norm_squared()
        + cfg.gamma * cfg.lambda * w.norm_squared()
}
