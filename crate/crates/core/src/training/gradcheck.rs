//! Central finite-difference check of [`batch_loss`] gradients.

use serde::Serialize;

use super::model::{batch_loss, Batch, JointModel, LossSettings, ModelError};

/// Worst disagreement found in one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: &'static str,
    pub entries: usize,
    /// `‖a − n‖ / max(‖a‖, ‖n‖)` over the whole tensor.
    pub tensor_rel_error: f64,
    /// Largest entrywise [`relative_error`].
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a − n| / max(|a|, |n|, floor)`. The floor keeps entries whose true
/// gradient is zero from turning rounding noise into huge ratios.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares every entry of every trainable tensor with the central
/// difference `(L(θ+ε) − L(θ−ε)) / 2ε`.
pub fn finite_difference_check(
    model: &JointModel,
    batch: &Batch<'_>,
    settings: &LossSettings,
    eps: f64,
    floor: f64,
) -> Result<Vec<TensorCheck>, ModelError> {
    let (_, grad) = batch_loss(model, batch, settings, true)?;
    let grad = grad.expect("gradient requested");
    let grads = grad.tensors();
    let mut out = Vec::with_capacity(grads.len());
    let mut probe = model.clone();
    for (t, (name, analytic)) in grads.iter().enumerate() {
        let mut check = TensorCheck {
            name,
            entries: analytic.len(),
            tensor_rel_error: 0.0,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        let mut diff_sq = 0.0;
        let mut a_sq = 0.0;
        let mut n_sq = 0.0;
        for i in 0..analytic.len() {
            let original = probe.tensors_mut()[t].1[i];
            probe.tensors_mut()[t].1[i] = original + eps;
            let hi = batch_loss(&probe, batch, settings, false)?.0.total;
            probe.tensors_mut()[t].1[i] = original - eps;
            let lo = batch_loss(&probe, batch, settings, false)?.0.total;
            probe.tensors_mut()[t].1[i] = original;
            let numeric = (hi - lo) / (2.0 * eps);
            diff_sq += (analytic[i] - numeric).powi(2);
            a_sq += analytic[i].powi(2);
            n_sq += numeric.powi(2);
            let err = relative_error(analytic[i], numeric, floor);
            if err > check.max_rel_error || i == 0 {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = analytic[i];
                check.numeric = numeric;
            }
        }
        check.tensor_rel_error = diff_sq.sqrt() / a_sq.max(n_sq).sqrt().max(floor);
        out.push(check);
    }
    Ok(out)
}
