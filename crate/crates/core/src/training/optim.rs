//! Adam with L2 weight decay, and the warm-up + cosine learning-rate schedule.

use super::JointModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam state over flat parameter buffers.
#[derive(Debug, Clone)]
pub struct Adam {
    settings: AdamSettings,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Adam {
    pub fn new(settings: AdamSettings, shapes: &[usize]) -> Self {
        Self {
            settings,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            steps: 0,
        }
    }

    pub fn for_model(settings: AdamSettings, model: &JointModel) -> Self {
        let shapes: Vec<usize> = model.tensors().iter().map(|(_, t)| t.len()).collect();
        Self::new(settings, &shapes)
    }

    /// One update of every buffer in `params` using the matching `grads`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        assert_eq!(params.len(), self.first.len(), "parameter group count changed");
        self.steps += 1;
        let s = self.settings;
        let bias1 = 1.0 - s.beta1.powi(self.steps as i32);
        let bias2 = 1.0 - s.beta2.powi(self.steps as i32);
        for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..param.len() {
                let g = grad[j] + s.weight_decay * param[j];
                m[j] = s.beta1 * m[j] + (1.0 - s.beta1) * g;
                v[j] = s.beta2 * v[j] + (1.0 - s.beta2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                param[j] -= lr * m_hat / (v_hat.sqrt() + s.eps);
            }
        }
    }

    pub fn step_model(&mut self, model: &mut JointModel, grad: &JointModel, lr: f64) {
        let grads: Vec<&[f64]> = grad.tensors().iter().map(|(_, t)| *t).collect();
        let mut tensors = model.tensors_mut();
        let mut params: Vec<&mut [f64]> = tensors.iter_mut().map(|(_, t)| &mut **t).collect();
        self.step(&mut params, &grads, lr);
    }
}

/// Linear warm-up over the first `warmup_fraction` of steps, then cosine
/// annealing to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupCosine {
    pub base_lr: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl WarmupCosine {
    pub fn new(base_lr: f64, total_steps: usize, warmup_fraction: f64) -> Self {
        let warmup_steps = ((total_steps as f64) * warmup_fraction).ceil() as usize;
        Self {
            base_lr,
            total_steps: total_steps.max(1),
            warmup_steps: warmup_steps.min(total_steps),
        }
    }

    /// Learning rate for the zero-based `step`.
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        0.5 * self.base_lr * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn schedule_warms_up_then_anneals() {
        let s = WarmupCosine::new(1.0, 100, 0.1);
        assert_eq!(s.warmup_steps, 10);
        assert_abs_diff_eq!(s.lr(0), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(s.lr(9), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.lr(10), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.lr(55), 0.5, epsilon = 1e-12);
        assert!(s.lr(99) < 0.001);
        for step in 10..99 {
            assert!(s.lr(step + 1) <= s.lr(step));
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(AdamSettings::default(), &[2]);
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.step(&mut [&mut x[..]], &[&g[..]], 0.05);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-3), "{x:?}");
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut x = vec![1.0];
        let mut opt = Adam::new(AdamSettings::default(), &[1]);
        opt.step(&mut [&mut x[..]], &[&[0.5][..]], 0.1);
        assert_abs_diff_eq!(x[0], 0.9, epsilon = 1e-6);
    }
}
