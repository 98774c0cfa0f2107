use serde::{Deserialize, Serialize};

use super::NnError;

/// Adam optimizer state for one flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Result<Self, NnError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(NnError::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], steps: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Descends along `grads`. A gradient that is exactly zero everywhere is a
    /// no-op: neither parameters nor moments nor the step count change.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::Shape(format!(
                "optimizer holds {} moments, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some((i, g)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(NnError::NonFinite(format!("gradient[{i}] = {g}")));
        }
        if grads.iter().all(|g| *g == 0.0) {
            return Ok(());
        }
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Rescales `grads` in place so that its L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
