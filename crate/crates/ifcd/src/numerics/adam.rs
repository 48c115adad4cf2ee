//! Adam over a flat parameter buffer. Trainable structs expose their
//! parameters through write_flat/read_flat and feed this a single slice.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub step: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, hyper: AdamHyper) -> Self {
        AdamState {
            hyper,
            step: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
        }
    }

    /// One bias-corrected Adam update in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.first_moment.len(), "adam param shape");
        assert_eq!(grads.len(), params.len(), "adam grad shape");
        self.step += 1;
        let AdamHyper { lr, beta1, beta2, eps } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            self.second_moment[i] = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            let m_hat = self.first_moment[i] / bc1;
            let v_hat = self.second_moment[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_zero_moments_leaves_params_unchanged() {
        let mut state = AdamState::new(3, AdamHyper::default());
        let mut params = vec![1.0, -2.0, 0.5];
        state.update(&mut params, &[0.0, 0.0, 0.0]);
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn step_on_quadratic_descends() {
        let mut state = AdamState::new(1, AdamHyper { lr: 0.1, ..Default::default() });
        let mut w = vec![1.0];
        let grad = vec![2.0 * w[0]]; // f(w) = w^2
        state.update(&mut w, &grad);
        assert!(w[0] < 1.0);
    }

    #[test]
    fn converges_on_2d_quadratic() {
        // f(w) = 2(w0-1)^2 + 0.5(w1+3)^2
        let mut state = AdamState::new(2, AdamHyper { lr: 0.05, ..Default::default() });
        let mut w = vec![0.0, 0.0];
        let mut loss = f64::INFINITY;
        for _ in 0..2000 {
            let grads = vec![4.0 * (w[0] - 1.0), 1.0 * (w[1] + 3.0)];
            state.update(&mut w, &grads);
            loss = 2.0 * (w[0] - 1.0).powi(2) + 0.5 * (w[1] + 3.0).powi(2);
            if loss < 1e-6 {
                break;
            }
        }
        assert!(loss < 1e-6, "final loss {loss}");
    }
}
