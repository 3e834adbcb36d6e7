use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments. One moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub params: AdamParams,
    step: u64,
    moments: Vec<(Vec<F>, Vec<F>)>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: AdamParams, sizes: &[usize]) -> Self {
        Self {
            params,
            step: 0,
            moments: sizes
                .iter()
                .map(|&n| (vec![F::zero(); n], vec![F::zero(); n]))
                .collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `params` and `grads` must line up with the sizes
    /// the optimizer was created with.
    pub fn update(&mut self, params: &mut [&mut [F]], grads: &[&[F]]) {
        assert_eq!(params.len(), self.moments.len());
        assert_eq!(grads.len(), self.moments.len());
        self.step += 1;
        let AdamParams { learning_rate, beta1, beta2, epsilon } = self.params;
        let t = self.step as i32;
        let c1 = F::of(1.0 / (1.0 - beta1.powi(t)));
        let c2 = F::of(1.0 / (1.0 - beta2.powi(t)));
        let (b1, b2) = (F::of(beta1), F::of(beta2));
        let (one_b1, one_b2) = (F::of(1.0 - beta1), F::of(1.0 - beta2));
        let (lr, eps) = (F::of(learning_rate), F::of(epsilon));
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.moments.iter_mut()) {
            assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                let mhat = m[i] * c1;
                let vhat = v[i] * c2;
                p[i] = p[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::<f64>::new(AdamParams::default(), &[1]);
        let mut w = [0.0];
        adam.update(&mut [&mut w], &[&[5.0]]);
        assert!((w[0] + 1e-3).abs() < 1e-11, "w = {}", w[0]);
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut adam = Adam::<f32>::new(AdamParams::default(), &[3]);
        let mut w = [0.3f32, -1.0, 2.0];
        for _ in 0..5 {
            adam.update(&mut [&mut w], &[&[0.0; 3]]);
        }
        assert_eq!(w, [0.3, -1.0, 2.0]);
        assert_eq!(adam.steps_taken(), 5);
    }
}
