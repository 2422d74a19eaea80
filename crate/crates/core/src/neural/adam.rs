use serde::{Deserialize, Serialize};

use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Per-epoch multiplicative decay: the rate at epoch `e` is `lr·(1 − decay)^e`.
    pub decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.0,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    epoch: usize,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&[f64]]) -> Self {
        Self {
            config,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
            epoch: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.lr * (1.0 - self.config.decay).powi(self.epoch as i32)
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[Vec<f64>]) -> Result<(), NeuralError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NeuralError::GradientMismatch(format!(
                "{} parameter tensors, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[k].len() {
                return Err(NeuralError::GradientMismatch(format!("tensor {k} length")));
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let lr = self.learning_rate();
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.5, -1.0];
        let mut st = AdamState::new(AdamConfig::default(), &[&p]);
        st.step(vec![&mut p], &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![0.5, -1.0]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn single_scalar_step_by_hand() {
        // Step 1 with gradient g: m = 0.1g, v = 0.001g², mhat = g, vhat = g²,
        // update = lr·g/(|g| + eps).
        let (lr, g, eps) = (0.01, 0.4, 1e-8);
        let mut p = vec![2.0];
        let cfg = AdamConfig {
            lr,
            ..Default::default()
        };
        let mut st = AdamState::new(cfg, &[&p]);
        st.step(vec![&mut p], &[vec![g]]).unwrap();
        let expected = 2.0 - lr * g / (g + eps);
        assert!((p[0] - expected).abs() < 1e-15);
        // Step 2 with the same gradient keeps mhat = g and vhat = g².
        st.step(vec![&mut p], &[vec![g]]).unwrap();
        let m2 = 0.9 * 0.1 * g + 0.1 * g;
        let v2 = 0.999 * 0.001 * g * g + 0.001 * g * g;
        let upd = lr * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + eps);
        assert!((p[0] - (expected - upd)).abs() < 1e-14);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut w = vec![1.0];
        let cfg = AdamConfig {
            lr: 0.05,
            ..Default::default()
        };
        let mut st = AdamState::new(cfg, &[&w]);
        for _ in 0..500 {
            let g = vec![2.0 * w[0]];
            st.step(vec![&mut w], &[g]).unwrap();
        }
        assert!(w[0].abs() < 1e-3, "w = {}", w[0]);
    }

    #[test]
    fn decay_shrinks_rate() {
        let p = vec![0.0];
        let mut st = AdamState::new(
            AdamConfig {
                lr: 0.1,
                decay: 0.5,
                ..Default::default()
            },
            &[&p],
        );
        st.set_epoch(2);
        assert!((st.learning_rate() - 0.025).abs() < 1e-15);
    }

    #[test]
    fn mismatched_gradients_rejected() {
        let mut p = vec![0.0, 1.0];
        let mut st = AdamState::new(AdamConfig::default(), &[&p]);
        assert!(st.step(vec![&mut p], &[vec![0.0]]).is_err());
    }
}
