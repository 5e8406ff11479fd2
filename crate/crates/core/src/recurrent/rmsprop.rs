use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            rho: 0.9,
            epsilon: 1e-8,
        }
    }
}

/// RMSprop with the accumulator kept alongside the parameters it scales.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    pub state: Vec<f64>,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig, len: usize) -> Self {
        Self {
            config,
            state: vec![0.0; len],
        }
    }

    /// `state = rho*state + (1-rho)*g^2`, then `w -= lr*g/sqrt(state + eps)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(
            params.len(),
            grad.len(),
            "parameter/gradient length mismatch"
        );
        assert_eq!(
            params.len(),
            self.state.len(),
            "parameter/state length mismatch"
        );
        let RmsPropConfig {
            learning_rate: lr,
            rho,
            epsilon: eps,
        } = self.config;
        for ((w, s), &g) in params.iter_mut().zip(&mut self.state).zip(grad) {
            *s = rho * *s + (1.0 - rho) * g * g;
            *w -= lr * g / (*s + eps).sqrt();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut opt = RmsProp::new(RmsPropConfig::default(), 3);
        let mut w = vec![0.5, -1.0, 2.0];
        opt.step(&mut w, &[0.0; 3]);
        assert_eq!(w, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn first_step_value() {
        let mut opt = RmsProp::new(RmsPropConfig::default(), 1);
        let mut w = vec![0.0];
        opt.step(&mut w, &[1.0]);
        assert!((w[0] - -0.0031622775020545).abs() < 1e-15, "{}", w[0]);
        assert!((opt.state[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn repeated_gradient_step_approaches_lr() {
        let mut opt = RmsProp::new(RmsPropConfig::default(), 1);
        let mut w = vec![0.0];
        let mut last = 0.0;
        for _ in 0..500 {
            let before = w[0];
            opt.step(&mut w, &[3.0]);
            last = before - w[0];
        }
        assert!((last - 0.001).abs() < 1e-9, "{last}");
    }
}
