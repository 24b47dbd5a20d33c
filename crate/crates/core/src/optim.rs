//! Bias-corrected first/second-moment optimizer.

use serde::{Deserialize, Serialize};

use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state; serializable so training can be checkpointed and resumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. `grad` must share the layout of `params`.
    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector) {
        assert_eq!(params.len(), grad.len(), "gradient length");
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let it = params
            .values_mut()
            .iter_mut()
            .zip(grad.values())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()));
        for ((p, &g), (m, v)) in it {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *p -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Layout;
    use std::sync::Arc;

    #[test]
    fn first_step_moves_each_coordinate_by_lr() {
        let layout = Arc::new(Layout::from_shapes([("w", vec![3])]));
        let mut p = ParamVector::new(layout.clone(), vec![1.0, 1.0, 1.0]).unwrap();
        let g = ParamVector::new(layout, vec![2.0, -0.5, 0.0]).unwrap();
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), 3);
        opt.step(&mut p, &g);
        let v = p.values();
        assert!((v[0] - 0.9).abs() < 1e-6);
        assert!((v[1] - 1.1).abs() < 1e-6);
        assert_eq!(v[2], 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let layout = Arc::new(Layout::from_shapes([("w", vec![2])]));
        let mut p = ParamVector::new(layout.clone(), vec![3.0, -2.0]).unwrap();
        let mut opt = Adam::new(AdamConfig::with_lr(0.05), 2);
        for _ in 0..2000 {
            let g = ParamVector::new(layout.clone(), p.values().iter().map(|x| 2.0 * x).collect())
                .unwrap();
            opt.step(&mut p, &g);
        }
        assert!(p.norm() < 1e-3);
    }
}
