use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. `lr` may be changed between steps by a
/// scheduler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension {
                expected: self.m.len(),
                actual: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grads.len()
                },
                context: "Adam parameter or gradient length",
            });
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.t.min(i32::MAX as u64) as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2_sqrt = (1.0 - beta2.powi(t)).sqrt();
        let step_size = lr / bc1;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let denom = v.sqrt() / bc2_sqrt + eps;
            *p -= step_size * (*m / denom);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_step_by_hand() {
        let eps = 1e-8;
        let mut s = AdamState::new(
            1,
            AdamConfig {
                lr: 1e-5,
                ..Default::default()
            },
        );
        let mut p = [0.0];
        s.step(&mut p, &[1.0]).unwrap();
        let expected = -1e-5 / (1.0 + eps);
        assert!((p[0] - expected).abs() <= 1e-15 * 1e-5, "{}", p[0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(3, AdamConfig::default());
        let mut p = [1.0, -2.0, 0.5];
        s.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.5]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(2, AdamConfig::default());
        assert!(s.step(&mut [0.0; 2], &[1.0]).is_err());
        assert!(s.step(&mut [0.0; 3], &[1.0; 3]).is_err());
    }

    #[test]
    fn trajectories_are_reproducible() {
        let run = || {
            let mut s = AdamState::new(2, AdamConfig::default());
            let mut p = vec![1.0, -1.0];
            for k in 0..50 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * x + k as f64 * 0.01).collect();
                s.step(&mut p, &g).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn sign_mirror(theta in prop::collection::vec(-5.0f64..5.0, 1..6), seed in 0u64..1000) {
            let grads: Vec<Vec<f64>> = (0..4)
                .map(|k| theta.iter().enumerate().map(|(i, x)| (x * (k + 1) as f64 + (seed + i as u64) as f64 * 0.1).sin()).collect())
                .collect();
            let mut a = AdamState::new(theta.len(), AdamConfig::default());
            let mut b = a.clone();
            let mut pa = theta.clone();
            let mut pb: Vec<f64> = theta.iter().map(|x| -x).collect();
            for g in &grads {
                let ng: Vec<f64> = g.iter().map(|x| -x).collect();
                a.step(&mut pa, g).unwrap();
                b.step(&mut pb, &ng).unwrap();
            }
            for (x, y) in pa.iter().zip(&pb) {
                prop_assert_eq!(*x, -*y);
            }
        }
    }
}
