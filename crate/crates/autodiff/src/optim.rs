use serde::{Deserialize, Serialize};

use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Momentum {
        lr: f64,
        beta: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self::Sgd { lr }
    }

    pub fn adam(lr: f64) -> Self {
        Self::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Self::Sgd { lr } | Self::Momentum { lr, .. } | Self::Adam { lr, .. } => lr,
        }
    }
}

/// First-order optimizer with its running state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn ensure_state(&mut self, params: &ParamSet) {
        if self.first.len() != params.len() {
            self.first = params
                .tensors()
                .iter()
                .map(|t| vec![0.0; t.len()])
                .collect();
            self.second = self.first.clone();
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) {
        debug_assert_eq!(params.len(), grads.len());
        self.steps += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for (p, g) in params.tensors_mut().iter_mut().zip(grads) {
                    for (x, gx) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= lr * gx;
                    }
                }
            }
            OptimizerConfig::Momentum { lr, beta } => {
                self.ensure_state(params);
                for ((p, g), v) in params
                    .tensors_mut()
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                {
                    for ((x, gx), vx) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *vx = beta * *vx + gx;
                        *x -= lr * *vx;
                    }
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                self.ensure_state(params);
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let tensors = params.tensors_mut().iter_mut().zip(grads);
                for ((p, g), (m, v)) in tensors.zip(self.first.iter_mut().zip(&mut self.second)) {
                    for (((x, gx), mx), vx) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mx = beta1 * *mx + (1.0 - beta1) * gx;
                        *vx = beta2 * *vx + (1.0 - beta2) * gx * gx;
                        *x -= lr * (*mx / c1) / ((*vx / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Plain gradient step `p ← p − lr·g`.
pub fn sgd_step(params: &mut ParamSet, grads: &[Tensor], lr: f64) {
    Optimizer::new(OptimizerConfig::sgd(lr)).step(params, grads);
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.push("p", Tensor::row_vector(&[v]));
        ps
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut ps = single(3.0);
        sgd_step(&mut ps, &[Tensor::row_vector(&[10.0])], 0.0);
        assert_eq!(ps.get(0).data(), &[3.0]);
    }

    #[test]
    fn quadratic_step_closed_form() {
        // d/dp ½p² = p
        let mut ps = single(2.5);
        let g = ps.get(0).clone();
        sgd_step(&mut ps, &[g], 0.001);
        assert_eq!(ps.get(0).data(), &[2.5 * (1.0 - 0.001)]);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut ps = single(1.0);
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.1));
        opt.step(&mut ps, &[Tensor::row_vector(&[4.0])]);
        // First Adam step has magnitude ≈ lr regardless of gradient scale.
        assert!((ps.get(0).data()[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Tensor::row_vector(&[3.0, 4.0])];
        let before = clip_grad_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
    }
}
