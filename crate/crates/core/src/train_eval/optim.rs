//! First-order optimizers over a parameter store.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam {
        #[serde(default = "default_adam_lr")]
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
    Adadelta {
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default = "default_adadelta_lr")]
        lr: f64,
        #[serde(default = "default_adadelta_eps")]
        eps: f64,
    },
}

fn default_adam_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_rho() -> f64 {
    0.95
}
fn default_adadelta_lr() -> f64 {
    5e-3
}
fn default_adadelta_eps() -> f64 {
    1e-6
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }

    pub fn adadelta() -> Self {
        OptimizerKind::Adadelta {
            rho: default_rho(),
            lr: default_adadelta_lr(),
            eps: default_adadelta_eps(),
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::adam(default_adam_lr())
    }
}

/// Optimizer state: per-parameter moment accumulators plus a step counter.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    /// Adam: first moment. AdaDelta: running squared gradients.
    acc1: Vec<Vec<f64>>,
    /// Adam: second moment. AdaDelta: running squared deltas.
    acc2: Vec<Vec<f64>>,
    step: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &ParamSet) -> Self {
        let acc1 = params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        let acc2 = params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        Optimizer {
            kind,
            acc1,
            acc2,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update from the gradients accumulated in `params`.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.acc1.len() {
            return Err(Error::config(format!(
                "optimizer tracks {} parameters, store has {}",
                self.acc1.len(),
                params.len()
            )));
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                for (i, p) in params.iter_mut().enumerate() {
                    let m = &mut self.acc1[i];
                    let v = &mut self.acc2[i];
                    if m.len() != p.grad.len() {
                        return Err(Error::config(format!(
                            "optimizer state shape mismatch for '{}'",
                            p.name
                        )));
                    }
                    let values = p.value.data_mut();
                    for j in 0..m.len() {
                        let g = p.grad[j];
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        values[j] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::Adadelta { rho, lr, eps } => {
                for (i, p) in params.iter_mut().enumerate() {
                    let eg = &mut self.acc1[i];
                    let ed = &mut self.acc2[i];
                    if eg.len() != p.grad.len() {
                        return Err(Error::config(format!(
                            "optimizer state shape mismatch for '{}'",
                            p.name
                        )));
                    }
                    let values = p.value.data_mut();
                    for j in 0..eg.len() {
                        let g = p.grad[j];
                        eg[j] = rho * eg[j] + (1.0 - rho) * g * g;
                        let delta = -lr * ((ed[j] + eps).sqrt() / (eg[j] + eps).sqrt()) * g;
                        ed[j] = rho * ed[j] + (1.0 - rho) * delta * delta;
                        values[j] += delta;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store_with_grad(values: &[f64], grads: &[f64]) -> ParamSet {
        let mut params = ParamSet::new();
        let id = params.add("p", Tensor::from_vec(values.to_vec()).unwrap());
        params.get_mut(id).grad.copy_from_slice(grads);
        params
    }

    #[test]
    fn adam_first_step_is_nearly_signed_lr() {
        let lr = 1e-3;
        for &g in &[0.5, -2.0, 10.0, -0.01] {
            let mut params = store_with_grad(&[1.0], &[g]);
            let mut opt = Optimizer::new(OptimizerKind::adam(lr), &params);
            opt.step(&mut params).unwrap();
            let delta = params.get(crate::numerics::ParamId(0)).value.data()[0] - 1.0;
            assert!(delta.signum() == -g.signum());
            assert!(delta.abs() >= 0.99 * lr && delta.abs() <= lr, "delta {delta}");
        }
    }

    #[test]
    fn adam_first_step_closed_form() {
        // m_hat = g, v_hat = g^2 => delta = -lr * g / (|g| + eps)
        let lr = 1e-3;
        let g = 3.7;
        let eps = default_adam_eps();
        let mut params = store_with_grad(&[0.0], &[g]);
        let mut opt = Optimizer::new(OptimizerKind::adam(lr), &params);
        opt.step(&mut params).unwrap();
        let got = params.get(crate::numerics::ParamId(0)).value.data()[0];
        let expect = -lr * g / (g.abs() + eps);
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn adam_scale_invariance_on_first_step() {
        let step_of = |g: f64| {
            let mut params = store_with_grad(&[0.0], &[g]);
            let mut opt = Optimizer::new(OptimizerKind::adam(1e-3), &params);
            opt.step(&mut params).unwrap();
            params.get(crate::numerics::ParamId(0)).value.data()[0]
        };
        let a = step_of(0.3);
        let b = step_of(0.6);
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn zero_grad_means_zero_delta() {
        for kind in [OptimizerKind::adam(1e-3), OptimizerKind::adadelta()] {
            let mut params = store_with_grad(&[2.5], &[0.0]);
            let mut opt = Optimizer::new(kind, &params);
            opt.step(&mut params).unwrap();
            assert_eq!(params.get(crate::numerics::ParamId(0)).value.data()[0], 2.5);
        }
    }

    #[test]
    fn adadelta_first_step_closed_form() {
        // E[g^2] = 0.05 g^2, E[d^2] = 0
        // delta = -lr * sqrt(eps) / sqrt(0.05 g^2 + eps) * g
        let (rho, lr, eps) = (0.95, 5e-3, 1e-6);
        for &g in &[1.0, -0.2, 7.5] {
            let mut params = store_with_grad(&[0.0], &[g]);
            let mut opt = Optimizer::new(OptimizerKind::Adadelta { rho, lr, eps }, &params);
            opt.step(&mut params).unwrap();
            let got = params.get(crate::numerics::ParamId(0)).value.data()[0];
            let expect = -lr * (eps.sqrt() / (0.05 * g * g + eps).sqrt()) * g;
            assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        }
    }

    #[test]
    fn adadelta_accumulators_stay_nonnegative() {
        let mut params = store_with_grad(&[0.0], &[1.0]);
        let mut opt = Optimizer::new(OptimizerKind::adadelta(), &params);
        for i in 0..50 {
            let g = ((i * 37) % 13) as f64 - 6.0;
            params.get_mut(crate::numerics::ParamId(0)).grad[0] = g;
            opt.step(&mut params).unwrap();
            assert!(opt.acc1[0][0] >= 0.0);
            assert!(opt.acc2[0][0] >= 0.0);
        }
    }

    #[test]
    fn adadelta_accumulators_decay_on_zero_grads() {
        let mut params = store_with_grad(&[0.0], &[4.0]);
        let mut opt = Optimizer::new(OptimizerKind::adadelta(), &params);
        opt.step(&mut params).unwrap();
        let after_one = opt.acc1[0][0];
        params.get_mut(crate::numerics::ParamId(0)).grad[0] = 0.0;
        for _ in 0..20 {
            opt.step(&mut params).unwrap();
        }
        assert!(opt.acc1[0][0] < after_one * 0.4);
    }
}
