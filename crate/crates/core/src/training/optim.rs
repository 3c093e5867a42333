use serde::{Deserialize, Serialize};

use crate::error::{HiclError, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state over a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, t: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>> },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &[Tensor]) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(HiclError::invalid(format!("learning rate must be positive, got {lr}")));
        }
        Ok(match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => {
                let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
                Optimizer::Adam { lr, t: 0, m: zeros.clone(), v: zeros }
            }
        })
    }

    /// Apply one update. `grads[i]` belongs to `params[i]`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(HiclError::shape("Optimizer::step", format!("{} params, {} grads", params.len(), grads.len())));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.numel() != g.numel() {
                return Err(HiclError::shape("Optimizer::step", format!("{:?} vs {:?}", p.shape(), g.shape())));
            }
        }
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= *lr * d;
                    }
                }
            }
            Optimizer::Adam { lr, t, m, v } => {
                *t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(*t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(*t as i32);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    for (((w, &d), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * d;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * d * d;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *w -= *lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}
