//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    /// Fresh state with lr 1e-4, betas (0.9, 0.999), eps 1e-8.
    pub fn new(num_params: usize) -> Self {
        Self::with_lr(num_params, 1e-4)
    }

    pub fn with_lr(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }
}

/// One Adam step. Gradients are validated before anything is modified.
pub fn apply_gradients(model: &mut Model, grads: &[f64], opt: &mut OptimizerState) -> Result<()> {
    let n = model.num_params();
    if grads.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: grads.len(),
        });
    }
    if opt.m.len() != n || opt.v.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: opt.m.len(),
        });
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    opt.step += 1;
    let t = opt.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    let params = model.params_mut();
    for i in 0..n {
        let g = grads[i];
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g;
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g;
        let m_hat = opt.m[i] / c1;
        let v_hat = opt.v[i] / c2;
        params[i] -= opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
    }
    Ok(())
}
