use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// AdaDelta hyperparameters. `lr` scales the canonical update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaDeltaParams {
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
}

impl Default for AdaDeltaParams {
    fn default() -> Self {
        AdaDeltaParams {
            rho: 0.95,
            eps: 1e-6,
            lr: 0.01,
        }
    }
}

/// Running averages `E[g^2]` and `E[dx^2]`, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaDeltaState {
    pub params: AdaDeltaParams,
    pub acc_grad: Vec<Vec<f64>>,
    pub acc_delta: Vec<Vec<f64>>,
}

impl AdaDeltaState {
    pub fn new(params: AdaDeltaParams, sizes: &[usize]) -> Self {
        AdaDeltaState {
            params,
            acc_grad: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            acc_delta: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.acc_grad.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameter tensors, {} gradients, {} accumulators",
                params.len(),
                grads.len(),
                self.acc_grad.len()
            )));
        }
        let AdaDeltaParams { rho, eps, lr } = self.params;
        for (t, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let eg = &mut self.acc_grad[t];
            let ed = &mut self.acc_delta[t];
            if p.len() != g.len() || p.len() != eg.len() {
                return Err(Error::DimensionMismatch(format!("tensor {t} size mismatch")));
            }
            for i in 0..p.len() {
                let gi = g[i];
                eg[i] = rho * eg[i] + (1.0 - rho) * gi * gi;
                let dx = -((ed[i] + eps).sqrt() / (eg[i] + eps).sqrt()) * gi;
                ed[i] = rho * ed[i] + (1.0 - rho) * dx * dx;
                p[i] += lr * dx;
            }
        }
        Ok(())
    }
}

/// One AdaDelta update of `params` in place.
pub fn adadelta_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdaDeltaState,
) -> Result<()> {
    state.step(params, grads)
}
