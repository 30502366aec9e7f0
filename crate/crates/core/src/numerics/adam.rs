use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::graph::ParamStore;
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
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

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn zeros(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.tensor.rows(), p.tensor.cols()))
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients before
/// touching any parameter.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::shape(format!(
            "{} gradients / {} moments for {} parameters",
            grads.len(),
            state.m.len(),
            store.len()
        )));
    }
    if let Some((k, _)) = grads.iter().enumerate().find(|(_, g)| !g.all_finite()) {
        return Err(Error::domain(format!(
            "non-finite gradient for parameter {}",
            store.params()[k].name
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (k, param) in store.params_mut().iter_mut().enumerate() {
        let g = grads[k].data();
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (i, p) in param.tensor.data_mut().iter_mut().enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
