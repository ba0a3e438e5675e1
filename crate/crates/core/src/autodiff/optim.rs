use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::param::ParamStore;
use super::TensorError;

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<_> = store
            .iter()
            .map(|(_, p)| Array2::zeros(p.value.raw_dim()))
            .collect();
        AdamState {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

impl AdamW {
    /// One update from the gradients accumulated in `store`. Weight decay is
    /// decoupled: it shrinks the parameter before the moment-based step.
    pub fn step(&self, store: &mut ParamStore, state: &mut AdamState) -> Result<(), TensorError> {
        if state.first.len() != store.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adamw_step",
                left: (state.first.len(), 1),
                right: (store.len(), 1),
            });
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((param, m), v) in store
            .params_mut()
            .iter_mut()
            .zip(state.first.iter_mut())
            .zip(state.second.iter_mut())
        {
            if m.dim() != param.grad.dim() {
                return Err(TensorError::ShapeMismatch {
                    op: "adamw_step",
                    left: m.dim(),
                    right: param.grad.dim(),
                });
            }
            let decay = self.lr * self.weight_decay;
            ndarray::Zip::from(&mut param.value)
                .and(&param.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *w -= decay * *w;
                    *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                });
        }
        Ok(())
    }
}
