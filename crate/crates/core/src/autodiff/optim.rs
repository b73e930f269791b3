use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Update rule applied by [`optimizer_step`].
///
/// Gradients in the store are gradients of a loss (negative log-likelihood),
/// so every rule moves against them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Applies one update to every parameter and clears the gradients.
pub fn optimizer_step(store: &mut ParamStore, lr: f64, opt: &Optimizer) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::contract(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    if let Some((name, _)) = store.iter().find(|(_, p)| p.grad.is_none()) {
        return Err(Error::contract(format!("parameter `{name}` has no gradient")));
    }
    store.step_count += 1;
    let t = store.step_count as f64;
    for (_, p) in store.iter_mut() {
        let grad = p.grad.take().expect("checked above");
        let values = p.value.data_mut();
        match *opt {
            Optimizer::Sgd => {
                for (v, g) in values.iter_mut().zip(&grad) {
                    *v -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powf(t);
                let c2 = 1.0 - beta2.powf(t);
                for (i, g) in grad.iter().enumerate() {
                    let m = &mut p.first_moment[i];
                    let s = &mut p.second_moment[i];
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *s = beta2 * *s + (1.0 - beta2) * g * g;
                    values[i] -= lr * (*m / c1) / ((*s / c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}
