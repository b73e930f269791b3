use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Compares the analytic gradient of `objective` against central differences.
///
/// `objective` builds a scalar on a fresh graph from the given store. The
/// return value is the largest `|analytic - numeric| / max(1, |analytic|)`
/// over every entry of every parameter.
pub fn finite_diff_check<F>(store: &ParamStore, eps: f64, mut objective: F) -> Result<f64>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::contract(format!("finite-difference step must be > 0, got {eps}")));
    }
    let mut analytic = store.clone();
    analytic.zero_grad();
    let mut g = Graph::new();
    let loss = objective(&mut g, &analytic)?;
    g.backward(loss)?;
    g.accumulate_into(&mut analytic)?;

    let mut eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let v = objective(&mut g, s)?;
        let out = g.value(v).item();
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::numeric("objective evaluated to a non-finite value"))
        }
    };

    let mut probe = store.clone();
    let mut worst = 0.0_f64;
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in &names {
        let n = store.value(name).expect("listed").len();
        let grad = analytic.grad(name).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for (i, &g) in grad.iter().enumerate() {
            let orig = store.value(name).expect("listed").data()[i];
            probe.value_mut(name).expect("listed").data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe.value_mut(name).expect("listed").data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe.value_mut(name).expect("listed").data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = (g - numeric).abs() / g.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
