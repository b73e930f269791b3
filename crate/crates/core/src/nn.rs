//! Small building blocks shared by the generator and the inference network.

use rand::Rng;

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;

pub(crate) fn bind(g: &mut Graph, store: &ParamStore, name: &str, trainable: bool) -> Result<Var> {
    if trainable {
        g.param(store, name)
    } else {
        g.frozen_param(store, name)
    }
}

pub(crate) fn init_gru<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert_weight(&format!("{prefix}/wx"), input, 3 * hidden, rng)?;
    store.insert_weight(&format!("{prefix}/wh"), hidden, 3 * hidden, rng)?;
    store.insert_bias(&format!("{prefix}/b"), 3 * hidden)
}

/// Bound weights of a GRU layer with gates packed as `[reset | update | candidate]`.
pub(crate) struct GruVars {
    wx: Var,
    wh: Var,
    b: Var,
    hidden: usize,
}

impl GruVars {
    pub(crate) fn bind(g: &mut Graph, store: &ParamStore, prefix: &str, trainable: bool) -> Result<Self> {
        let wh = bind(g, store, &format!("{prefix}/wh"), trainable)?;
        let hidden = g.shape(wh)[0];
        Ok(Self {
            wx: bind(g, store, &format!("{prefix}/wx"), trainable)?,
            wh,
            b: bind(g, store, &format!("{prefix}/b"), trainable)?,
            hidden,
        })
    }

    pub(crate) fn zero_state(&self, g: &mut Graph, batch: usize) -> Var {
        g.constant(Tensor::zeros(&[batch, self.hidden]))
    }

    /// `h' = n + u ⊙ (h - n)` with `n = tanh(x Wn + r ⊙ (h Un) + bn)`.
    pub(crate) fn step(&self, g: &mut Graph, x: Var, h: Var) -> Result<Var> {
        let hd = self.hidden;
        let xw = g.matmul(x, self.wx)?;
        let gx = g.add(xw, self.b)?;
        let gh = g.matmul(h, self.wh)?;
        let xr = g.slice_last(gx, 0, hd)?;
        let hr = g.slice_last(gh, 0, hd)?;
        let r_pre = g.add(xr, hr)?;
        let r = g.sigmoid(r_pre)?;
        let xu = g.slice_last(gx, hd, hd)?;
        let hu = g.slice_last(gh, hd, hd)?;
        let u_pre = g.add(xu, hu)?;
        let u = g.sigmoid(u_pre)?;
        let xn = g.slice_last(gx, 2 * hd, hd)?;
        let hn = g.slice_last(gh, 2 * hd, hd)?;
        let rhn = g.mul(r, hn)?;
        let n_pre = g.add(xn, rhn)?;
        let n = g.tanh(n_pre)?;
        let diff = g.sub(h, n)?;
        let gated = g.mul(u, diff)?;
        g.add(n, gated)
    }
}
