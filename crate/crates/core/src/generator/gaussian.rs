use rand::Rng;

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// `x = g(z) + ε`, `ε ~ N(0, σ² I_D)`, with `g` linear or a one-hidden-layer
/// tanh network.
#[derive(Clone, Debug)]
pub struct GaussianGenerator {
    latent_dim: usize,
    obs_dim: usize,
    hidden: Option<usize>,
    obs_sigma2: f64,
    pub beta: ParamStore,
}

impl GaussianGenerator {
    pub fn new<R: Rng + ?Sized>(
        latent_dim: usize,
        obs_dim: usize,
        hidden: Option<usize>,
        obs_sigma2: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(obs_sigma2 > 0.0) {
            return Err(Error::contract(format!("observation variance must be > 0, got {obs_sigma2}")));
        }
        let mut beta = ParamStore::new();
        match hidden {
            Some(h) => {
                beta.insert_weight("hidden/w", latent_dim, h, rng)?;
                beta.insert_bias("hidden/b", h)?;
                beta.insert_weight("out/w", h, obs_dim, rng)?;
            }
            None => beta.insert_weight("out/w", latent_dim, obs_dim, rng)?,
        }
        beta.insert_bias("out/b", obs_dim)?;
        Ok(Self {
            latent_dim,
            obs_dim,
            hidden,
            obs_sigma2,
            beta,
        })
    }

    /// Linear map `g(z) = z W + b` with `weight` of shape `(d, D)`.
    pub fn linear(weight: Tensor, bias: Vec<f64>, obs_sigma2: f64) -> Result<Self> {
        if weight.shape().len() != 2 || weight.shape()[1] != bias.len() {
            return Err(Error::Shape {
                op: "gaussian generator",
                left: weight.shape().to_vec(),
                right: vec![bias.len()],
            });
        }
        let (d, obs) = (weight.shape()[0], weight.shape()[1]);
        let mut g = Self::new(d, obs, None, obs_sigma2, &mut crate::seed::rng(0))?;
        *g.beta.value_mut("out/w").expect("present") = weight;
        *g.beta.value_mut("out/b").expect("present") = Tensor::vector(bias);
        Ok(g)
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn obs_sigma2(&self) -> f64 {
        self.obs_sigma2
    }

    /// `g(z)` for `z: (B, d)`.
    pub fn mean(&self, g: &mut Graph, z: Var, trainable: bool) -> Result<Var> {
        let bind = |g: &mut Graph, n: &str| crate::nn::bind(g, &self.beta, n, trainable);
        let mut h = z;
        if self.hidden.is_some() {
            let (w, b) = (bind(g, "hidden/w")?, bind(g, "hidden/b")?);
            let lin = g.matmul(h, w)?;
            let pre = g.add(lin, b)?;
            h = g.tanh(pre)?;
        }
        let (w, b) = (bind(g, "out/w")?, bind(g, "out/b")?);
        let lin = g.matmul(h, w)?;
        g.add(lin, b)
    }

    fn log_norm(&self) -> f64 {
        0.5 * self.obs_dim as f64 * (2.0 * std::f64::consts::PI * self.obs_sigma2).ln()
    }

    /// Sum over rows of `log N(x_i; g(z_i), σ² I)`; `x` and `z` are `(B, ·)`.
    pub fn log_prob_sum(&self, g: &mut Graph, x: Var, z: Var, trainable: bool) -> Result<Var> {
        if g.shape(x).last() != Some(&self.obs_dim) {
            return Err(Error::contract(format!(
                "observation has dimension {:?}, generator emits {}",
                g.shape(x),
                self.obs_dim
            )));
        }
        let rows = g.shape(x)[0];
        let mean = self.mean(g, z, trainable)?;
        let resid = g.sub(x, mean)?;
        let sq = g.sq_norm(resid)?;
        let scaled = g.scale(sq, -1.0 / (2.0 * self.obs_sigma2))?;
        g.add_scalar(scaled, -(rows as f64) * self.log_norm())
    }

    /// `-|x - g(z)|² / 2σ² - (D/2) log(2πσ²)`.
    pub fn gauss_log_prob(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        if x.len() != self.obs_dim {
            return Err(Error::contract(format!(
                "observation has dimension {}, generator emits {}",
                x.len(),
                self.obs_dim
            )));
        }
        if z.len() != self.latent_dim {
            return Err(Error::contract(format!(
                "latent has dimension {}, generator expects {}",
                z.len(),
                self.latent_dim
            )));
        }
        let mut g = Graph::new();
        let xv = g.constant(Tensor::matrix(1, self.obs_dim, x.to_vec())?);
        let zv = g.constant(Tensor::matrix(1, self.latent_dim, z.to_vec())?);
        let lp = self.log_prob_sum(&mut g, xv, zv, false)?;
        Ok(g.value(lp).item())
    }

    /// Log-density and its latent gradient, ready for a posterior chain.
    pub fn latent_grad(&self, x: &[f64], z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let xv = g.constant(Tensor::matrix(1, self.obs_dim, x.to_vec())?);
        let zv = g.input(Tensor::matrix(1, self.latent_dim, z.to_vec())?);
        let lp = self.log_prob_sum(&mut g, xv, zv, false)?;
        g.backward(lp)?;
        Ok((g.value(lp).item(), g.grad(zv).expect("input").to_vec()))
    }
}
