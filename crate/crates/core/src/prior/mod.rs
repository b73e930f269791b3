//! Energy-corrected Gaussian prior over the latent vector and its
//! short-run Langevin samplers.

mod langevin;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

pub use langevin::{langevin_step, sample_posterior, sample_posterior_batch, sample_prior, LangevinConfig};

/// Gradient of a scalar with respect to each named parameter.
pub type Gradients = BTreeMap<String, Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub latent_dim: usize,
    /// Hidden widths of the correction network; empty means a linear map.
    pub hidden: Vec<usize>,
    pub sigma2: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            hidden: vec![64, 64],
            sigma2: 1.0,
        }
    }
}

/// `p(z) ∝ exp(F(z) - |z|² / 2σ²)` with `F` a tanh MLP.
///
/// The normalizing constant is never formed; everything here works with the
/// unnormalized energy `E(z) = F(z) - |z|² / 2σ²`, where larger is more likely.
#[derive(Clone, Debug)]
pub struct EbmPrior {
    latent_dim: usize,
    sigma2: f64,
    depth: usize,
    pub alpha: ParamStore,
}

impl EbmPrior {
    pub fn new<R: Rng + ?Sized>(cfg: &PriorConfig, rng: &mut R) -> Result<Self> {
        if cfg.latent_dim == 0 {
            return Err(Error::contract("latent dimension must be >= 1"));
        }
        if !(cfg.sigma2 > 0.0 && cfg.sigma2.is_finite()) {
            return Err(Error::contract(format!("sigma2 must be > 0, got {}", cfg.sigma2)));
        }
        let mut alpha = ParamStore::new();
        let mut fan_in = cfg.latent_dim;
        for (i, &w) in cfg.hidden.iter().enumerate() {
            if w == 0 {
                return Err(Error::contract("hidden widths must be positive"));
            }
            alpha.insert_weight(&format!("l{i}/w"), fan_in, w, rng)?;
            alpha.insert_bias(&format!("l{i}/b"), w)?;
            fan_in = w;
        }
        alpha.insert_weight(&format!("l{}/w", cfg.hidden.len()), fan_in, 1, rng)?;
        alpha.insert_bias(&format!("l{}/b", cfg.hidden.len()), 1)?;
        Ok(Self {
            latent_dim: cfg.latent_dim,
            sigma2: cfg.sigma2,
            depth: cfg.hidden.len() + 1,
            alpha,
        })
    }

    /// A prior whose correction is identically zero: a linear `F` with zero
    /// weight and bias, so `p(z)` is exactly `N(0, σ² I)`.
    pub fn gaussian(latent_dim: usize, sigma2: f64) -> Result<Self> {
        let cfg = PriorConfig {
            latent_dim,
            hidden: Vec::new(),
            sigma2,
        };
        let mut p = Self::new(&cfg, &mut crate::seed::rng(0))?;
        p.alpha
            .value_mut("l0/w")
            .expect("linear layer")
            .data_mut()
            .fill(0.0);
        Ok(p)
    }

    /// Rebuilds a prior around checkpointed correction parameters.
    pub fn from_params(alpha: ParamStore, sigma2: f64) -> Result<Self> {
        let mut depth = 0;
        while alpha.contains(&format!("l{depth}/w")) {
            depth += 1;
        }
        let first = alpha
            .value("l0/w")
            .ok_or_else(|| Error::contract("prior parameters missing `l0/w`"))?;
        if !(sigma2 > 0.0) {
            return Err(Error::contract(format!("sigma2 must be > 0, got {sigma2}")));
        }
        Ok(Self {
            latent_dim: first.shape()[0],
            sigma2,
            depth,
            alpha,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Hidden widths of the correction network.
    pub fn hidden(&self) -> Vec<usize> {
        (0..self.depth - 1)
            .map(|i| self.alpha.value(&format!("l{i}/b")).expect("layer").len())
            .collect()
    }

    /// `F(z)` for each row of `z` (shape `(n, d)`), giving shape `(n, 1)`.
    ///
    /// With `trainable` the parameters are bound so gradients reach `alpha`.
    pub fn correction(&self, g: &mut Graph, z: Var, trainable: bool) -> Result<Var> {
        let d = g.shape(z).last().copied().unwrap_or(0);
        if g.shape(z).len() != 2 || d != self.latent_dim {
            return Err(Error::Shape {
                op: "ebm correction",
                left: g.shape(z).to_vec(),
                right: vec![self.latent_dim],
            });
        }
        let mut h = z;
        for i in 0..self.depth {
            let (wn, bn) = (format!("l{i}/w"), format!("l{i}/b"));
            let (w, b) = if trainable {
                (g.param(&self.alpha, &wn)?, g.param(&self.alpha, &bn)?)
            } else {
                (g.frozen_param(&self.alpha, &wn)?, g.frozen_param(&self.alpha, &bn)?)
            };
            let lin = g.matmul(h, w)?;
            h = g.add(lin, b)?;
            if i + 1 < self.depth {
                h = g.tanh(h)?;
            }
        }
        Ok(h)
    }

    /// Sum over rows of `E(z_i)`; differentiable in `z`.
    pub fn energy_sum(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let f = self.correction(g, z, false)?;
        let fs = g.sum(f)?;
        let sq = g.sq_norm(z)?;
        let quad = g.scale(sq, 1.0 / (2.0 * self.sigma2))?;
        g.sub(fs, quad)
    }

    /// `E(z)` for a single latent vector.
    pub fn energy(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.latent_dim {
            return Err(Error::contract(format!(
                "latent has dimension {}, prior expects {}",
                z.len(),
                self.latent_dim
            )));
        }
        let mut g = Graph::new();
        let zv = g.constant(Tensor::matrix(1, self.latent_dim, z.to_vec())?);
        let e = self.energy_sum(&mut g, zv)?;
        Ok(g.value(e).item())
    }

    /// Per-row energies and `∇_z E` for a batch of latents.
    pub fn energy_grad(&self, z: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let mut g = Graph::new();
        let zv = g.input(z.clone());
        let f = self.correction(&mut g, zv, false)?;
        let fs = g.sum(f)?;
        let sq = g.sq_norm(zv)?;
        let quad = g.scale(sq, 1.0 / (2.0 * self.sigma2))?;
        let total = g.sub(fs, quad)?;
        g.backward(total)?;
        let inv = 1.0 / (2.0 * self.sigma2);
        let energies = g
            .value(f)
            .data()
            .iter()
            .enumerate()
            .map(|(i, fv)| fv - z.row(i).iter().map(|x| x * x).sum::<f64>() * inv)
            .collect();
        let grad = Tensor::new(z.shape().to_vec(), g.grad(zv).expect("input").to_vec())?;
        Ok((energies, grad))
    }

    /// Stacks latent rows into an `(n, d)` tensor, checking each dimension.
    pub fn stack(&self, rows: &[Vec<f64>]) -> Result<Tensor> {
        if let Some(bad) = rows.iter().find(|r| r.len() != self.latent_dim) {
            return Err(Error::contract(format!(
                "latent has dimension {}, prior expects {}",
                bad.len(),
                self.latent_dim
            )));
        }
        Tensor::matrix(rows.len(), self.latent_dim, rows.concat())
    }

    fn mean_correction_grad(&self, z: &Tensor) -> Result<Gradients> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let f = self.correction(&mut g, zv, true)?;
        let m = g.mean(f)?;
        g.backward(m)?;
        let mut store = self.alpha.clone();
        store.zero_grad();
        g.accumulate_into(&mut store)?;
        Ok(store
            .iter()
            .map(|(k, p)| (k.to_string(), p.grad.clone().unwrap_or_else(|| vec![0.0; p.value.len()])))
            .collect())
    }

    /// Contrastive log-likelihood gradient for `alpha`:
    /// `mean ∇F(z_post) - mean ∇F(z_prior)`. Ascending it raises the
    /// marginal likelihood of the data that produced `posterior`.
    pub fn alpha_gradient(&self, posterior: &[Vec<f64>], prior: &[Vec<f64>]) -> Result<Gradients> {
        if posterior.is_empty() || prior.is_empty() {
            return Err(Error::contract("alpha_gradient needs non-empty sample sets"));
        }
        let pos = self.mean_correction_grad(&self.stack(posterior)?)?;
        let neg = self.mean_correction_grad(&self.stack(prior)?)?;
        Ok(pos
            .into_iter()
            .map(|(k, a)| {
                let b = &neg[&k];
                (k, a.iter().zip(b).map(|(x, y)| x - y).collect())
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn zero_correction_energy() {
        let p = EbmPrior::gaussian(2, 1.0).unwrap();
        assert_eq!(p.energy(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(p.energy(&[1.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let p = EbmPrior::gaussian(2, 1.0).unwrap();
        assert!(matches!(p.energy(&[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn rejects_bad_sigma() {
        let cfg = PriorConfig {
            sigma2: 0.0,
            ..PriorConfig::default()
        };
        assert!(EbmPrior::new(&cfg, &mut seed::rng(1)).is_err());
    }

    #[test]
    fn identical_populations_give_zero_gradient() {
        let p = EbmPrior::new(&PriorConfig::default(), &mut seed::rng(3)).unwrap();
        let mut rng = seed::rng(4);
        let z: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..16).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let g = p.alpha_gradient(&z, &z).unwrap();
        assert!(g.values().flatten().all(|&v| v == 0.0));
        assert_eq!(g.len(), p.alpha.len());
    }

    #[test]
    fn linear_correction_gradient_is_mean_difference() {
        let cfg = PriorConfig {
            latent_dim: 1,
            hidden: vec![],
            sigma2: 1.0,
        };
        let p = EbmPrior::new(&cfg, &mut seed::rng(5)).unwrap();
        let post = vec![vec![1.0], vec![2.0], vec![4.0]];
        let prior = vec![vec![-1.0], vec![0.5]];
        let g = p.alpha_gradient(&post, &prior).unwrap();
        let expected = 7.0 / 3.0 - (-0.25);
        assert!((g["l0/w"][0] - expected).abs() < 1e-12);
        assert_eq!(g["l0/b"][0], 0.0);
    }

    #[test]
    fn empty_sample_set_rejected() {
        let p = EbmPrior::gaussian(2, 1.0).unwrap();
        let z = vec![vec![0.0, 0.0]];
        assert!(matches!(p.alpha_gradient(&z, &[]), Err(Error::Contract(_))));
        assert!(matches!(p.alpha_gradient(&[], &z), Err(Error::Contract(_))));
    }
}
