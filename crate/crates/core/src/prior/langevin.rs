use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::EbmPrior;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed;

/// Short-run chain settings: always `steps` updates from a fresh `N(0, σ² I)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LangevinConfig {
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            step_size: 0.1,
            seed: 0,
        }
    }
}

impl LangevinConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// One Langevin update `z + s·grad + √(2s)·noise`, in place.
pub fn langevin_step(z: &mut [f64], grad: &[f64], step_size: f64, noise: &[f64]) {
    let scale = (2.0 * step_size).sqrt();
    for ((zi, gi), ni) in z.iter_mut().zip(grad).zip(noise) {
        *zi += step_size * gi + scale * ni;
    }
}

fn chain_rng(cfg: &LangevinConfig, chain: usize) -> rand_chacha::ChaCha8Rng {
    seed::rng_at(cfg.seed, &[chain as u64])
}

fn gaussian_row<R: Rng>(rng: &mut R, d: usize, std: f64) -> Vec<f64> {
    (0..d)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Extra log-density term and its gradient, added to the prior energy.
type ExtraGrad<'a> = &'a mut dyn FnMut(&Tensor) -> Result<Tensor>;

/// Runs `n` chains ascending `E(z) + extra(z)`; chain `i` draws its start
/// point and noise from its own stream keyed by `(cfg.seed, i)`.
fn run_chains(
    prior: &EbmPrior,
    n: usize,
    cfg: &LangevinConfig,
    mut extra: Option<ExtraGrad<'_>>,
) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::contract("number of chains must be >= 1"));
    }
    if !(cfg.step_size >= 0.0 && cfg.step_size.is_finite()) {
        return Err(Error::contract(format!(
            "Langevin step size must be >= 0, got {}",
            cfg.step_size
        )));
    }
    let d = prior.latent_dim();
    let std = prior.sigma2().sqrt();
    let limit = 1e3 * (d as f64 * prior.sigma2()).sqrt();
    let mut rngs: Vec<_> = (0..n).map(|i| chain_rng(cfg, i)).collect();
    let mut z = Vec::with_capacity(n * d);
    for rng in &mut rngs {
        z.extend(gaussian_row(rng, d, std));
    }
    let mut z = Tensor::matrix(n, d, z)?;
    if cfg.step_size == 0.0 {
        return Ok(z);
    }
    for step in 0..cfg.steps {
        let (_, mut grad) = prior.energy_grad(&z).map_err(|e| e.context(format!("prior gradient at step {step}")))?;
        if let Some(f) = extra.as_mut() {
            let lg = f(&z)?;
            if lg.shape() != z.shape() {
                return Err(Error::Shape {
                    op: "log-likelihood gradient",
                    left: lg.shape().to_vec(),
                    right: z.shape().to_vec(),
                });
            }
            for (i, v) in lg.data().iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite log-likelihood gradient in chain {} at step {step}",
                        i / d
                    )));
                }
            }
            for (g, l) in grad.data_mut().iter_mut().zip(lg.data()) {
                *g += l;
            }
        }
        let zd = z.data_mut();
        for (i, rng) in rngs.iter_mut().enumerate() {
            let noise = gaussian_row(rng, d, 1.0);
            let row = &mut zd[i * d..(i + 1) * d];
            langevin_step(row, &grad.data()[i * d..(i + 1) * d], cfg.step_size, &noise);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !norm.is_finite() || norm > limit {
                return Err(Error::numeric(format!(
                    "chain {i} diverged at step {step} (|z| = {norm:e})"
                )));
            }
        }
    }
    Ok(z)
}

/// Draws `n` latents from the prior by short-run Langevin; shape `(n, d)`.
pub fn sample_prior(prior: &EbmPrior, n: usize, cfg: &LangevinConfig) -> Result<Tensor> {
    run_chains(prior, n, cfg, None)
}

/// Posterior chains for a batch: `loglik_grad` maps the `(n, d)` chain states
/// to per-chain `log p(x_i | z_i)` and its gradient rows.
pub fn sample_posterior_batch<F>(
    prior: &EbmPrior,
    n: usize,
    mut loglik_grad: F,
    cfg: &LangevinConfig,
) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<(Vec<f64>, Tensor)>,
{
    let mut grad_only = |z: &Tensor| loglik_grad(z).map(|(_, g)| g);
    run_chains(prior, n, cfg, Some(&mut grad_only))
}

/// Single posterior chain for one observation.
pub fn sample_posterior<F>(prior: &EbmPrior, mut loglik_grad: F, cfg: &LangevinConfig) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let d = prior.latent_dim();
    let z = sample_posterior_batch(
        prior,
        1,
        |z| {
            let (ll, g) = loglik_grad(z.data())?;
            Ok((vec![ll], Tensor::matrix(1, d, g)?))
        },
        cfg,
    )?;
    Ok(z.into_data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::PriorConfig;

    #[test]
    fn zero_steps_returns_initial_draws() {
        let p = EbmPrior::gaussian(3, 4.0).unwrap();
        let cfg = LangevinConfig {
            steps: 0,
            step_size: 0.1,
            seed: 11,
        };
        let z = sample_prior(&p, 4, &cfg).unwrap();
        let mut rng = chain_rng(&cfg, 2);
        assert_eq!(z.row(2), gaussian_row(&mut rng, 3, 2.0).as_slice());
    }

    #[test]
    fn zero_step_size_returns_initial_draws() {
        let p = EbmPrior::new(&PriorConfig::default(), &mut seed::rng(1)).unwrap();
        let base = LangevinConfig {
            steps: 0,
            step_size: 0.0,
            seed: 5,
        };
        let z0 = sample_prior(&p, 3, &base).unwrap();
        let z = sample_prior(&p, 3, &LangevinConfig { steps: 50, ..base }).unwrap();
        assert_eq!(z0, z);
        let zp = sample_posterior(&p, |_| Ok((0.0, vec![1.0; 16])), &LangevinConfig { steps: 50, ..base }).unwrap();
        assert_eq!(zp, z0.row(0));
    }

    #[test]
    fn zero_likelihood_posterior_equals_prior() {
        let p = EbmPrior::new(&PriorConfig::default(), &mut seed::rng(2)).unwrap();
        let cfg = LangevinConfig {
            steps: 15,
            step_size: 0.1,
            seed: 99,
        };
        let prior = sample_prior(&p, 1, &cfg).unwrap();
        let post = sample_posterior(&p, |_| Ok((0.0, vec![0.0; 16])), &cfg).unwrap();
        assert_eq!(prior.data(), post.as_slice());
    }

    #[test]
    fn chains_do_not_depend_on_batch_size() {
        let p = EbmPrior::new(&PriorConfig::default(), &mut seed::rng(3)).unwrap();
        let cfg = LangevinConfig {
            steps: 10,
            step_size: 0.05,
            seed: 4,
        };
        let few = sample_prior(&p, 2, &cfg).unwrap();
        let many = sample_prior(&p, 7, &cfg).unwrap();
        assert_eq!(few.row(1), many.row(1));
    }

    #[test]
    fn noiseless_step_moves_by_step_times_gradient() {
        let p = EbmPrior::new(&PriorConfig::default(), &mut seed::rng(8)).unwrap();
        let z0 = vec![0.3; 16];
        let (_, g) = p.energy_grad(&Tensor::matrix(1, 16, z0.clone()).unwrap()).unwrap();
        let gnorm = g.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        for s in [1e-1, 1e-3, 1e-6] {
            let mut z1 = z0.clone();
            langevin_step(&mut z1, g.data(), s, &[0.0; 16]);
            let moved = z1.iter().zip(&z0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(moved <= s * gnorm * (1.0 + 1e-12));
        }
    }

    #[test]
    fn non_finite_likelihood_gradient_names_chain_and_step() {
        let p = EbmPrior::gaussian(2, 1.0).unwrap();
        let cfg = LangevinConfig::default();
        let err = sample_posterior(&p, |_| Ok((0.0, vec![f64::NAN, 0.0])), &cfg).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("chain 0") && msg.contains("step 0"), "{msg}");
    }

    #[test]
    fn divergence_is_reported() {
        let p = EbmPrior::gaussian(2, 1.0).unwrap();
        let cfg = LangevinConfig {
            steps: 100,
            step_size: 0.5,
            seed: 1,
        };
        let err = sample_posterior(&p, |z| Ok((0.0, z.iter().map(|v| 10.0 * v).collect())), &cfg).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
    }
}
