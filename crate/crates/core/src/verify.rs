//! Finite-difference checks of every trained objective on micro-instances.

use rand::Rng;
use serde::Serialize;

use crate::autodiff::{finite_diff_check, Graph, ParamStore, Tensor};
use crate::error::Result;
use crate::generator::{Generator, GeneratorConfig};
use crate::inference::{local_energy_var, InferenceConfig, InferenceNet};
use crate::prior::{EbmPrior, PriorConfig};
use crate::seed;
use crate::tasks::qa::QaExample;
use crate::tasks::vocab::EOS;

const VOCAB: usize = 8;
const LATENT: usize = 3;
const EPS: f64 = 1e-5;

/// Largest relative error seen for one objective family.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentCheck {
    pub component: &'static str,
    pub max_rel_error: f64,
    pub seeds: usize,
}

impl ComponentCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

fn latent_store(rows: usize, rng: &mut impl Rng) -> Result<ParamStore> {
    let mut s = ParamStore::new();
    let z: Vec<f64> = (0..rows * LATENT).map(|_| rng.random_range(-1.0..1.0)).collect();
    s.insert("z", Tensor::matrix(rows, LATENT, z)?)?;
    Ok(s)
}

fn random_sequence(rng: &mut impl Rng, len: usize) -> Vec<usize> {
    let mut s: Vec<usize> = (0..len - 1).map(|_| rng.random_range(2..VOCAB)).collect();
    s.push(EOS);
    s
}

/// Teacher-forced sequence NLL: gradients in the generator parameters and in
/// the latent.
fn generator_error(root: u64) -> Result<f64> {
    let mut rng = seed::rng_at(root, &[0]);
    let gen = Generator::new(
        &GeneratorConfig {
            vocab_size: VOCAB,
            hidden: 5,
            latent_dim: LATENT,
        },
        &mut rng,
    )?;
    let seqs: Vec<Vec<usize>> = (0..3).map(|i| random_sequence(&mut rng, 2 + i)).collect();
    let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
    let z = latent_store(refs.len(), &mut rng)?;
    let z_t = z.value("z").expect("inserted").clone();

    let nll = |g: &mut Graph, gen: &Generator, zv, trainable| {
        let vars = gen.bind(g, trainable)?;
        let lp = gen.batch_log_prob(g, &vars, &refs, zv)?;
        let m = g.mean(lp)?;
        g.neg(m)
    };
    let beta_err = finite_diff_check(&gen.beta, EPS, |g, beta| {
        let gen = Generator::from_params(beta.clone())?;
        let zv = g.constant(z_t.clone());
        nll(g, &gen, zv, true)
    })?;
    let z_err = finite_diff_check(&z, EPS, |g, s| {
        let zv = g.param(s, "z")?;
        nll(g, &gen, zv, false)
    })?;
    Ok(beta_err.max(z_err))
}

/// Prior energy in `α` and `z`, and the contrastive `α` gradient against
/// numerical differences of `mean F(posterior) - mean F(prior)`.
fn ebm_error(root: u64) -> Result<f64> {
    let mut rng = seed::rng_at(root, &[1]);
    let prior = EbmPrior::new(
        &PriorConfig {
            latent_dim: LATENT,
            hidden: vec![4, 4],
            sigma2: 0.8,
        },
        &mut rng,
    )?;
    let z = latent_store(4, &mut rng)?;
    let z_t = z.value("z").expect("inserted").clone();
    let alpha_err = finite_diff_check(&prior.alpha, EPS, |g, alpha| {
        let p = EbmPrior::from_params(alpha.clone(), prior.sigma2())?;
        let zv = g.constant(z_t.clone());
        let f = p.correction(g, zv, true)?;
        g.sum(f)
    })?;
    let z_err = finite_diff_check(&z, EPS, |g, s| {
        let zv = g.param(s, "z")?;
        prior.energy_sum(g, zv)
    })?;

    let rows = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..LATENT).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect()
    };
    let post = rows(3, &mut rng);
    let neg = rows(5, &mut rng);
    let analytic = prior.alpha_gradient(&post, &neg)?;
    let contrast = |alpha: &ParamStore| -> Result<f64> {
        let p = EbmPrior::from_params(alpha.clone(), prior.sigma2())?;
        let mean_f = |set: &[Vec<f64>]| -> Result<f64> {
            let mut g = Graph::new();
            let zv = g.constant(p.stack(set)?);
            let f = p.correction(&mut g, zv, false)?;
            let m = g.mean(f)?;
            Ok(g.value(m).item())
        };
        Ok(mean_f(&post)? - mean_f(&neg)?)
    };
    let mut worst = alpha_err.max(z_err);
    let mut probe = prior.alpha.clone();
    for (name, grad) in &analytic {
        for (i, a) in grad.iter().enumerate() {
            let orig = probe.value(name).expect("listed").data()[i];
            probe.value_mut(name).expect("listed").data_mut()[i] = orig + EPS;
            let up = contrast(&probe)?;
            probe.value_mut(name).expect("listed").data_mut()[i] = orig - EPS;
            let down = contrast(&probe)?;
            probe.value_mut(name).expect("listed").data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * EPS);
            worst = worst.max((a - fd).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Local energy in the slot logits, and the summed inference objective in
/// the network parameters with the generator frozen.
fn inference_error(root: u64) -> Result<f64> {
    let mut rng = seed::rng_at(root, &[2]);
    let gen = Generator::new(
        &GeneratorConfig {
            vocab_size: VOCAB,
            hidden: 5,
            latent_dim: LATENT,
        },
        &mut rng,
    )?;
    let net = InferenceNet::new(
        &InferenceConfig {
            vocab_size: VOCAB,
            hidden: 4,
            slots: 3,
        },
        &mut rng,
    )?;

    let mut slot = ParamStore::new();
    let logits: Vec<f64> = (0..VOCAB).map(|_| rng.random_range(-2.0..2.0)).collect();
    slot.insert("z", Tensor::matrix(1, VOCAB, logits)?)?;
    let raw: Vec<f64> = (0..VOCAB).map(|_| rng.random_range(-2.0..2.0)).collect();
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + raw.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let cond: Vec<f64> = raw.iter().map(|v| v - lse).collect();
    let local_err = finite_diff_check(&slot, EPS, |g, s| {
        let z = g.param(s, "z")?;
        let lp = g.constant(Tensor::matrix(1, VOCAB, cond.clone())?);
        local_energy_var(g, z, lp)
    })?;

    let data: Vec<QaExample> = (0..3)
        .map(|i| QaExample {
            question: random_sequence(&mut rng, 3 + i)[..2 + i].to_vec(),
            answer: random_sequence(&mut rng, 1 + i),
            task_id: "check".into(),
        })
        .collect();
    let batch: Vec<&QaExample> = data.iter().collect();
    let psi_err = finite_diff_check(&net.psi, EPS, |g, psi| {
        InferenceNet::from_params(psi.clone())?.batch_energy(g, &gen, &batch)
    })?;
    Ok(local_err.max(psi_err))
}

/// Runs every component over `seeds` micro-instances.
pub fn gradient_report(seeds: &[u64]) -> Result<Vec<ComponentCheck>> {
    type Check = fn(u64) -> Result<f64>;
    let parts: [(&'static str, Check); 3] = [
        ("generator", generator_error),
        ("ebm", ebm_error),
        ("inference", inference_error),
    ];
    parts
        .iter()
        .map(|(component, f)| {
            let mut worst = 0.0_f64;
            for &s in seeds {
                worst = worst.max(f(s).map_err(|e| e.context(format!("{component} check, seed {s}")))?);
            }
            Ok(ComponentCheck {
                component,
                max_rel_error: worst,
                seeds: seeds.len(),
            })
        })
        .collect()
}
