use rand::Rng;

use latent_replay::autodiff::{Graph, ParamStore, Tensor};
use latent_replay::prior::{sample_posterior, sample_prior, EbmPrior, LangevinConfig, PriorConfig};
use latent_replay::seed;

fn prior(d: usize, hidden: Vec<usize>, sigma2: f64, s: u64) -> EbmPrior {
    EbmPrior::new(
        &PriorConfig {
            latent_dim: d,
            hidden,
            sigma2,
        },
        &mut seed::rng(s),
    )
    .unwrap()
}

/// Plain-loop tanh MLP plus the quadratic term.
fn energy_by_hand(p: &EbmPrior, z: &[f64]) -> f64 {
    let depth = p.hidden().len() + 1;
    let mut h = z.to_vec();
    for i in 0..depth {
        let w = p.alpha.value(&format!("l{i}/w")).unwrap();
        let b = p.alpha.value(&format!("l{i}/b")).unwrap();
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        let mut next = b.data().to_vec();
        for (j, out) in next.iter_mut().enumerate().take(cols) {
            for (k, hk) in h.iter().enumerate().take(rows) {
                *out += hk * w.data()[k * cols + j];
            }
        }
        if i + 1 < depth {
            next.iter_mut().for_each(|v| *v = v.tanh());
        }
        h = next;
    }
    h[0] - z.iter().map(|x| x * x).sum::<f64>() / (2.0 * p.sigma2())
}

#[test]
fn energy_matches_recomputation() {
    for s in 0..10 {
        let p = prior(4, vec![6, 5], 0.7, s);
        let mut rng = seed::rng(100 + s);
        let z: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let e = p.energy(&z).unwrap();
        assert!((e - energy_by_hand(&p, &z)).abs() <= 1e-12);
        assert_eq!(e.to_bits(), p.energy(&z).unwrap().to_bits());
    }
}

#[test]
fn prior_and_zero_likelihood_posterior_share_chains() {
    let p = prior(3, vec![8], 1.0, 4);
    let cfg = LangevinConfig {
        steps: 30,
        step_size: 0.05,
        seed: 17,
    };
    let a = sample_prior(&p, 1, &cfg).unwrap();
    let b = sample_posterior(&p, |_| Ok((0.0, vec![0.0; 3])), &cfg).unwrap();
    assert_eq!(a.data(), b.as_slice());
}

#[test]
fn same_seed_same_chains() {
    let p = prior(2, vec![4], 1.0, 5);
    let cfg = LangevinConfig {
        steps: 25,
        step_size: 0.1,
        seed: 3,
    };
    assert_eq!(sample_prior(&p, 6, &cfg).unwrap(), sample_prior(&p, 6, &cfg).unwrap());
}

const GRID: usize = 40_001;
const LO: f64 = -10.0;
const HI: f64 = 10.0;

fn grid() -> Vec<f64> {
    (0..GRID).map(|i| LO + (HI - LO) * i as f64 / (GRID - 1) as f64).collect()
}

fn grid_energy(alpha: &ParamStore, sigma2: f64, zs: &[f64]) -> Vec<f64> {
    let p = EbmPrior::from_params(alpha.clone(), sigma2).unwrap();
    let mut g = Graph::new();
    let zv = g.constant(Tensor::matrix(zs.len(), 1, zs.to_vec()).unwrap());
    let f = p.correction(&mut g, zv, false).unwrap();
    g.value(f)
        .data()
        .iter()
        .zip(zs)
        .map(|(fv, z)| fv - z * z / (2.0 * sigma2))
        .collect()
}

fn log_sum_exp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    m + v.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Exact samples from a density tabulated on the grid, by inverse CDF with
/// uniform jitter inside the chosen cell.
fn inverse_cdf(zs: &[f64], log_w: &[f64], n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut cdf = Vec::with_capacity(zs.len());
    let mut acc = 0.0;
    for lw in log_w {
        acc += (lw - m).exp();
        cdf.push(acc);
    }
    let h = zs[1] - zs[0];
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let i = cdf.partition_point(|&c| c < u).min(zs.len() - 1);
            vec![zs[i] + h * (rng.random::<f64>() - 0.5)]
        })
        .collect()
}

#[test]
fn contrastive_gradient_matches_quadrature() {
    let sigma2 = 1.0;
    let mut p = prior(1, vec![4], sigma2, 21);
    let names: Vec<String> = p.alpha.names().map(String::from).collect();
    for name in &names {
        p.alpha.value_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v *= 2.0);
    }
    // x = w z + ε, ε ~ N(0, τ²), one observation.
    let (w, tau2, x) = (1.5, 0.5, 2.5);
    let zs = grid();
    let loglik: Vec<f64> = zs.iter().map(|z| -(x - w * z) * (x - w * z) / (2.0 * tau2)).collect();
    let log_marginal = |alpha: &ParamStore| {
        let e = grid_energy(alpha, sigma2, &zs);
        log_sum_exp(e.iter().zip(&loglik).map(|(a, b)| a + b)) - log_sum_exp(e.iter().copied())
    };

    let eps = 1e-5;
    let mut exact = Vec::new();
    let mut estimate = Vec::new();
    let e0 = grid_energy(&p.alpha, sigma2, &zs);
    let post_w: Vec<f64> = e0.iter().zip(&loglik).map(|(a, b)| a + b).collect();
    let mut rng = seed::rng(8);
    let post = inverse_cdf(&zs, &post_w, 100_000, &mut rng);
    let neg = inverse_cdf(&zs, &e0, 100_000, &mut rng);
    let est = p.alpha_gradient(&post, &neg).unwrap();

    for name in &names {
        for (i, &e) in est[name].iter().enumerate() {
            let mut probe = p.alpha.clone();
            let orig = probe.value(name).unwrap().data()[i];
            probe.value_mut(name).unwrap().data_mut()[i] = orig + eps;
            let up = log_marginal(&probe);
            probe.value_mut(name).unwrap().data_mut()[i] = orig - eps;
            let down = log_marginal(&probe);
            exact.push((up - down) / (2.0 * eps));
            estimate.push(e);
        }
    }
    let diff = exact.iter().zip(&estimate).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = exact.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(norm > 0.1, "degenerate oracle, |grad| = {norm}");
    assert!(diff / norm <= 0.02, "relative error {} (|grad| = {norm})", diff / norm);
}
