//! Conditional observation models `p(x | z)`.
//!
//! [`Generator`] is the autoregressive token model used for text: a single GRU
//! layer whose input at every position is the token embedding plus a
//! projection of the latent. [`GaussianGenerator`] is the continuous
//! `x = g(z) + ε` variant.

mod gaussian;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{optimizer_step, Graph, Optimizer, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{self, GruVars};
use crate::prior::{sample_posterior_batch, sample_prior, EbmPrior, LangevinConfig};
use crate::tasks::vocab::EOS;

pub use gaussian::GaussianGenerator;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub latent_dim: usize,
}

#[derive(Clone, Debug)]
pub struct Generator {
    vocab_size: usize,
    hidden: usize,
    latent_dim: usize,
    pub beta: ParamStore,
}

/// A decoded token sequence with the latent that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub tokens: Vec<usize>,
    /// Sum of log-probabilities of the emitted tokens (prefix excluded).
    pub log_prob: f64,
    pub latent: Vec<f64>,
}

/// Parameters of a [`Generator`] bound onto one graph.
pub struct GeneratorVars {
    embed: Var,
    bos: Var,
    latent_w: Var,
    latent_b: Var,
    gru: GruVars,
    out_w: Var,
    out_b: Var,
}

/// Decoder state after consuming some prefix, for callers that feed their
/// own (possibly soft) inputs step by step.
pub struct DecoderState {
    pub hidden: Var,
    latent_in: Var,
}

/// Settings for one [`Generator::train_step`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainStepConfig {
    pub posterior: LangevinConfig,
    pub prior: LangevinConfig,
    pub lr_generator: f64,
    pub lr_prior: f64,
    pub optimizer: Optimizer,
    /// When false the prior's parameters stay fixed.
    pub update_prior: bool,
}

/// Indices of the `k` largest probabilities, ties to the lowest id.
pub fn top_k(probs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(k.max(1));
    idx
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(cfg: &GeneratorConfig, rng: &mut R) -> Result<Self> {
        if cfg.vocab_size < 2 || cfg.hidden == 0 || cfg.latent_dim == 0 {
            return Err(Error::contract(format!("invalid generator dimensions {cfg:?}")));
        }
        let (v, h, d) = (cfg.vocab_size, cfg.hidden, cfg.latent_dim);
        let mut beta = ParamStore::new();
        beta.insert_weight("embed", v, h, rng)?;
        beta.insert_bias("bos", h)?;
        beta.insert_weight("latent/w", d, h, rng)?;
        beta.insert_bias("latent/b", h)?;
        nn::init_gru(&mut beta, "gru", h, h, rng)?;
        beta.insert_weight("out/w", h, v, rng)?;
        beta.insert_bias("out/b", v)?;
        Ok(Self {
            vocab_size: v,
            hidden: h,
            latent_dim: d,
            beta,
        })
    }

    pub fn from_params(beta: ParamStore) -> Result<Self> {
        let embed = beta
            .value("embed")
            .ok_or_else(|| Error::contract("generator parameters missing `embed`"))?;
        let (v, h) = (embed.shape()[0], embed.shape()[1]);
        let d = beta
            .value("latent/w")
            .ok_or_else(|| Error::contract("generator parameters missing `latent/w`"))?
            .shape()[0];
        Ok(Self {
            vocab_size: v,
            hidden: h,
            latent_dim: d,
            beta,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<GeneratorVars> {
        let b = |g: &mut Graph, n: &str| nn::bind(g, &self.beta, n, trainable);
        Ok(GeneratorVars {
            embed: b(g, "embed")?,
            bos: b(g, "bos")?,
            latent_w: b(g, "latent/w")?,
            latent_b: b(g, "latent/b")?,
            gru: GruVars::bind(g, &self.beta, "gru", trainable)?,
            out_w: b(g, "out/w")?,
            out_b: b(g, "out/b")?,
        })
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::contract(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Runs the first position (begin-of-sequence input) for a batch of latents `z: (B, d)`.
    pub fn start(&self, g: &mut Graph, vars: &GeneratorVars, z: Var) -> Result<DecoderState> {
        let batch = g.shape(z)[0];
        let zw = g.matmul(z, vars.latent_w)?;
        let latent_in = g.add(zw, vars.latent_b)?;
        let x = g.add(latent_in, vars.bos)?;
        let h0 = vars.gru.zero_state(g, batch);
        let hidden = vars.gru.step(g, x, h0)?;
        Ok(DecoderState { hidden, latent_in })
    }

    /// Log-distribution over the next token, shape `(B, V)`.
    pub fn next_log_probs(&self, g: &mut Graph, vars: &GeneratorVars, state: &DecoderState) -> Result<Var> {
        let o = g.matmul(state.hidden, vars.out_w)?;
        let logits = g.add(o, vars.out_b)?;
        g.log_softmax(logits)
    }

    /// Advances with hard tokens (one per batch row).
    pub fn feed_tokens(
        &self,
        g: &mut Graph,
        vars: &GeneratorVars,
        state: &DecoderState,
        tokens: &[usize],
    ) -> Result<DecoderState> {
        let e = g.embedding(vars.embed, tokens)?;
        self.feed_embedding(g, vars, state, e)
    }

    /// Advances with a soft token: `probs (B, V)` weights the embedding table.
    pub fn feed_soft(&self, g: &mut Graph, vars: &GeneratorVars, state: &DecoderState, probs: Var) -> Result<DecoderState> {
        let e = g.matmul(probs, vars.embed)?;
        self.feed_embedding(g, vars, state, e)
    }

    fn feed_embedding(&self, g: &mut Graph, vars: &GeneratorVars, state: &DecoderState, e: Var) -> Result<DecoderState> {
        let x = g.add(e, state.latent_in)?;
        let hidden = vars.gru.step(g, x, state.hidden)?;
        Ok(DecoderState {
            hidden,
            latent_in: state.latent_in,
        })
    }

    /// Teacher-forced `log p(x_i | z_i)` for every sequence, shape `(B,)`.
    ///
    /// Rows are independent: padding of shorter sequences contributes exactly
    /// zero, so a sequence scores the same in any batch.
    pub fn batch_log_prob(&self, g: &mut Graph, vars: &GeneratorVars, seqs: &[&[usize]], z: Var) -> Result<Var> {
        if seqs.is_empty() || seqs.iter().any(|s| s.is_empty()) {
            return Err(Error::contract("sequences must be non-empty"));
        }
        for s in seqs {
            self.check_tokens(s)?;
        }
        if g.shape(z) != [seqs.len(), self.latent_dim] {
            return Err(Error::Shape {
                op: "generator latent",
                left: g.shape(z).to_vec(),
                right: vec![seqs.len(), self.latent_dim],
            });
        }
        let t_max = seqs.iter().map(|s| s.len()).max().expect("non-empty");
        let mut state = self.start(g, vars, z)?;
        let mut total: Option<Var> = None;
        for t in 0..t_max {
            if t > 0 {
                let prev: Vec<usize> = seqs.iter().map(|s| s.get(t - 1).copied().unwrap_or(0)).collect();
                state = self.feed_tokens(g, vars, &state, &prev)?;
            }
            let lp = self.next_log_probs(g, vars, &state)?;
            let targets: Vec<usize> = seqs.iter().map(|s| s.get(t).copied().unwrap_or(0)).collect();
            let picked = g.gather(lp, &targets)?;
            let mask: Vec<f64> = seqs.iter().map(|s| if t < s.len() { 1.0 } else { 0.0 }).collect();
            let picked = if mask.iter().all(|&m| m == 1.0) {
                picked
            } else {
                g.mul_const(picked, &mask)?
            };
            total = Some(match total {
                Some(acc) => g.add(acc, picked)?,
                None => picked,
            });
        }
        Ok(total.expect("t_max >= 1"))
    }

    /// `Σ_t log p(x_t | x_<t, z)` for a single sequence.
    pub fn seq_log_prob(&self, tokens: &[usize], z: &[f64]) -> Result<f64> {
        self.check_latent(z)?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false)?;
        let zv = g.constant(Tensor::matrix(1, self.latent_dim, z.to_vec())?);
        let lp = self.batch_log_prob(&mut g, &vars, &[tokens], zv)?;
        Ok(g.value(lp).item())
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.latent_dim {
            return Err(Error::contract(format!(
                "latent has dimension {}, generator expects {}",
                z.len(),
                self.latent_dim
            )));
        }
        Ok(())
    }

    /// Per-sequence log-likelihoods and their gradients with respect to the latents.
    pub fn latent_grad(&self, seqs: &[&[usize]], z: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false)?;
        let zv = g.input(z.clone());
        let lp = self.batch_log_prob(&mut g, &vars, seqs, zv)?;
        let total = g.sum(lp)?;
        g.backward(total)?;
        let grad = Tensor::new(z.shape().to_vec(), g.grad(zv).expect("latent input").to_vec())?;
        Ok((g.value(lp).data().to_vec(), grad))
    }

    /// Decodes after forcing `prefix`. At each step only the `k` most probable
    /// tokens are kept and one is drawn in proportion to its probability;
    /// `k = 1` is greedy. Stops after EOS or `max_len` emitted tokens.
    pub fn generate_with_prefix<R: Rng + ?Sized>(
        &self,
        z: &[f64],
        prefix: &[usize],
        max_len: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<SequenceSample> {
        self.check_latent(z)?;
        self.check_tokens(prefix)?;
        if k == 0 || max_len == 0 {
            return Err(Error::contract("generate needs k >= 1 and max_len >= 1"));
        }
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false)?;
        let zv = g.constant(Tensor::matrix(1, self.latent_dim, z.to_vec())?);
        let mut state = self.start(&mut g, &vars, zv)?;
        for &t in prefix {
            state = self.feed_tokens(&mut g, &vars, &state, &[t])?;
        }
        let mut tokens = Vec::new();
        let mut log_prob = 0.0;
        while tokens.len() < max_len {
            let lp = self.next_log_probs(&mut g, &vars, &state)?;
            let logp = g.value(lp).data().to_vec();
            let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
            let keep = top_k(&probs, k);
            let next = if keep.len() == 1 {
                keep[0]
            } else {
                let mass: f64 = keep.iter().map(|&i| probs[i]).sum();
                let mut u = rng.random::<f64>() * mass;
                let mut pick = *keep.last().expect("k >= 1");
                for &i in &keep {
                    if u < probs[i] {
                        pick = i;
                        break;
                    }
                    u -= probs[i];
                }
                pick
            };
            log_prob += logp[next];
            tokens.push(next);
            if next == EOS {
                break;
            }
            state = self.feed_tokens(&mut g, &vars, &state, &[next])?;
        }
        Ok(SequenceSample {
            tokens,
            log_prob,
            latent: z.to_vec(),
        })
    }

    pub fn generate<R: Rng + ?Sized>(&self, z: &[f64], max_len: usize, k: usize, rng: &mut R) -> Result<SequenceSample> {
        self.generate_with_prefix(z, &[], max_len, k, rng)
    }

    /// One maximum-likelihood update.
    ///
    /// Each sequence gets one short-run posterior latent; the generator then
    /// descends the mean negative log-likelihood at those latents, and the
    /// prior (when enabled) ascends its contrastive gradient against fresh
    /// prior samples. Returns the mean sequence NLL before the update.
    pub fn train_step(&mut self, prior: &mut EbmPrior, batch: &[&[usize]], cfg: &TrainStepConfig) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::contract("train_step needs a non-empty batch"));
        }
        for s in batch {
            self.check_tokens(s)?;
        }
        let n = batch.len();
        let z = sample_posterior_batch(prior, n, |z| self.latent_grad(batch, z), &cfg.posterior)
            .map_err(|e| e.context("posterior sampling (chain index = example index)"))?;

        let mut g = Graph::new();
        let vars = self.bind(&mut g, true)?;
        let zv = g.constant(z.clone());
        let lp = self.batch_log_prob(&mut g, &vars, batch, zv)?;
        let mean_lp = g.mean(lp)?;
        let loss = g.neg(mean_lp)?;
        let nll = g.value(loss).item();
        self.beta.zero_grad();
        g.backward(loss)?;
        g.accumulate_into(&mut self.beta)?;

        if cfg.update_prior {
            let negatives = sample_prior(prior, n, &cfg.prior).map_err(|e| e.context("prior sampling"))?;
            let rows = |t: &Tensor| (0..t.rows()).map(|i| t.row(i).to_vec()).collect::<Vec<_>>();
            let grad = prior.alpha_gradient(&rows(&z), &rows(&negatives))?;
            prior.alpha.zero_grad();
            for (name, gvec) in &grad {
                let descent: Vec<f64> = gvec.iter().map(|v| -v).collect();
                prior.alpha.accumulate_grad(name, &descent)?;
            }
            optimizer_step(&mut prior.alpha, cfg.lr_prior, &cfg.optimizer)?;
        }
        optimizer_step(&mut self.beta, cfg.lr_generator, &cfg.optimizer)?;
        Ok(nll)
    }
}
