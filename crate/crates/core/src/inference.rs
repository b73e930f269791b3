//! Energy-based inference network.
//!
//! The network reads a question and emits one logit vector per answer slot.
//! Each slot's softmax is fed to the frozen generator as a soft input token
//! (the expected embedding) and also weights the generator's log-probabilities
//! for that slot; the negative of that weighted sum is the slot's local
//! energy. Training lowers the summed energy of the network's own output.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{optimizer_step, Graph, Optimizer, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorVars};
use crate::nn::{self, GruVars};
use crate::seed;
use crate::tasks::qa::QaExample;
use crate::tasks::vocab::EOS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    /// Number of answer slots `M`.
    pub slots: usize,
}

#[derive(Clone, Debug)]
pub struct InferenceNet {
    vocab_size: usize,
    hidden: usize,
    slots: usize,
    pub psi: ParamStore,
}

/// Local energies of one answer and their sum.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotEnergy {
    pub per_slot: Vec<f64>,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

struct NetVars {
    embed: Var,
    gru: GruVars,
    head_w: Var,
    head_b: Var,
}

/// `-Σ_v softmax(z)_v · log p(v)`: expected negative log-likelihood of the
/// slot distribution under the generator's conditional.
pub fn local_energy(slot_logits: &[f64], cond_log_probs: &[f64]) -> Result<f64> {
    if slot_logits.len() != cond_log_probs.len() || slot_logits.is_empty() {
        return Err(Error::Shape {
            op: "local_energy",
            left: vec![slot_logits.len()],
            right: vec![cond_log_probs.len()],
        });
    }
    let max = cond_log_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + cond_log_probs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    if !(lse.abs() <= 1e-9) {
        return Err(Error::contract(format!(
            "conditional log-probabilities are not normalized (logsumexp = {lse})"
        )));
    }
    let mut g = Graph::new();
    let z = g.constant(Tensor::matrix(1, slot_logits.len(), slot_logits.to_vec())?);
    let lp = g.constant(Tensor::matrix(1, cond_log_probs.len(), cond_log_probs.to_vec())?);
    let e = local_energy_var(&mut g, z, lp)?;
    Ok(g.value(e).item())
}

/// Graph form of [`local_energy`] for `(1, V)` operands.
pub fn local_energy_var(g: &mut Graph, slot_logits: Var, cond_log_probs: Var) -> Result<Var> {
    let p = g.softmax(slot_logits)?;
    local_energy_from_probs(g, p, cond_log_probs)
}

fn local_energy_from_probs(g: &mut Graph, probs: Var, cond_log_probs: Var) -> Result<Var> {
    let w = g.mul(probs, cond_log_probs)?;
    let s = g.sum(w)?;
    g.neg(s)
}

/// Sums local energies in slot order.
pub fn total_energy(per_slot: &[f64]) -> Result<SlotEnergy> {
    if per_slot.is_empty() {
        return Err(Error::contract("total_energy needs at least one slot"));
    }
    Ok(SlotEnergy {
        per_slot: per_slot.to_vec(),
        total: per_slot.iter().sum(),
    })
}

/// Index of the largest value, ties to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Slot-wise argmax truncated after the first EOS (EOS kept).
pub fn decode_slots(logits: &Tensor) -> Vec<usize> {
    let mut out = Vec::new();
    for m in 0..logits.rows() {
        let t = argmax(logits.row(m));
        out.push(t);
        if t == EOS {
            break;
        }
    }
    out
}

impl InferenceNet {
    pub fn new<R: Rng + ?Sized>(cfg: &InferenceConfig, rng: &mut R) -> Result<Self> {
        if cfg.vocab_size < 2 || cfg.hidden == 0 || cfg.slots == 0 {
            return Err(Error::contract(format!("invalid inference-network dimensions {cfg:?}")));
        }
        let (v, h, m) = (cfg.vocab_size, cfg.hidden, cfg.slots);
        let mut psi = ParamStore::new();
        psi.insert_weight("embed", v, h, rng)?;
        nn::init_gru(&mut psi, "enc", h, h, rng)?;
        psi.insert_weight("head/w", 2 * h, m * v, rng)?;
        psi.insert_bias("head/b", m * v)?;
        Ok(Self {
            vocab_size: v,
            hidden: h,
            slots: m,
            psi,
        })
    }

    pub fn from_params(psi: ParamStore) -> Result<Self> {
        let embed = psi
            .value("embed")
            .ok_or_else(|| Error::contract("inference parameters missing `embed`"))?;
        let (v, h) = (embed.shape()[0], embed.shape()[1]);
        let head = psi
            .value("head/b")
            .ok_or_else(|| Error::contract("inference parameters missing `head/b`"))?;
        Ok(Self {
            vocab_size: v,
            hidden: h,
            slots: head.len() / v,
            psi,
        })
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> Result<NetVars> {
        let b = |g: &mut Graph, n: &str| nn::bind(g, &self.psi, n, trainable);
        Ok(NetVars {
            embed: b(g, "embed")?,
            gru: GruVars::bind(g, &self.psi, "enc", trainable)?,
            head_w: b(g, "head/w")?,
            head_b: b(g, "head/b")?,
        })
    }

    /// Slot logits for one question, shape `(1, M·V)`.
    fn logits_var(&self, g: &mut Graph, vars: &NetVars, question: &[usize]) -> Result<Var> {
        if question.is_empty() {
            return Err(Error::contract("question must be non-empty"));
        }
        if let Some(&bad) = question.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::contract(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.vocab_size
            )));
        }
        // Final state next to the mean word embedding.
        let mut h = vars.gru.zero_state(g, 1);
        let mut pooled: Option<Var> = None;
        for &t in question {
            let x = g.embedding(vars.embed, &[t])?;
            h = vars.gru.step(g, x, h)?;
            pooled = Some(match pooled {
                Some(p) => g.add(p, x)?,
                None => x,
            });
        }
        let pooled = g.scale(pooled.expect("non-empty question"), 1.0 / question.len() as f64)?;
        let features = g.concat(&[h, pooled])?;
        let out = g.matmul(features, vars.head_w)?;
        g.add(out, vars.head_b)
    }

    /// Per-slot logits, shape `(M, V)`.
    pub fn infer(&self, question: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false)?;
        let l = self.logits_var(&mut g, &vars, question)?;
        g.value(l).clone().reshape(vec![self.slots, self.vocab_size])
    }

    /// Greedy answer: slot-wise argmax up to and including the first EOS.
    pub fn predict_answer(&self, question: &[usize]) -> Result<Vec<usize>> {
        Ok(decode_slots(&self.infer(question)?))
    }

    /// Local energy variables for the first `active` slots.
    fn slot_energy_vars(
        &self,
        g: &mut Graph,
        gen: &Generator,
        gen_vars: &GeneratorVars,
        question: &[usize],
        logits: Var,
        active: usize,
    ) -> Result<Vec<Var>> {
        if gen.vocab_size() != self.vocab_size {
            return Err(Error::contract("generator and inference network vocabularies differ"));
        }
        let v = self.vocab_size;
        let z = g.constant(Tensor::zeros(&[1, gen.latent_dim()]));
        let mut state = gen.start(g, gen_vars, z)?;
        for t in QaExample::answer_prefix(question) {
            state = gen.feed_tokens(g, gen_vars, &state, &[t])?;
        }
        let mut out = Vec::with_capacity(active);
        for m in 0..active.min(self.slots) {
            let zm = g.slice_last(logits, m * v, v)?;
            let probs = g.softmax(zm)?;
            let lp = gen.next_log_probs(g, gen_vars, &state)?;
            out.push(local_energy_from_probs(g, probs, lp)?);
            if m + 1 < active {
                state = gen.feed_soft(g, gen_vars, &state, probs)?;
            }
        }
        Ok(out)
    }

    fn active_slots(&self, ex: &QaExample) -> usize {
        ex.answer.len().min(self.slots)
    }

    /// Local energies of the network's own answer for `ex`. Slots past the
    /// gold answer length are masked out.
    pub fn energy(&self, gen: &Generator, ex: &QaExample) -> Result<SlotEnergy> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false)?;
        let gen_vars = gen.bind(&mut g, false)?;
        let logits = self.logits_var(&mut g, &vars, &ex.question)?;
        let slots = self.slot_energy_vars(&mut g, gen, &gen_vars, &ex.question, logits, self.active_slots(ex))?;
        total_energy(&slots.iter().map(|&s| g.value(s).item()).collect::<Vec<_>>())
    }

    /// Summed energy of a batch on one graph, differentiable in `psi`.
    pub fn batch_energy(&self, g: &mut Graph, gen: &Generator, batch: &[&QaExample]) -> Result<Var> {
        let vars = self.bind(g, true)?;
        let gen_vars = gen.bind(g, false)?;
        let mut total: Option<Var> = None;
        for ex in batch {
            let logits = self.logits_var(g, &vars, &ex.question)?;
            for e in self.slot_energy_vars(g, gen, &gen_vars, &ex.question, logits, self.active_slots(ex))? {
                total = Some(match total {
                    Some(t) => g.add(t, e)?,
                    None => e,
                });
            }
        }
        total.ok_or_else(|| Error::contract("empty batch"))
    }

    pub fn mean_energy(&self, gen: &Generator, data: &[QaExample]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::contract("mean_energy needs data"));
        }
        let mut sum = 0.0;
        for (i, ex) in data.iter().enumerate() {
            sum += self.energy(gen, ex).map_err(|e| e.context(format!("example {i}")))?.total;
        }
        Ok(sum / data.len() as f64)
    }

    /// Teacher-forced cross-entropy of the slot distributions against the
    /// example answers, summed over a batch.
    pub fn batch_cross_entropy(&self, g: &mut Graph, batch: &[&QaExample]) -> Result<Var> {
        let vars = self.bind(g, true)?;
        let v = self.vocab_size;
        let mut total: Option<Var> = None;
        for ex in batch {
            let logits = self.logits_var(g, &vars, &ex.question)?;
            for (m, &y) in ex.answer.iter().take(self.slots).enumerate() {
                let zm = g.slice_last(logits, m * v, v)?;
                let lp = g.log_softmax(zm)?;
                let pick = g.gather(lp, &[y])?;
                let nll = g.neg(pick)?;
                let nll = g.sum(nll)?;
                total = Some(match total {
                    Some(t) => g.add(t, nll)?,
                    None => nll,
                });
            }
        }
        total.ok_or_else(|| Error::contract("empty batch"))
    }

    /// Supervised pass on the answers of `data` (gold or replayed), run
    /// before energy minimization. Returns the last epoch's mean loss.
    pub fn warm_start(&mut self, data: &[QaExample], cfg: &InferenceTrainConfig) -> Result<f64> {
        self.fit(data, cfg, |net, g, batch| net.batch_cross_entropy(g, batch))
    }

    fn fit<F>(&mut self, data: &[QaExample], cfg: &InferenceTrainConfig, mut objective: F) -> Result<f64>
    where
        F: FnMut(&Self, &mut Graph, &[&QaExample]) -> Result<Var>,
    {
        if data.is_empty() {
            return Err(Error::contract("inference training needs data"));
        }
        let batch_size = cfg.batch_size.max(1);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut last = f64::NAN;
        for epoch in 0..cfg.epochs {
            let mut rng = seed::rng_at(cfg.seed, &[epoch as u64]);
            order.sort_unstable();
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            for (b, chunk) in order.chunks(batch_size).enumerate() {
                let batch: Vec<&QaExample> = chunk.iter().map(|&i| &data[i]).collect();
                let mut g = Graph::new();
                let total = objective(self, &mut g, &batch)
                    .map_err(|e| e.context(format!("epoch {epoch}, batch {b} (examples {chunk:?})")))?;
                sum += g.value(total).item();
                let loss = g.scale(total, 1.0 / batch.len() as f64)?;
                self.psi.zero_grad();
                g.backward(loss)?;
                g.accumulate_into(&mut self.psi)?;
                optimizer_step(&mut self.psi, cfg.lr, &cfg.optimizer)?;
            }
            last = sum / data.len() as f64;
        }
        Ok(last)
    }

    /// Minimizes the summed energy of the network's answers with the generator
    /// frozen. Returns the mean total energy after the last epoch.
    pub fn train(&mut self, gen: &Generator, data: &[QaExample], cfg: &InferenceTrainConfig) -> Result<f64> {
        self.fit(data, cfg, |net, g, batch| net.batch_energy(g, gen, batch))?;
        self.mean_energy(gen, data)
    }
}
