use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::prior::{sample_prior, LangevinConfig};
use crate::prior::EbmPrior;
use crate::seed;
use crate::tasks::qa::QaExample;
use crate::tasks::vocab::{EOS, GEN, PAD, SEP};

pub const REPLAY_TASK: &str = "replay";

/// Outcome of one replay request.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBatch {
    pub examples: Vec<QaExample>,
    pub requested: usize,
    pub attempts: usize,
}

impl ReplayBatch {
    pub fn achieved(&self) -> usize {
        self.examples.len()
    }

    /// Fraction of decoding attempts that produced a usable QA pair.
    pub fn well_formed_rate(&self) -> f64 {
        if self.attempts == 0 {
            1.0
        } else {
            self.examples.len() as f64 / self.attempts as f64
        }
    }

    pub fn is_short(&self) -> bool {
        self.examples.len() < self.requested
    }
}

/// Splits a decoded `question SEP answer EOS` at its last SEP. Returns `None`
/// for outputs without SEP or EOS, with an empty side, or containing control
/// tokens inside either side.
pub fn split_generated(tokens: &[usize]) -> Option<QaExample> {
    let body = tokens.strip_suffix(&[EOS])?;
    let pos = body.iter().rposition(|&t| t == SEP)?;
    let (question, answer) = (&body[..pos], &body[pos + 1..]);
    if question.is_empty() || answer.is_empty() {
        return None;
    }
    let bad = |t: &usize| matches!(*t, PAD | EOS | GEN);
    if question.iter().any(bad) || answer.iter().any(|t| bad(t) || *t == SEP) {
        return None;
    }
    let mut answer = answer.to_vec();
    answer.push(EOS);
    Some(QaExample {
        question: question.to_vec(),
        answer,
        task_id: REPLAY_TASK.to_string(),
    })
}

/// Draws latents from the prior and greedily decodes pseudo-examples after
/// the GEN token, redrawing malformed outputs for up to `10 n` attempts.
pub fn generate_replay(
    prior: &EbmPrior,
    gen: &Generator,
    n: usize,
    max_len: usize,
    cfg: &LangevinConfig,
) -> Result<ReplayBatch> {
    let mut batch = ReplayBatch {
        examples: Vec::with_capacity(n),
        requested: n,
        attempts: 0,
    };
    let budget = 10 * n;
    let mut round = 0u64;
    while batch.examples.len() < n && batch.attempts < budget {
        let want = (n - batch.examples.len()).min(budget - batch.attempts);
        let z = sample_prior(prior, want, &cfg.with_seed(seed::derive(cfg.seed, &[round])))
            .map_err(|e| e.context(format!("replay prior sampling, round {round}")))?;
        for i in 0..want {
            batch.attempts += 1;
            // k = 1 decoding never consumes randomness.
            let sample = gen.generate_with_prefix(z.row(i), &[GEN], max_len, 1, &mut seed::rng(0))?;
            if let Some(ex) = split_generated(&sample.tokens) {
                batch.examples.push(ex);
            }
        }
        round += 1;
    }
    if batch.examples.len() > n {
        return Err(Error::contract("replay overshoot"));
    }
    Ok(batch)
}
