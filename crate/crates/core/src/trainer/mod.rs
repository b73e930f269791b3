//! Sequential task training with generated replay, plus baselines.

mod model;
pub mod permute;
pub mod replay;

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

pub use model::{Model, ModelConfig};
pub use permute::{mean_std, permutations, run_permutations, PermutationResults, RunKey, SummaryRow};
pub use replay::{generate_replay, split_generated, ReplayBatch, REPLAY_TASK};

use crate::autodiff::Optimizer;
use crate::error::{Error, Result};
use crate::generator::TrainStepConfig;
use crate::inference::InferenceTrainConfig;
use crate::prior::{EbmPrior, LangevinConfig};
use crate::seed;
use crate::tasks::qa::{QaExample, Task};
use crate::tasks::vocab::Vocab;

/// Training method of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Generated replay from the latent-prior model.
    Replay,
    Finetune,
    Multitask,
    RealReplay,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replay" => Ok(Self::Replay),
            "finetune" => Ok(Self::Finetune),
            "multitask" => Ok(Self::Multitask),
            "real_replay" | "real-replay" => Ok(Self::RealReplay),
            _ => Err(Error::Config {
                field: "method".into(),
                detail: format!("unknown method `{s}` (expected replay, finetune, multitask or real_replay)"),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub order: Vec<String>,
    /// Replay ratio relative to the incoming task's train size.
    pub gamma: f64,
    /// Generator epochs per task.
    pub epochs: usize,
    /// Supervised inference-network epochs per task, before the energy epochs.
    pub inference_warmup_epochs: usize,
    /// Energy-minimization epochs per task.
    pub inference_epochs: usize,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_prior: f64,
    pub lr_inference: f64,
    pub optimizer: Optimizer,
    /// Posterior chains; the seed field is ignored.
    pub posterior: LangevinConfig,
    /// Prior chains for the contrastive update and replay; seed ignored.
    pub prior: LangevinConfig,
    pub update_prior: bool,
    /// Fresh prior per task; replay draws from every past task's prior.
    #[serde(default)]
    pub prior_per_task: bool,
    pub replay_max_len: usize,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            order: Vec::new(),
            gamma: 0.2,
            epochs: 10,
            inference_warmup_epochs: 10,
            inference_epochs: 10,
            batch_size: 8,
            lr_generator: 1e-2,
            lr_prior: 1e-3,
            lr_inference: 1e-2,
            optimizer: Optimizer::default(),
            posterior: LangevinConfig::default(),
            prior: LangevinConfig::default(),
            update_prior: true,
            prior_per_task: false,
            replay_max_len: 40,
            seed: 0,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, detail: String| {
            Err(Error::Config {
                field: field.into(),
                detail,
            })
        };
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", format!("must lie in [0, 1], got {}", self.gamma));
        }
        if self.order.is_empty() {
            return bad("order", "needs at least one task".into());
        }
        let mut seen = HashSet::new();
        for name in &self.order {
            if !seen.insert(name) {
                return bad("order", format!("task `{name}` appears twice"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch-size", "must be >= 1".into());
        }
        for (field, s) in [("step-size", self.posterior.step_size), ("prior-step-size", self.prior.step_size)] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(field, format!("must be >= 0, got {s}"));
            }
        }
        for (field, lr) in [
            ("lr-generator", self.lr_generator),
            ("lr-prior", self.lr_prior),
            ("lr-inference", self.lr_inference),
        ] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(field, format!("must be >= 0, got {lr}"));
            }
        }
        if self.replay_max_len == 0 {
            return bad("replay-max-len", "must be >= 1".into());
        }
        Ok(())
    }

    /// Replay examples requested before a task with `n_new` train examples.
    pub fn replay_count(&self, n_new: usize) -> usize {
        (self.gamma * n_new as f64).floor() as usize
    }
}

/// What happened at one task boundary and during that task's training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub task: String,
    pub replay_requested: usize,
    pub replay_achieved: usize,
    pub replay_attempts: usize,
    pub train_examples: usize,
    /// Mean sequence NLL over the last generator epoch.
    pub final_nll: f64,
    /// Mean inference energy after the last inference epoch.
    pub final_energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub order: Vec<String>,
    pub gamma: f64,
    pub seed: u64,
    /// `scores[i][j]`: score on the `j`-th task of `order` after stage `i`.
    /// Multitask runs have a single row covering every task.
    pub scores: Vec<Vec<f64>>,
    pub final_average: f64,
    pub stages: Vec<StageReport>,
    pub schedule: Schedule,
    pub model: ModelConfig,
}

impl RunReport {
    /// Final scores keyed by task name.
    pub fn final_scores(&self) -> Vec<(String, f64)> {
        let last = self.scores.last().map(Vec::as_slice).unwrap_or(&[]);
        self.order.iter().cloned().zip(last.iter().copied()).collect()
    }
}

fn find_task<'a>(tasks: &'a [Task], name: &str) -> Result<&'a Task> {
    tasks.iter().find(|t| t.name == name).ok_or_else(|| Error::Config {
        field: "order".into(),
        detail: format!(
            "unknown task `{name}` (available: {})",
            tasks.iter().map(|t| t.name.as_str()).collect::<Vec<_>>().join(", ")
        ),
    })
}

/// Slot count covering the longest answer (EOS included) of every task.
pub fn slot_count(tasks: &[Task]) -> usize {
    tasks
        .iter()
        .flat_map(|t| t.train.iter().chain(&t.test))
        .map(|e| e.answer.len())
        .max()
        .unwrap_or(1)
}

fn train_phase(model: &mut Model, data: &[QaExample], sch: &Schedule, stage: u64) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::contract("training phase has no data"));
    }
    let seqs: Vec<Vec<usize>> = data.iter().map(QaExample::lm_sequence).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut last_nll = f64::NAN;
    for epoch in 0..sch.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng_at(sch.seed, &[seed::SHUFFLE, stage, epoch as u64]));
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(sch.batch_size).enumerate() {
            let batch: Vec<&[usize]> = chunk.iter().map(|&i| seqs[i].as_slice()).collect();
            let key = [stage, epoch as u64, b as u64];
            let cfg = TrainStepConfig {
                posterior: sch
                    .posterior
                    .with_seed(seed::derive(sch.seed, &[seed::POSTERIOR, key[0], key[1], key[2]])),
                prior: sch.prior.with_seed(seed::derive(sch.seed, &[seed::PRIOR, key[0], key[1], key[2]])),
                lr_generator: sch.lr_generator,
                lr_prior: sch.lr_prior,
                optimizer: sch.optimizer,
                update_prior: sch.update_prior,
            };
            let nll = model
                .generator
                .train_step(&mut model.prior, &batch, &cfg)
                .map_err(|e| e.context(format!("epoch {epoch}, batch {b}")))?;
            sum += nll * batch.len() as f64;
        }
        last_nll = sum / data.len() as f64;
    }
    let icfg = |epochs: usize, part: u64| InferenceTrainConfig {
        lr: sch.lr_inference,
        epochs,
        batch_size: sch.batch_size,
        optimizer: sch.optimizer,
        seed: seed::derive(sch.seed, &[seed::INFERENCE, stage, part]),
    };
    model
        .inference
        .warm_start(data, &icfg(sch.inference_warmup_epochs, 0))
        .map_err(|e| e.context("inference warm start"))?;
    let energy = model
        .inference
        .train(&model.generator, data, &icfg(sch.inference_epochs, 1))
        .map_err(|e| e.context("inference network"))?;
    Ok((last_nll, energy))
}

fn evaluate_row(model: &Model, tasks: &[&Task], vocab: &Vocab) -> Result<Vec<f64>> {
    tasks.iter().map(|t| model.evaluate(t, vocab)).collect()
}

/// Runs `method` over the schedule's task order. `tasks` may hold more tasks
/// than the schedule uses; all of them size the answer slots.
pub fn run(method: Method, schedule: &Schedule, model_cfg: &ModelConfig, tasks: &[Task], vocab: &Vocab) -> Result<(RunReport, Model)> {
    schedule.validate()?;
    model_cfg.validate()?;
    let mut sch = schedule.clone();
    if method != Method::Replay {
        sch.update_prior = false;
        sch.prior_per_task = false;
    }
    if method == Method::Finetune {
        sch.gamma = 0.0;
    }
    let seq: Vec<&Task> = sch.order.iter().map(|n| find_task(tasks, n)).collect::<Result<_>>()?;
    let mut model = Model::new(model_cfg, vocab.len(), slot_count(tasks), sch.seed)?;
    let mut scores = Vec::new();
    let mut stages = Vec::new();
    let mut past_priors: Vec<EbmPrior> = Vec::new();

    if method == Method::Multitask {
        let data: Vec<QaExample> = seq.iter().flat_map(|t| t.train.iter().cloned()).collect();
        let (nll, energy) = train_phase(&mut model, &data, &sch, 0).map_err(|e| e.context("multitask phase"))?;
        stages.push(StageReport {
            task: sch.order.join("+"),
            replay_requested: 0,
            replay_achieved: 0,
            replay_attempts: 0,
            train_examples: data.len(),
            final_nll: nll,
            final_energy: energy,
        });
        scores.push(evaluate_row(&model, &seq, vocab)?);
    } else {
        for (i, task) in seq.iter().enumerate() {
            let stage = i as u64;
            let ctx = |e: Error| e.context(format!("task `{}` (stage {i})", task.name));
            let requested = if i == 0 { 0 } else { sch.replay_count(task.train.len()) };
            let (replay, attempts) = match method {
                _ if requested == 0 => (Vec::new(), 0),
                Method::RealReplay => {
                    let pool: Vec<&QaExample> = seq[..i].iter().flat_map(|t| &t.train).collect();
                    let mut rng = seed::rng_at(sch.seed, &[seed::REAL_REPLAY, stage]);
                    let picked: Vec<QaExample> = pool
                        .choose_multiple(&mut rng, requested.min(pool.len()))
                        .map(|e| QaExample {
                            task_id: REPLAY_TASK.into(),
                            ..(*e).clone()
                        })
                        .collect();
                    let n = picked.len();
                    (picked, n)
                }
                _ if sch.prior_per_task => {
                    past_priors.push(model.prior.clone());
                    let mut examples = Vec::new();
                    let mut attempts = 0;
                    for (j, prior) in past_priors.iter().enumerate() {
                        let share = requested / i + usize::from(j < requested % i);
                        if share == 0 {
                            continue;
                        }
                        let cfg = sch.prior.with_seed(seed::derive(sch.seed, &[seed::REPLAY, stage, j as u64]));
                        let batch = generate_replay(prior, &model.generator, share, sch.replay_max_len, &cfg).map_err(ctx)?;
                        attempts += batch.attempts;
                        examples.extend(batch.examples);
                    }
                    (examples, attempts)
                }
                _ => {
                    let cfg = sch.prior.with_seed(seed::derive(sch.seed, &[seed::REPLAY, stage]));
                    let batch = generate_replay(&model.prior, &model.generator, requested, sch.replay_max_len, &cfg)
                        .map_err(ctx)?;
                    let attempts = batch.attempts;
                    (batch.examples, attempts)
                }
            };
            if sch.prior_per_task && i > 0 {
                if requested == 0 {
                    past_priors.push(model.prior.clone());
                }
                model.prior = model_cfg.prior(stage, sch.seed)?;
            }
            let achieved = replay.len();
            let mut data = replay;
            data.extend(task.train.iter().cloned());
            let (nll, energy) = train_phase(&mut model, &data, &sch, stage).map_err(ctx)?;
            stages.push(StageReport {
                task: task.name.clone(),
                replay_requested: requested,
                replay_achieved: achieved,
                replay_attempts: attempts,
                train_examples: data.len(),
                final_nll: nll,
                final_energy: energy,
            });
            scores.push(evaluate_row(&model, &seq[..=i], vocab).map_err(ctx)?);
        }
    }
    let last = scores.last().expect("at least one stage");
    let final_average = last.iter().sum::<f64>() / last.len() as f64;
    Ok((
        RunReport {
            method,
            order: sch.order.clone(),
            gamma: sch.gamma,
            seed: sch.seed,
            scores,
            final_average,
            stages,
            schedule: sch,
            model: model_cfg.clone(),
        },
        model,
    ))
}

/// Generated-replay continual training.
pub fn train_sequence(schedule: &Schedule, model_cfg: &ModelConfig, tasks: &[Task], vocab: &Vocab) -> Result<(RunReport, Model)> {
    run(Method::Replay, schedule, model_cfg, tasks, vocab)
}

/// Reference methods: `finetune`, `multitask` or `real_replay`.
pub fn baseline(method: Method, schedule: &Schedule, model_cfg: &ModelConfig, tasks: &[Task], vocab: &Vocab) -> Result<(RunReport, Model)> {
    if method == Method::Replay {
        return Err(Error::contract("`replay` is not a baseline; use train_sequence"));
    }
    run(method, schedule, model_cfg, tasks, vocab)
}
