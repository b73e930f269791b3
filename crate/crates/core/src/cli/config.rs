use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use latent_replay::autodiff::Optimizer;
use latent_replay::prior::LangevinConfig;
use latent_replay::tasks::io::load_dataset_with;
use latent_replay::tasks::qa::Task;
use latent_replay::tasks::suite::{make_synthetic_suite, SuiteSizes};
use latent_replay::tasks::vocab::Vocab;
use latent_replay::trainer::{Method, ModelConfig, Schedule};
use latent_replay::{Error, Result};

/// Everything a training command needs, as one flat JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct Config {
    pub method: Method,
    pub dataset: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub suite_seed: Option<u64>,
    pub suite_train: usize,
    pub suite_test: usize,
    /// Task order; empty means dataset order.
    pub order: Vec<String>,
    pub gamma: f64,
    pub epochs: usize,
    pub inference_warmup_epochs: usize,
    pub inference_epochs: usize,
    pub batch_size: usize,
    pub lr_generator: f64,
    pub lr_prior: f64,
    pub lr_inference: f64,
    pub optimizer: String,
    pub k_steps: usize,
    pub step_size: f64,
    /// Prior-chain settings; default to the posterior ones.
    pub prior_k_steps: Option<usize>,
    pub prior_step_size: Option<f64>,
    pub update_prior: bool,
    pub prior_per_task: bool,
    pub replay_max_len: usize,
    pub seed: u64,
    pub hidden: usize,
    pub latent_dim: usize,
    pub sigma2: f64,
    pub ebm_hidden: Vec<usize>,
    pub inference_hidden: usize,
    pub output_dir: PathBuf,
    /// Permutation grid; empty means `[gamma]` and `[seed]`.
    pub gammas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
}

impl Default for Config {
    fn default() -> Self {
        let sch = Schedule::default();
        let model = ModelConfig::default();
        Self {
            method: Method::Replay,
            dataset: None,
            vocab: None,
            suite_seed: None,
            suite_train: 60,
            suite_test: 30,
            order: Vec::new(),
            gamma: sch.gamma,
            epochs: sch.epochs,
            inference_warmup_epochs: sch.inference_warmup_epochs,
            inference_epochs: sch.inference_epochs,
            batch_size: sch.batch_size,
            lr_generator: sch.lr_generator,
            lr_prior: sch.lr_prior,
            lr_inference: sch.lr_inference,
            optimizer: "adam".into(),
            k_steps: sch.posterior.steps,
            step_size: sch.posterior.step_size,
            prior_k_steps: None,
            prior_step_size: None,
            update_prior: sch.update_prior,
            prior_per_task: sch.prior_per_task,
            replay_max_len: sch.replay_max_len,
            seed: 0,
            hidden: model.hidden,
            latent_dim: model.latent_dim,
            sigma2: model.sigma2,
            ebm_hidden: model.ebm_hidden,
            inference_hidden: model.inference_hidden,
            output_dir: PathBuf::from("out"),
            gammas: Vec::new(),
            seeds: Vec::new(),
            jobs: 1,
        }
    }
}

fn config_err(field: &str, detail: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        detail: detail.into(),
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    /// JSON config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    /// Dataset directory (train.jsonl, test.jsonl, optional tasks.json)
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Generate the synthetic three-task suite with this seed
    #[arg(long)]
    pub suite_seed: Option<u64>,
    #[arg(long)]
    pub suite_train: Option<usize>,
    #[arg(long)]
    pub suite_test: Option<usize>,
    /// Comma-separated task names
    #[arg(long, value_delimiter = ',')]
    pub order: Option<Vec<String>>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub inference_warmup_epochs: Option<usize>,
    #[arg(long)]
    pub inference_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_generator: Option<f64>,
    #[arg(long)]
    pub lr_prior: Option<f64>,
    #[arg(long)]
    pub lr_inference: Option<f64>,
    /// adam or sgd
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub k_steps: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub prior_k_steps: Option<usize>,
    #[arg(long)]
    pub prior_step_size: Option<f64>,
    #[arg(long)]
    pub update_prior: Option<bool>,
    #[arg(long)]
    pub prior_per_task: Option<bool>,
    #[arg(long)]
    pub replay_max_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub ebm_hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub inference_hidden: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

macro_rules! apply {
    ($cfg:ident, $o:ident; $($field:ident),* $(,)?) => {
        $(if let Some(v) = $o.$field.clone() { $cfg.$field = v; })*
    };
}

impl Overrides {
    /// File values, then flags, then validation.
    pub fn resolve(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => Config::from_file(path)?,
            None => Config::default(),
        };
        if let Some(m) = &self.method {
            cfg.method = m.parse()?;
        }
        apply!(cfg, self; suite_train, suite_test, order, gamma, epochs, inference_warmup_epochs,
            inference_epochs, batch_size, lr_generator, lr_prior, lr_inference, optimizer, k_steps,
            step_size, update_prior, prior_per_task, replay_max_len, seed, hidden, latent_dim, sigma2,
            ebm_hidden, inference_hidden, output_dir, gammas, seeds, jobs);
        if self.dataset.is_some() {
            cfg.dataset = self.dataset.clone();
        }
        if self.vocab.is_some() {
            cfg.vocab = self.vocab.clone();
        }
        if self.suite_seed.is_some() {
            cfg.suite_seed = self.suite_seed;
        }
        if self.prior_k_steps.is_some() {
            cfg.prior_k_steps = self.prior_k_steps;
        }
        if self.prior_step_size.is_some() {
            cfg.prior_step_size = self.prior_step_size;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| config_err("config", format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| config_err("config", format!("{}: {e}", path.display())))
    }

    pub fn optimizer(&self) -> Result<Optimizer> {
        match self.optimizer.as_str() {
            "adam" => Ok(Optimizer::default()),
            "sgd" => Ok(Optimizer::Sgd),
            other => Err(config_err("optimizer", format!("expected adam or sgd, got `{other}`"))),
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            latent_dim: self.latent_dim,
            sigma2: self.sigma2,
            ebm_hidden: self.ebm_hidden.clone(),
            inference_hidden: self.inference_hidden,
        }
    }

    pub fn schedule(&self, order: Vec<String>) -> Result<Schedule> {
        let posterior = LangevinConfig {
            steps: self.k_steps,
            step_size: self.step_size,
            seed: 0,
        };
        Ok(Schedule {
            order,
            gamma: self.gamma,
            epochs: self.epochs,
            inference_warmup_epochs: self.inference_warmup_epochs,
            inference_epochs: self.inference_epochs,
            batch_size: self.batch_size,
            lr_generator: self.lr_generator,
            lr_prior: self.lr_prior,
            lr_inference: self.lr_inference,
            optimizer: self.optimizer()?,
            posterior,
            prior: LangevinConfig {
                steps: self.prior_k_steps.unwrap_or(self.k_steps),
                step_size: self.prior_step_size.unwrap_or(self.step_size),
                seed: 0,
            },
            update_prior: self.update_prior,
            prior_per_task: self.prior_per_task,
            replay_max_len: self.replay_max_len,
            seed: self.seed,
        })
    }

    pub fn gammas(&self) -> Vec<f64> {
        if self.gammas.is_empty() {
            vec![self.gamma]
        } else {
            self.gammas.clone()
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset, self.suite_seed) {
            (None, None) => {
                return Err(config_err(
                    "dataset",
                    "neither `dataset` nor `suite-seed` is set; give exactly one",
                ))
            }
            (Some(_), Some(_)) => {
                return Err(config_err(
                    "dataset",
                    "`dataset` and `suite-seed` are both set; give exactly one",
                ))
            }
            _ => {}
        }
        if self.suite_seed.is_some() && (self.suite_train == 0 || self.suite_test == 0) {
            return Err(config_err("suite-train", "suite splits must be >= 1"));
        }
        if self.jobs == 0 {
            return Err(config_err("jobs", "must be >= 1"));
        }
        for &g in &self.gammas {
            if !(0.0..=1.0).contains(&g) {
                return Err(config_err("gammas", format!("every entry must lie in [0, 1], got {g}")));
            }
        }
        self.model().validate()?;
        // The real order is only known once the tasks are loaded.
        self.schedule(vec![String::new()])?.validate()
    }

    /// The vocabulary and tasks named by the config.
    pub fn tasks(&self) -> Result<(Vocab, Vec<Task>)> {
        let vocab = self.vocab.as_deref().map(Vocab::load).transpose()?;
        match (&self.dataset, self.suite_seed) {
            (Some(dir), None) => load_dataset_with(dir, vocab),
            (None, Some(seed)) => {
                let (suite_vocab, tasks) = make_synthetic_suite(
                    seed,
                    SuiteSizes {
                        train: self.suite_train,
                        test: self.suite_test,
                    },
                )?;
                Ok((vocab.unwrap_or(suite_vocab), tasks))
            }
            _ => unreachable!("checked by validate"),
        }
    }

    /// The configured order, or every task in dataset order.
    pub fn order(&self, tasks: &[Task]) -> Vec<String> {
        if self.order.is_empty() {
            tasks.iter().map(|t| t.name.clone()).collect()
        } else {
            self.order.clone()
        }
    }
}
