mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use latent_replay::prior::LangevinConfig;
use latent_replay::tasks::io::{save_dataset, write_jsonl};
use latent_replay::tasks::suite::{make_synthetic_suite, SuiteSizes};
use latent_replay::tasks::vocab::Vocab;
use latent_replay::trainer::permute::run_permutations_with_jobs;
use latent_replay::trainer::{generate_replay, run, Model};
use latent_replay::verify::gradient_report;
use latent_replay::{seed, Error, Result};

pub use config::Overrides;

#[derive(Parser, Debug)]
#[command(name = "latent-replay", version, about = "Latent-prior generative replay for continual QA")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one task sequence (or baseline) and write its report and checkpoint
    Run(Overrides),
    /// Train every task order for each gamma and seed; print the summary CSV
    Permute(Overrides),
    /// Compare analytic and finite-difference gradients on micro-instances
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Number of micro-instances per component
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Emit replay QA pairs from a checkpoint as JSON Lines
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        k_steps: usize,
        #[arg(long, default_value_t = 0.1)]
        step_size: f64,
        #[arg(long, default_value_t = 40)]
        max_len: usize,
    },
    /// Write the synthetic suite as a dataset directory
    ExportSuite {
        #[arg(long)]
        suite_seed: u64,
        #[arg(long, default_value_t = 60)]
        suite_train: usize,
        #[arg(long, default_value_t = 30)]
        suite_test: usize,
        #[arg(long)]
        output_dir: PathBuf,
    },
}

/// Exit status of a finished command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    VerifyFailed = 1,
    ConfigError = 2,
    RuntimeError = 3,
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> Self {
        ExitCode::from(s as u8)
    }
}

fn status_of(err: &Error) -> Status {
    match err.root() {
        Error::Config { .. } => Status::ConfigError,
        _ => Status::RuntimeError,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn stdout_write(bytes: &[u8]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| Error::io("<stdout>", e))
}

fn cmd_run(o: &Overrides) -> Result<Status> {
    let cfg = o.resolve()?;
    let (vocab, tasks) = cfg.tasks()?;
    let sch = cfg.schedule(cfg.order(&tasks))?;
    let (report, model) = run(cfg.method, &sch, &cfg.model(), &tasks, &vocab)?;
    for (stage, row) in report.stages.iter().zip(&report.scores) {
        eprintln!(
            "stage {}: replay {}/{} nll {:.4} energy {:.4} scores {:?}",
            stage.task, stage.replay_achieved, stage.replay_requested, stage.final_nll, stage.final_energy, row
        );
    }
    create_dir(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join("report.json"), &serde_json::to_vec_pretty(&report)?)?;
    model.save(&cfg.output_dir.join("model.ckpt"))?;
    vocab.save(&cfg.output_dir.join("vocab.txt"))?;
    stdout_write(format!("{:.4}\n", report.final_average).as_bytes())?;
    Ok(Status::Ok)
}

fn cmd_permute(o: &Overrides) -> Result<Status> {
    let cfg = o.resolve()?;
    let (vocab, tasks) = cfg.tasks()?;
    let base = cfg.schedule(cfg.order(&tasks))?;
    let names = base.order.clone();
    let subset: Vec<_> = tasks.iter().filter(|t| names.contains(&t.name)).cloned().collect();
    if subset.len() < 2 {
        return Err(Error::Config {
            field: "order".into(),
            detail: "permutations need at least two tasks".into(),
        });
    }
    let results = run_permutations_with_jobs(
        cfg.method,
        &base,
        &cfg.model(),
        &subset,
        &vocab,
        &cfg.gammas(),
        &cfg.seeds(),
        cfg.jobs,
    )?;
    let reports_dir = cfg.output_dir.join("reports");
    create_dir(&reports_dir)?;
    for r in &results.reports {
        let name = format!("g{}-s{}-{}.json", r.gamma, r.seed, r.order.join("-"));
        write_file(&reports_dir.join(name), &serde_json::to_vec_pretty(r)?)?;
    }
    for s in &results.stats {
        eprintln!("gamma {} seed {}: mean {:.4} std {:.4} over {} orders", s.gamma, s.seed, s.mean, s.std, s.orders);
    }
    let csv = results.to_csv();
    write_file(&cfg.output_dir.join("summary.csv"), csv.as_bytes())?;
    write_file(&cfg.output_dir.join("stats.json"), &serde_json::to_vec_pretty(&results.stats)?)?;
    stdout_write(csv.as_bytes())?;
    Ok(Status::Ok)
}

fn cmd_gradcheck(tolerance: f64, count: u64, root: u64) -> Result<Status> {
    if !(tolerance >= 0.0) {
        return Err(Error::Config {
            field: "tolerance".into(),
            detail: format!("must be >= 0, got {tolerance}"),
        });
    }
    let seeds: Vec<u64> = (0..count.max(1)).map(|i| seed::derive(root, &[i])).collect();
    let report = gradient_report(&seeds)?;
    let mut ok = true;
    let mut out = String::new();
    for c in &report {
        let pass = c.passes(tolerance);
        ok &= pass;
        out.push_str(&format!(
            "{:<10} max_rel_error {:.3e} over {} seeds {}\n",
            c.component,
            c.max_rel_error,
            c.seeds,
            if pass { "ok" } else { "FAIL" }
        ));
    }
    stdout_write(out.as_bytes())?;
    Ok(if ok { Status::Ok } else { Status::VerifyFailed })
}

#[allow(clippy::too_many_arguments)]
fn cmd_sample(checkpoint: &Path, vocab: &Path, n: usize, root: u64, k: usize, s: f64, max_len: usize) -> Result<Status> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::Config {
            field: "step-size".into(),
            detail: format!("must be >= 0, got {s}"),
        });
    }
    let vocab = Vocab::load(vocab)?;
    let model = Model::load(checkpoint)?;
    if model.generator.vocab_size() != vocab.len() {
        return Err(Error::Config {
            field: "vocab".into(),
            detail: format!(
                "has {} tokens, checkpoint expects {}",
                vocab.len(),
                model.generator.vocab_size()
            ),
        });
    }
    let cfg = LangevinConfig {
        steps: k,
        step_size: s,
        seed: seed::derive(root, &[seed::REPLAY]),
    };
    let batch = generate_replay(&model.prior, &model.generator, n, max_len, &cfg)?;
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &batch.examples, &vocab)?;
    stdout_write(&buf)?;
    eprintln!(
        "well-formed {}/{} attempts (rate {:.4}){}",
        batch.achieved(),
        batch.attempts,
        batch.well_formed_rate(),
        if batch.is_short() { "; short of the requested count" } else { "" }
    );
    Ok(Status::Ok)
}

fn cmd_export_suite(seed: u64, train: usize, test: usize, dir: &Path) -> Result<Status> {
    let (vocab, tasks) = make_synthetic_suite(seed, SuiteSizes { train, test })?;
    save_dataset(dir, &tasks, &vocab)?;
    Ok(Status::Ok)
}

pub fn dispatch(cli: &Cli) -> Status {
    let result = match &cli.command {
        Command::Run(o) => cmd_run(o),
        Command::Permute(o) => cmd_permute(o),
        Command::Gradcheck { tolerance, seeds, seed } => cmd_gradcheck(*tolerance, *seeds, *seed),
        Command::Sample {
            checkpoint,
            vocab,
            n,
            seed,
            k_steps,
            step_size,
            max_len,
        } => cmd_sample(checkpoint, vocab, *n, *seed, *k_steps, *step_size, *max_len),
        Command::ExportSuite {
            suite_seed,
            suite_train,
            suite_test,
            output_dir,
        } => cmd_export_suite(*suite_seed, *suite_train, *suite_test, output_dir),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        status_of(&e)
    })
}
