use serde::{Deserialize, Serialize};

use super::{run, Method, ModelConfig, RunReport, Schedule};
use crate::error::{Error, Result};
use crate::tasks::qa::Task;
use crate::tasks::vocab::Vocab;

/// Identifies one run of a permutation experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub gamma: f64,
    pub order: Vec<String>,
    pub seed: u64,
}

/// One CSV row: final scores of a run, per task in dataset order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub gamma: f64,
    pub order: Vec<String>,
    pub seed: u64,
    pub final_average: f64,
    pub task_scores: Vec<f64>,
}

/// Cross-order statistics for one `(gamma, seed)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderStats {
    pub gamma: f64,
    pub seed: u64,
    pub mean: f64,
    pub std: f64,
    pub orders: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationResults {
    pub task_names: Vec<String>,
    pub reports: Vec<RunReport>,
    pub rows: Vec<SummaryRow>,
    pub stats: Vec<OrderStats>,
}

/// Mean and sample standard deviation (`n - 1`); a single value has std 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// All orderings of `names`, lexicographic in input positions.
pub fn permutations(names: &[String]) -> Vec<Vec<String>> {
    fn rec(rest: &mut Vec<String>, prefix: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
        if rest.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..rest.len() {
            let item = rest.remove(i);
            prefix.push(item);
            rec(rest, prefix, out);
            let item = prefix.pop().expect("pushed");
            rest.insert(i, item);
        }
    }
    let mut out = Vec::new();
    rec(&mut names.to_vec(), &mut Vec::new(), &mut out);
    out
}

impl PermutationResults {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("gamma,order,seed,final_avg");
        for name in &self.task_names {
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{:.6}", r.gamma, r.order.join(">"), r.seed, r.final_average));
            for v in &r.task_scores {
                s.push_str(&format!(",{v:.6}"));
            }
            s.push('\n');
        }
        s
    }
}

fn summary_row(report: &RunReport, names: &[String]) -> SummaryRow {
    let finals = report.final_scores();
    SummaryRow {
        gamma: report.gamma,
        order: report.order.clone(),
        seed: report.seed,
        final_average: report.final_average,
        task_scores: names
            .iter()
            .map(|n| finals.iter().find(|(t, _)| t == n).map_or(f64::NAN, |(_, v)| *v))
            .collect(),
    }
}

/// Runs `method` for every task order, gamma and seed. Runs are independent
/// and spread over `jobs` threads; results come back in key order.
pub fn run_permutations(
    method: Method,
    base: &Schedule,
    model_cfg: &ModelConfig,
    tasks: &[Task],
    vocab: &Vocab,
    gammas: &[f64],
    seeds: &[u64],
) -> Result<PermutationResults> {
    run_permutations_with_jobs(method, base, model_cfg, tasks, vocab, gammas, seeds, 1)
}

#[allow(clippy::too_many_arguments)]
pub fn run_permutations_with_jobs(
    method: Method,
    base: &Schedule,
    model_cfg: &ModelConfig,
    tasks: &[Task],
    vocab: &Vocab,
    gammas: &[f64],
    seeds: &[u64],
    jobs: usize,
) -> Result<PermutationResults> {
    use rayon::prelude::*;

    let names: Vec<String> = if base.order.is_empty() {
        tasks.iter().map(|t| t.name.clone()).collect()
    } else {
        base.order.clone()
    };
    if names.len() < 2 {
        return Err(Error::contract("permutation runs need at least two tasks"));
    }
    if gammas.is_empty() || seeds.is_empty() {
        return Err(Error::contract("permutation runs need at least one gamma and one seed"));
    }
    let mut keys = Vec::new();
    for &gamma in gammas {
        for &seed in seeds {
            for order in permutations(&names) {
                keys.push(RunKey { gamma, order, seed });
            }
        }
    }
    let one = |k: &RunKey| -> Result<RunReport> {
        let sch = Schedule {
            order: k.order.clone(),
            gamma: k.gamma,
            seed: k.seed,
            ..base.clone()
        };
        run(method, &sch, model_cfg, tasks, vocab)
            .map(|(r, _)| r)
            .map_err(|e| e.context(format!("gamma {} seed {} order {}", k.gamma, k.seed, k.order.join(">"))))
    };
    let reports: Vec<RunReport> = if jobs <= 1 {
        keys.iter().map(one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::contract(format!("thread pool: {e}")))?;
        pool.install(|| keys.par_iter().map(one).collect::<Result<_>>())?
    };
    let rows: Vec<SummaryRow> = reports.iter().map(|r| summary_row(r, &names)).collect();
    let mut stats = Vec::new();
    for &gamma in gammas {
        for &seed in seeds {
            let finals: Vec<f64> = rows
                .iter()
                .filter(|r| r.gamma == gamma && r.seed == seed)
                .map(|r| r.final_average)
                .collect();
            let (mean, std) = mean_std(&finals);
            stats.push(OrderStats {
                gamma,
                seed,
                mean,
                std,
                orders: finals.len(),
            });
        }
    }
    Ok(PermutationResults {
        task_names: names,
        reports,
        rows,
        stats,
    })
}
