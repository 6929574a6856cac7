//! Seeded runs of the learning loop and their CSV outputs.
//!
//! Files written to the output directory:
//!
//! | file | content |
//! |------|---------|
//! | `config.toml` | the resolved configuration |
//! | `seed_<s>.csv` | one row per iteration, see [`IterationRow`] |
//! | `trace_seed_<s>.csv` | stochastic solver steps, see [`TraceCsvRow`] |
//! | `dataset_seed_<s>.csv` | every collected triple, see [`DatasetRow`] |
//! | `aggregate.csv` | cross-seed statistics, see [`AggregateRow`] |
//! | `summary.txt` | sizes, constants, episode count and check outcomes |
//! | `timing.txt` | wall-clock seconds per seed |
//!
//! Everything except `timing.txt` is a function of the config alone.

use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use optenet::estimation::{loss_from_projections, project_dataset, TripleDataset, Tuple};
use optenet::model::{ParameterFamily, TripleSpace};
use optenet::planner::{beta_min, candidate_operators, run_optenet, RunRecord, RunSettings, SolverChoice};
use optenet::rkhs::RkhsContext;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SolverKind};
use crate::error::{io_error, HarnessError, Result};
use crate::zoo::build_family;

/// Family, kernel context and constants shared by every seed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub family: ParameterFamily,
    pub ctx: RkhsContext,
    pub gamma: f64,
    pub beta: f64,
    pub beta_overridden: bool,
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;
    let family = build_family(&config.family, &config.tolerances)?;
    let sizes = family.sizes();
    let ctx = config.context(sizes.observations)?;
    let (_, gamma) = candidate_operators(family.candidates())?;
    let beta = match config.beta {
        Some(b) => b,
        None => beta_min(
            ctx.dim(),
            gamma,
            ctx.alpha(),
            config.iterations,
            sizes.horizon,
            sizes.actions,
            config.delta,
        )?,
    };
    Ok(Prepared {
        family,
        ctx,
        gamma,
        beta,
        beta_overridden: config.beta.is_some(),
    })
}

pub fn settings(config: &RunConfig, beta: f64, seed: u64) -> RunSettings {
    RunSettings {
        iterations: config.iterations,
        beta,
        seed,
        budget: config.budget(),
        solver: match config.solver {
            SolverKind::Exact => SolverChoice::Exact,
            SolverKind::Stochastic => SolverChoice::Stochastic((&config.stochastic).into()),
        },
    }
}

/// Runs every seed concurrently; a failing seed leaves the others untouched.
pub fn run_seeds(config: &RunConfig, prepared: &Prepared) -> Vec<(u64, Result<RunRecord>)> {
    config
        .seeds
        .par_iter()
        .map(|&seed| {
            let s = settings(config, prepared.beta, seed);
            (seed, run_optenet(&prepared.family, &s, &prepared.ctx).map_err(HarnessError::from))
        })
        .collect()
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub output: PathBuf,
    pub prepared: Prepared,
    pub records: Vec<RunRecord>,
    pub failures: Vec<(u64, String)>,
    pub summary: String,
}

impl ExperimentReport {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs the configured experiment and writes its files under `config.output`.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentReport> {
    let prepared = prepare(config)?;
    let out = config.output.clone();
    std::fs::create_dir_all(&out).map_err(io_error(&out))?;
    crate::config::save_config(config, &out.join("config.toml"))?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (seed, result) in run_seeds(config, &prepared) {
        match result {
            Ok(r) => records.push(r),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    for r in &records {
        write_run(r, &out, config.solver == SolverKind::Stochastic)?;
    }
    write_aggregate(&records, config.iterations, &out.join("aggregate.csv"))?;
    let summary = summarize(config, &prepared, &records, &failures);
    let path = out.join("summary.txt");
    std::fs::write(&path, &summary).map_err(io_error(&path))?;
    let mut timing = String::new();
    for r in &records {
        writeln!(timing, "seed {}: {:.3} s", r.seed, r.elapsed_seconds).unwrap();
    }
    let path = out.join("timing.txt");
    std::fs::write(&path, timing).map_err(io_error(&path))?;
    Ok(ExperimentReport {
        output: out,
        prepared,
        records,
        failures,
        summary,
    })
}

/// Per-iteration columns of `seed_<s>.csv`. Optional checks are empty when
/// the true model is outside the confidence set.
#[derive(Debug, Serialize)]
pub struct IterationRow<'a> {
    pub iteration: usize,
    pub theta_index: usize,
    pub policy_id: &'a str,
    pub set_size: usize,
    pub fallback: bool,
    pub true_in_set: bool,
    pub loss_true: f64,
    pub loss_chosen: f64,
    pub optimistic_value: f64,
    pub suboptimality: f64,
    pub optimism_holds: Option<bool>,
    pub decomposition_bound: Option<f64>,
    pub decomposition_holds: Option<bool>,
}

/// Columns of `trace_seed_<s>.csv`.
#[derive(Debug, Serialize)]
pub struct TraceCsvRow<'a> {
    pub iteration: usize,
    pub step: usize,
    pub lagrangian: f64,
    pub loss: f64,
    pub grad_theta_norm: f64,
    pub grad_lambda_norm: f64,
    pub grad_w_norm: f64,
    pub max_constraint_residual: f64,
    pub policy_id: &'a str,
}

/// Columns of `dataset_seed_<s>.csv`; `third` is `end` at the last step.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetRow {
    pub step: usize,
    pub first: usize,
    pub second: usize,
    pub o1: usize,
    pub o2: usize,
    pub o3: String,
}

/// Columns of `aggregate.csv`.
#[derive(Debug, Serialize)]
pub struct AggregateRow {
    pub iteration: usize,
    pub seeds: usize,
    pub mean_suboptimality: f64,
    pub median_suboptimality: f64,
    pub q25_suboptimality: f64,
    pub q75_suboptimality: f64,
    pub membership_rate: f64,
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(io_error(path))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn write_run(record: &RunRecord, dir: &Path, with_trace: bool) -> Result<()> {
    let mut w = writer(&dir.join(format!("seed_{}.csv", record.seed)))?;
    for r in &record.rows {
        w.serialize(IterationRow {
            iteration: r.iteration,
            theta_index: r.theta_index,
            policy_id: &r.policy_id,
            set_size: r.set_size,
            fallback: r.fallback,
            true_in_set: r.true_in_set,
            loss_true: r.loss_true,
            loss_chosen: r.loss_chosen,
            optimistic_value: r.optimistic_value,
            suboptimality: r.suboptimality,
            optimism_holds: r.optimism_holds,
            decomposition_bound: r.decomposition_bound,
            decomposition_holds: r.decomposition_holds,
        })?;
    }
    w.flush().map_err(io_error(dir))?;
    if with_trace {
        let mut w = writer(&dir.join(format!("trace_seed_{}.csv", record.seed)))?;
        for (k, t) in &record.solver_trace {
            w.serialize(TraceCsvRow {
                iteration: *k,
                step: t.step,
                lagrangian: t.lagrangian,
                loss: t.loss,
                grad_theta_norm: t.grad_theta_norm,
                grad_lambda_norm: t.grad_lambda_norm,
                grad_w_norm: t.grad_w_norm,
                max_constraint_residual: t.max_constraint_residual,
                policy_id: &t.policy_id,
            })?;
        }
        w.flush().map_err(io_error(dir))?;
    }
    save_dataset(&record.dataset, &dir.join(format!("dataset_seed_{}.csv", record.seed)))
}

pub fn save_dataset(dataset: &TripleDataset, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    for t in dataset.tuples() {
        for triple in dataset.entry(t)? {
            w.serialize(DatasetRow {
                step: t.step,
                first: t.first,
                second: t.second,
                o1: triple[0],
                o2: triple[1],
                o3: if triple[2] == TripleSpace::END {
                    "end".to_string()
                } else {
                    triple[2].to_string()
                },
            })?;
        }
    }
    w.flush().map_err(io_error(path))
}

pub fn load_dataset(path: &Path, sizes: optenet::model::Sizes) -> Result<TripleDataset> {
    let file = File::open(path).map_err(io_error(path))?;
    let mut data = TripleDataset::new(sizes);
    for row in csv::Reader::from_reader(file).deserialize() {
        let row: DatasetRow = row?;
        let third = if row.o3 == "end" {
            TripleSpace::END
        } else {
            row.o3.parse().map_err(|_| HarnessError::Parse {
                path: path.to_path_buf(),
                message: format!("third observation `{}` is neither an index nor `end`", row.o3),
            })?
        };
        let t = Tuple {
            step: row.step,
            first: row.first,
            second: row.second,
        };
        data.push(t, [row.o1, row.o2, third])?;
    }
    Ok(data)
}

/// Loss of every candidate on `dataset`.
pub fn candidate_losses(prepared: &Prepared, dataset: &TripleDataset) -> Result<Vec<f64>> {
    let sizes = prepared.family.sizes();
    if dataset.sizes() != sizes {
        return Err(HarnessError::Validation("dataset and family sizes differ".into()));
    }
    let (operators, _) = candidate_operators(prepared.family.candidates())?;
    let projections = project_dataset(dataset, &prepared.ctx)?;
    operators
        .iter()
        .map(|ops| Ok(loss_from_projections(ops, &sizes, &projections)?.value))
        .collect()
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn aggregate(records: &[RunRecord], iterations: usize) -> Vec<AggregateRow> {
    (1..=iterations)
        .map(|k| {
            let mut subs: Vec<f64> = records.iter().map(|r| r.rows[k - 1].suboptimality).collect();
            subs.sort_by(f64::total_cmp);
            let n = subs.len();
            let hits = records.iter().filter(|r| r.rows[k - 1].true_in_set).count();
            AggregateRow {
                iteration: k,
                seeds: n,
                mean_suboptimality: subs.iter().sum::<f64>() / n.max(1) as f64,
                median_suboptimality: quantile(&subs, 0.5),
                q25_suboptimality: quantile(&subs, 0.25),
                q75_suboptimality: quantile(&subs, 0.75),
                membership_rate: hits as f64 / n.max(1) as f64,
            }
        })
        .collect()
}

fn write_aggregate(records: &[RunRecord], iterations: usize, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    for row in aggregate(records, iterations) {
        w.serialize(row)?;
    }
    w.flush().map_err(io_error(path))
}

pub fn summarize(config: &RunConfig, prepared: &Prepared, records: &[RunRecord], failures: &[(u64, String)]) -> String {
    let sizes = prepared.family.sizes();
    let k = config.iterations;
    let mut s = String::new();
    let source = match (&config.family.generator, &config.family.file) {
        (Some(g), _) => format!("generator {g}"),
        (_, Some(f)) => format!("file {}", f.display()),
        _ => String::new(),
    };
    writeln!(s, "family: {source}").unwrap();
    writeln!(
        s,
        "sizes: {} states, {} actions, {} observations, horizon {}, {} candidates, true index {}",
        sizes.states,
        sizes.actions,
        sizes.observations,
        sizes.horizon,
        prepared.family.len(),
        prepared.family.true_index()
    )
    .unwrap();
    writeln!(s, "gamma: {}", prepared.gamma).unwrap();
    writeln!(s, "alpha: {}", prepared.ctx.alpha()).unwrap();
    writeln!(s, "feature dimension: {}", prepared.ctx.dim()).unwrap();
    if prepared.beta_overridden {
        writeln!(s, "beta: {} (override)", prepared.beta).unwrap();
    } else {
        writeln!(s, "beta: {} (delta = {})", prepared.beta, config.delta).unwrap();
    }
    writeln!(s, "iterations: {k}").unwrap();
    let episodes = (sizes.horizon - 1) * sizes.actions * sizes.actions * k;
    writeln!(s, "episodes per seed: {episodes}").unwrap();
    writeln!(s, "seeds: {} run, {} failed", records.len() + failures.len(), failures.len()).unwrap();
    for r in records {
        let bound = r.regret_bound(sizes.horizon, sizes.actions);
        let avg = r.average_suboptimality(k);
        writeln!(
            s,
            "seed {}: episodes {}, membership {:.4}, average suboptimality {avg}, bound {bound}, checks {}",
            r.seed,
            r.episodes,
            r.membership_rate(),
            if r.checks_hold() { "hold" } else { "FAIL" }
        )
        .unwrap();
    }
    for (seed, e) in failures {
        writeln!(s, "seed {seed}: error: {e}").unwrap();
    }
    s
}
