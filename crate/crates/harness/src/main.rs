use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use optenet::linear::tabular_bridge;
use optenet::planner::{plan_budget, plan_exact_with_budget, plan_nodes};
use optenet_harness::config::{load_config, RunConfig};
use optenet_harness::experiment::{candidate_losses, load_dataset, prepare, run_experiment};
use optenet_harness::zoo::{load_model, min_lambda};
use optenet_harness::{HarnessError, Result};

#[derive(Parser)]
#[command(name = "optenet", version, about = "Optimistic exploration experiments on finite POMDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the family against the modeling assumptions and report its constants.
    Validate(Common),
    /// Run the experiment and write CSV results.
    Run(Common),
    /// Plan exactly for a single model file.
    Plan {
        #[arg(long)]
        model: PathBuf,
    },
    /// Evaluate every candidate's loss on a saved dataset.
    Loss {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut config = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        config.output = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn validate(common: &Common) -> Result<()> {
    let config = resolve(common)?;
    print!("{}", config.to_toml());
    println!();
    let prepared = prepare(&config)?;
    let family = &prepared.family;
    for (i, m) in family.candidates().iter().enumerate() {
        let bridge = tabular_bridge(m)?;
        let cond = bridge.steps.iter().map(|s| s.condition).fold(0.0, f64::max);
        println!(
            "candidate {i}: gamma {}, lambda_min {:e}, lambda condition {:e}",
            bridge.gamma,
            min_lambda(&bridge),
            cond
        );
    }
    println!("gamma: {}", prepared.gamma);
    println!("alpha: {}", prepared.ctx.alpha());
    println!("beta: {}", prepared.beta);
    println!("shares initialization: {}", family.shares_initialization());
    println!("planning leaves: {} (budget {})", plan_nodes(family.true_model()), config.budget());
    Ok(())
}

fn run(common: &Common) -> Result<()> {
    let config = resolve(common)?;
    print!("{}", config.to_toml());
    println!();
    let report = run_experiment(&config)?;
    print!("{}", report.summary);
    println!("results written to {}", report.output.display());
    if report.succeeded() {
        Ok(())
    } else {
        Err(HarnessError::SeedsFailed {
            failed: report.failures.len(),
            total: config.seeds.len(),
        })
    }
}

fn plan(model: &Path) -> Result<()> {
    let model = load_model(model)?;
    let plan = plan_exact_with_budget(&model, plan_budget())?;
    println!("value: {}", plan.value);
    for (h, table) in plan.policy.tables().iter().enumerate() {
        let actions: Vec<String> = table.iter().map(usize::to_string).collect();
        println!("step {}: {}", h + 1, actions.join(" "));
    }
    Ok(())
}

fn loss(common: &Common, dataset: &Path) -> Result<()> {
    let config = resolve(common)?;
    let prepared = prepare(&config)?;
    let data = load_dataset(dataset, prepared.family.sizes())?;
    let losses = candidate_losses(&prepared, &data)?;
    let radius = prepared.beta / (data.k().max(1) as f64).sqrt();
    println!("k: {}, radius: {radius}", data.k());
    for (i, l) in losses.iter().enumerate() {
        let mark = if *l <= radius { "in set" } else { "" };
        println!("candidate {i}: {l} {mark}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate(c) => validate(c),
        Command::Run(c) => run(c),
        Command::Plan { model } => plan(model),
        Command::Loss { common, dataset } => loss(common, dataset),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
