mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use irlplan_core::planners::PlannerKind;

use crate::config::{load_config, RunConfig};

#[derive(Parser)]
#[command(name = "irlplan", version, about = "Trajectory scoring planner: data, training and closed-loop evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat TOML config file. Keys can be overridden with IRLPLAN_<KEY>.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, shared by all stages.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for scenario-parallel stages.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Planner for evaluate/simulate; evaluate runs the configured list when absent.
    #[arg(long, global = true)]
    planner: Option<PlannerKind>,
}

#[derive(Subcommand, Clone, PartialEq, Eq)]
enum Command {
    /// Write the train/val/test synthetic suites to scenarios.jsonl.
    GenScenarios,
    /// Featurize and label the train and val splits into features.bin.
    BuildFeatures,
    /// Train the scorer; writes params.dirl and training_log.csv.
    Train,
    /// Closed-loop rollouts; writes rollouts.jsonl, metrics.jsonl, summary.csv and summary_by_tag.csv.
    Evaluate,
    /// Roll out one scenario and print its metrics.
    Simulate {
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Train and evaluate the variants of one ablation axis; writes ablation.csv.
    Ablate,
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::GenScenarios => "gen-scenarios",
            Command::BuildFeatures => "build-features",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Simulate { .. } => "simulate",
            Command::Ablate => "ablate",
        }
    }
}

fn setup(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global()?;
    }
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let out = cli.out.as_path();
    match &cli.command {
        Command::GenScenarios => {
            let n = commands::gen_scenarios(cfg, out)?.len();
            println!("wrote {n} scenarios to {}", out.join(commands::SCENARIOS_FILE).display());
        }
        Command::BuildFeatures => {
            let n = commands::build_features(cfg, out)?;
            println!("wrote {n} samples to {}", out.join(commands::FEATURES_FILE).display());
        }
        Command::Train => {
            let r = commands::train_model(cfg, out)?;
            for e in &r.log {
                println!("epoch {:>3}  lr {:.2e}  train {:.4}  val {:.4}", e.epoch, e.lr, e.train_loss, e.val_loss);
            }
            println!("best epoch {}; parameters in {}", r.best_epoch, out.join(commands::PARAMS_FILE).display());
        }
        Command::Evaluate => {
            let kinds = cli.planner.map_or_else(|| cfg.planners.clone(), |k| vec![k]);
            println!("{:<22}{:>10}{:>10}{:>10}{:>10}{:>11}{:>10}", "planner", "safety", "comfort", "progress", "l2_yaw", "collision", "tailgate");
            for s in commands::evaluate(cfg, out, &kinds)? {
                let o = &s.overall;
                println!(
                    "{:<22}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>11.4}{:>10.4}",
                    s.planner, o.safety, o.comfort, o.progress, o.l2_with_yaw, o.collision_rate, o.tailgate_rate
                );
            }
        }
        Command::Simulate { scenario } => {
            let kind = cli.planner.unwrap_or(PlannerKind::LearnedPlusSafety);
            let r = commands::simulate(cfg, out, kind, scenario.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&r.metrics)?);
        }
        Command::Ablate => {
            for r in commands::ablate(cfg, out)? {
                let o = &r.summary.overall;
                println!(
                    "{:<24} val {:.4} (epoch {})  safety {:.4}  l2_yaw {:.4}  collision {:.4}",
                    r.variant, r.best_val_loss, r.best_epoch, o.safety, o.l2_with_yaw, o.collision_rate
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = setup(&cli).context("config").and_then(|cfg| run(&cli, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("irlplan: {} failed: {e:#}", cli.command.stage());
            ExitCode::FAILURE
        }
    }
}
