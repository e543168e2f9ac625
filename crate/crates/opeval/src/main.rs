use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use opeval::pipeline::{Pipeline, Stage};
use opeval::report::{emit_plot_data, PlotKind};
use opeval::{ExperimentConfig, PipelineError, Result};
use opeval_core::par::Execution;

#[derive(Parser)]
#[command(name = "opeval", version, about = "Off-policy evaluation and selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON); the built-in default when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; falls back to the config's output_dir, then ./results.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, env = "OPEVAL_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the environment and policies, collect datasets, compute true values.
    Collect(Common),
    /// Fit Q-functions and marginal weights for every dataset and candidate.
    Fit(Common),
    /// Point estimates with confidence intervals.
    Ope(Common),
    /// Return-distribution estimates and risk functionals.
    Cdope(Common),
    /// Policy-selection metrics, top-k statistics and rankings.
    Ops(Common),
    /// Every stage in order, then plot data.
    Run(Common),
    /// Plot data and SVG charts from existing stage outputs.
    Report {
        #[command(flatten)]
        common: Common,
        /// cdf, topk or validation_scatter; all when omitted.
        #[arg(long)]
        kind: Vec<String>,
    },
}

fn pipeline(c: &Common) -> Result<Pipeline> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default_config(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    let exec = match c.workers {
        Some(0) => return Err(PipelineError::Argument("--workers must be at least 1".into())),
        Some(1) => Execution::Sequential,
        _ => Execution::Parallel,
    };
    Ok(Pipeline::new(cfg, out, exec))
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn execute(command: Command) -> Result<()> {
    let (common, stage) = match &command {
        Command::Collect(c) => (c, Some(Stage::Collect)),
        Command::Fit(c) => (c, Some(Stage::Fit)),
        Command::Ope(c) => (c, Some(Stage::Ope)),
        Command::Cdope(c) => (c, Some(Stage::Cdope)),
        Command::Ops(c) => (c, Some(Stage::Ops)),
        Command::Run(c) => (c, None),
        Command::Report { common, .. } => (common, None),
    };
    let p = pipeline(common)?;
    let work = || -> Result<()> {
        if let Some(stage) = stage {
            print_json(&p.run_stage(stage)?);
            return Ok(());
        }
        match &command {
            Command::Run(_) => print_json(&p.run()?),
            Command::Report { kind, .. } => {
                let kinds: Vec<PlotKind> = if kind.is_empty() {
                    PlotKind::ALL.to_vec()
                } else {
                    kind.iter().map(|k| k.parse()).collect::<Result<_>>()?
                };
                for k in kinds {
                    let files = emit_plot_data(&p.out, k)?;
                    println!("{}: {} files", k.name(), files.len());
                }
            }
            _ => unreachable!("stage commands handled above"),
        }
        Ok(())
    };
    with_workers(common.workers, work)
}

#[cfg(feature = "parallel")]
fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match workers {
        Some(k) if k > 1 => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_workers<R>(_workers: Option<usize>, f: impl FnOnce() -> R) -> R {
    f()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
