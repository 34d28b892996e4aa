use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lena::ParamMode;
use lena_harness::config::{Algorithm, Overrides, RunConfig};
use lena_harness::error::{HarnessError, Result};
use lena_harness::experiment::{self, Plan};

#[derive(Parser)]
#[command(name = "lena-bench", version, about = "Run, certify and plot perturbed stochastic optimizers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Theorem,
    Manual,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of a config and write traces plus summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "algo")]
        algorithm: Option<String>,
        /// First trial seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of trials with consecutive seeds.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        budget: Option<u64>,
        #[arg(long = "out")]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        log_every: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Certify a point against the targets of a config.
    Certify {
        #[arg(long)]
        config: PathBuf,
        /// JSON array, summary record, or whitespace separated numbers.
        #[arg(long)]
        point: PathBuf,
    },
    /// Turn trace files into plot data (CSV) and an SVG chart.
    Plot {
        #[arg(long)]
        traces: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the hyperparameters a config resolves to.
    Params {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, algorithm, seed, seeds, budget, out_dir, log_every, mode } => {
            let mut cfg = RunConfig::load(&config)?;
            let algorithm = algorithm.map(|a| a.parse::<Algorithm>()).transpose().map_err(HarnessError::Config)?;
            let mode = mode.map(|m| match m {
                ModeArg::Theorem => ParamMode::Theorem,
                ModeArg::Manual => ParamMode::Manual,
            });
            cfg.apply(&Overrides { algorithm, seed, seeds, budget, out_dir, log_every, mode })?;
            let summary = experiment::run_experiment(&cfg)?;
            for t in &summary.trials {
                let rel = t.relative_error.map(|r| format!(" rel_err={r:.3e}")).unwrap_or_default();
                let obj = t.final_objective.map(|f| format!(" F={f:.6e}")).unwrap_or_default();
                let err = t.error.as_deref().map(|e| format!(" error: {e}")).unwrap_or_default();
                println!(
                    "{} seed={} status={:?} evals={}{obj}{rel}{err}",
                    t.algorithm, t.seed, t.status, t.sgrad_evals
                );
            }
            println!("summary written to {}", cfg.run.out_dir.join(experiment::SUMMARY_FILE).display());
            Ok(())
        }
        Command::Certify { config, point } => {
            let cfg = RunConfig::load(&config)?;
            let instance = experiment::Instance::build(&cfg.problem)?;
            let x = experiment::read_point(&point)?;
            let cert = experiment::certify_point(&cfg, &instance, &x)?;
            println!("{}", serde_json::to_string_pretty(&cert)?);
            Ok(())
        }
        Command::Plot { traces, out } => {
            let (series, svg) = lena_harness::plot::emit_plot(&traces, &out)?;
            println!("{} series written to {} and {}", series.len(), out.display(), svg.display());
            Ok(())
        }
        Command::Params { config } => {
            let cfg = RunConfig::load(&config)?;
            let instance = experiment::Instance::build(&cfg.problem)?;
            let start = instance.start(&cfg.problem)?;
            let inputs = experiment::problem_inputs(&cfg, instance.problem(), &start)?;
            if let (Some(kind), ParamMode::Theorem) = (cfg.algorithm.name.lena_kind(), cfg.algorithm.mode) {
                let schedule = lena::derive_schedule(kind, &inputs)?;
                println!("{}", serde_json::to_string_pretty(&schedule)?);
                let hp = schedule.into_hyper_params()?;
                println!("{}", serde_json::to_string_pretty(&hp.with_budget(cfg.run.budget))?);
                return Ok(());
            }
            let prepared = experiment::prepare(&cfg)?;
            match prepared.plan {
                Plan::Lena(hp) => println!("{}", serde_json::to_string_pretty(&hp)?),
                Plan::Baseline(bp) => println!("{bp:#?}"),
            }
            Ok(())
        }
    }
}
