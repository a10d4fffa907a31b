//! `dopt-sim`: run, sweep and inspect decentralized optimization experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use dopt_core::experiment::{
    allocation_table, lowerbound_demo, mix_info, run_command, sweep_command, AlgorithmKind,
    DemoParams, ExperimentConfig,
};
use dopt_core::Execution;

/// Environment variable capping worker threads (0 = one per core).
const THREADS_ENV: &str = "DOPT_SIM_THREADS";

#[derive(Parser)]
#[command(
    name = "dopt-sim",
    version,
    about = "Decentralized stochastic optimization simulator"
)]
struct Cli {
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of the configured algorithm and aggregate the curves.
    Run { config: PathBuf },
    /// Run several algorithms under their own schedules on the same problem.
    Sweep {
        config: PathBuf,
        /// Comma-separated list: dnss, dnss_vr, gt_sa, uniform, dsgt.
        #[arg(long, value_delimiter = ',', default_value = "dnss,gt_sa,dsgt")]
        algos: Vec<String>,
    },
    /// Print the per-node batch plans as CSV.
    Allocate { config: PathBuf },
    /// Print the mixing matrix spectrum and theorem round counts.
    Mixinfo { config: PathBuf },
    /// Measure chain progress on the hard instance below the sample threshold.
    LowerboundDemo {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        eps: f64,
        /// Comma-separated noise levels, one per node (default: all 1).
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1.0)]
        smoothness: f64,
        /// Initial gap; derived from --min-chain when absent.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 32)]
        min_chain: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_ENV}={raw:?} is not a thread count"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("thread pool")?;
    Ok(())
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig::load(path)?)
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::Run { config } => {
            let cfg = load(&config)?;
            for f in run_command(&cfg, exec)? {
                println!("{}", f.display());
            }
        }
        Command::Sweep { config, algos } => {
            let cfg = load(&config)?;
            let kinds = algos
                .iter()
                .map(|a| {
                    AlgorithmKind::parse(a.trim())
                        .ok_or_else(|| anyhow!("config: unknown algorithm {a:?}"))
                })
                .collect::<Result<Vec<_>>>()?;
            for (kind, agg) in sweep_command(&cfg, &kinds, exec)? {
                let last = agg.points.last().map_or(f64::NAN, |p| p.grad_norm_sq.0);
                println!(
                    "{kind}: {} runs, final mean grad_norm_sq {last:.6e} -> {}",
                    agg.runs,
                    cfg.output.join(format!("aggregate-{kind}.csv")).display()
                );
            }
        }
        Command::Allocate { config } => print!("{}", allocation_table(&load(&config)?)?),
        Command::Mixinfo { config } => print!("{}", mix_info(&load(&config)?)?),
        Command::LowerboundDemo {
            m,
            eps,
            sigmas,
            smoothness,
            delta,
            min_chain,
            trials,
            seed,
        } => {
            let sigmas = sigmas.unwrap_or_else(|| vec![1.0; m]);
            if sigmas.len() != m {
                bail!(
                    "config: --sigmas has {} values but --m is {m}",
                    sigmas.len()
                );
            }
            let params = DemoParams {
                smoothness,
                delta,
                min_chain,
                trials,
                seed,
                ..DemoParams::new(eps, sigmas)
            };
            print!("{}", lowerbound_demo(&params, exec)?.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
