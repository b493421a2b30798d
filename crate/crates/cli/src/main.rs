use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use e2net::harness::{self, report, ExperimentConfig, Suite};
use e2net::scer::RehearsalFrequency;
use e2net::schedule::build_schedule;
use e2net::trainer::Method;

/// Continual learning with expanding subnets, distillation and constrained replay.
#[derive(Parser)]
#[command(name = "e2net", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// e2net, sgd, er or derpp.
        #[arg(long)]
        method: Option<Method>,
        /// Replay buffer capacity.
        #[arg(long)]
        buffer: Option<usize>,
        /// Rehearsal frequency, `1` or `1/m`.
        #[arg(long)]
        rf: Option<RehearsalFrequency>,
        /// Comma-separated seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in verification suite.
    Verify {
        /// schedule, scer, gradients, cns, equivalence or all.
        #[arg(long, default_value = "all")]
        suite: Suite,
    },
    /// Print the expansion schedule as CSV.
    Schedule {
        #[arg(long)]
        tasks: usize,
        #[arg(long)]
        groups: usize,
    },
    /// Compare every run summary found under a directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("E2NET_LOG", "info")).init();
    match execute(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(command: Command) -> Result<bool> {
    match command {
        Command::Run {
            config,
            method,
            buffer,
            rf,
            seeds,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            if let Some(m) = method {
                cfg.train.method = m;
            }
            if let Some(b) = buffer {
                cfg.scer.capacity = b;
            }
            if let Some(f) = rf {
                cfg.scer.rehearsal_frequency = f;
            }
            if let Some(s) = seeds {
                cfg.experiment.seeds = s;
            }
            if let Some(o) = out {
                cfg.experiment.out_dir = o;
            }
            cfg.validate().context("invalid configuration")?;
            log::info!(
                "running {} over {} seed(s) into {}",
                cfg.train.method,
                cfg.experiment.seeds.len(),
                cfg.experiment.out_dir.display()
            );
            let summary = harness::run(&cfg)?;
            print!("{}", harness::render_table(std::slice::from_ref(&summary)));
            Ok(true)
        }
        Command::Verify { suite } => {
            let reports = harness::verify(suite)?;
            for r in &reports {
                print!("{r}");
            }
            Ok(reports.iter().all(|r| r.passed))
        }
        Command::Schedule { tasks, groups } => {
            print!("{}", build_schedule(tasks, groups)?.to_csv());
            Ok(true)
        }
        Command::Report { dir } => {
            let reports = report::load_reports(&dir)?;
            anyhow::ensure!(
                !reports.is_empty(),
                "no summary.json under {}",
                dir.display()
            );
            print!("{}", harness::render_table(&reports));
            Ok(true)
        }
    }
}
