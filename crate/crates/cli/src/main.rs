use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mapprop::harness::{self, config::parse_seeds, ExperimentConfig, SEED_ENV_VAR};
use mapprop::{verify, Error};

#[derive(Parser, Debug)]
#[command(name = "mapprop", version, about = "Train teams of stochastic units with MAP propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Inclusive range `a..b` or comma list; overrides the config and MAPPROP_SEED.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// 1-based episodes whose state trajectories are logged, e.g. `1,50,100`.
        #[arg(long)]
        trajectories: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Numerical checks of the gradient identities; prints a JSON report.
    Verify {
        #[arg(long, default_value = "all")]
        check: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Running-average curves across the seed logs of a finished run.
    PlotData {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 100)]
        window: usize,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const CONFIG_ERROR: u8 = 1;
const RUN_FAILURE: u8 = 2;

fn fail(code: u8, e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(code)
}

fn code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) => CONFIG_ERROR,
        _ => RUN_FAILURE,
    }
}

fn load_config(
    path: &PathBuf,
    seeds: Option<String>,
    out: Option<PathBuf>,
    trajectories: Option<String>,
    workers: Option<usize>,
) -> mapprop::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Ok(s) = std::env::var(SEED_ENV_VAR) {
        let seed = s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV_VAR} must be an unsigned integer, got `{s}`")))?;
        cfg.seeds = vec![seed];
    }
    if let Some(s) = seeds {
        cfg.seeds = parse_seeds(&s)?;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    if let Some(t) = trajectories {
        cfg.apply("trajectories", &t)?;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            config,
            seeds,
            out,
            trajectories,
            workers,
        } => {
            let cfg = match load_config(&config, seeds, out, trajectories, workers) {
                Ok(c) => c,
                Err(e) => return fail(code_for(&e), e),
            };
            let records = match harness::run_experiment(&cfg) {
                Ok(r) => r,
                Err(e) => return fail(code_for(&e), e),
            };
            let s = harness::summarize(&records);
            println!(
                "{} {}: {} seeds, mean average return {:.4} (std {:.4}), {} failed; results in {}",
                cfg.env.as_str(),
                cfg.algo.as_str(),
                records.len(),
                s.mean,
                s.std,
                s.failures,
                cfg.output_dir.display()
            );
            if s.failures > 0 {
                for r in &records {
                    if let Some((ep, msg)) = &r.failure {
                        eprintln!("seed {} failed at episode {ep}: {msg}", r.seed);
                    }
                }
                return ExitCode::from(RUN_FAILURE);
            }
            ExitCode::SUCCESS
        }
        Command::Verify { check, seed } => {
            let reports = match verify::run_checks(&check, seed) {
                Ok(r) => r,
                Err(e) => return fail(code_for(&e), e),
            };
            match serde_json::to_string_pretty(&reports) {
                Ok(s) => println!("{s}"),
                Err(e) => return fail(RUN_FAILURE, e),
            }
            if reports.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(RUN_FAILURE)
            }
        }
        Command::PlotData { input, window, out } => {
            let csv = match harness::plot_data_from_dir(&input, window) {
                Ok(c) => c,
                Err(e) => return fail(code_for(&e), e),
            };
            match out {
                Some(p) => {
                    if let Err(e) = std::fs::write(&p, csv) {
                        return fail(RUN_FAILURE, e);
                    }
                }
                None => print!("{csv}"),
            }
            ExitCode::SUCCESS
        }
    }
}
