//! Experiment runner: seeds in parallel worker slots, per-episode CSV logs, a
//! cross-seed summary and plot-ready running averages.
//!
//! Output directory layout:
//!
//! | file | contents |
//! |---|---|
//! | `config.txt` | resolved configuration |
//! | `seed_<n>.csv` | `episode,return,steps,running_avg,terminal` |
//! | `summary.csv` | mean and sample std over seeds of the all-episode average return |
//! | `failures.csv` | seeds aborted by a numerical failure |
//! | `trajectories.csv` | `seed,episode,step,position,velocity,action`, when requested |
//! | `plot_data.csv` | `episode,mean_running_return,std_running_return` |

pub mod config;
mod runner;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
pub use config::{Algo, EnvName, ExperimentConfig, NetConfig};
pub use runner::run_seed;

/// Environment variable that replaces the configured seed list with one seed.
pub const SEED_ENV_VAR: &str = "MAPPROP_SEED";

/// One state visited during a logged episode, after the step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub episode: usize,
    pub step: usize,
    pub position: f64,
    pub velocity: f64,
    pub action: f64,
}

/// Everything recorded for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    /// Undiscounted return per episode; mean reward per batch on
    /// single-step tasks.
    pub returns: Vec<f64>,
    pub steps: Vec<usize>,
    /// Whether the episode ended in a terminal state rather than the step cap.
    pub terminal: Vec<bool>,
    pub running_avg: Vec<f64>,
    pub trajectories: Vec<TrajectoryRow>,
    /// `(episode, message)` when a numerical failure aborted the run.
    pub failure: Option<(usize, String)>,
}

impl RunRecord {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            returns: Vec::new(),
            steps: Vec::new(),
            terminal: Vec::new(),
            running_avg: Vec::new(),
            trajectories: Vec::new(),
            failure: None,
        }
    }

    pub(crate) fn push(&mut self, ret: f64, steps: usize, terminal: bool, window: usize) {
        self.returns.push(ret);
        self.steps.push(steps);
        self.terminal.push(terminal);
        let n = self.returns.len();
        let lo = n.saturating_sub(window);
        let avg = self.returns[lo..].iter().sum::<f64>() / (n - lo) as f64;
        self.running_avg.push(avg);
    }

    /// Mean return over every completed episode.
    pub fn average_return(&self) -> f64 {
        if self.returns.is_empty() {
            return f64::NAN;
        }
        self.returns.iter().sum::<f64>() / self.returns.len() as f64
    }
}

/// Running mean over the last `window` values; the first entries average
/// what is available.
pub fn running_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Cross-seed statistic of the all-episode average return.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub completed: usize,
    pub failures: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1); zero for one seed.
    pub std: f64,
}

pub fn summarize(records: &[RunRecord]) -> Summary {
    let avgs: Vec<f64> = records
        .iter()
        .filter(|r| r.failure.is_none())
        .map(RunRecord::average_return)
        .collect();
    let n = avgs.len();
    let mean = if n == 0 { f64::NAN } else { avgs.iter().sum::<f64>() / n as f64 };
    let std = if n < 2 {
        0.0
    } else {
        (avgs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Summary {
        completed: n,
        failures: records.len() - n,
        mean,
        std,
    }
}

/// Runs every seed, `cfg.workers` at a time. Records come back in seed order.
pub fn run_seeds(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect())
}

/// Runs the experiment and writes every output file into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let records = run_seeds(cfg)?;
    write_outputs(cfg, &records)?;
    Ok(records)
}

pub fn write_outputs(cfg: &ExperimentConfig, records: &[RunRecord]) -> Result<()> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), cfg.to_kv())?;
    for r in records {
        fs::write(dir.join(format!("seed_{}.csv", r.seed)), seed_csv(r))?;
    }
    let s = summarize(records);
    let mut summary = String::from("env,algo,episodes,seeds,completed,failures,mean_average_return,std_average_return\n");
    let _ = writeln!(
        summary,
        "{},{},{},{},{},{},{},{}",
        cfg.env.as_str(),
        cfg.algo.as_str(),
        cfg.episodes,
        records.len(),
        s.completed,
        s.failures,
        fmt_f64(s.mean),
        fmt_f64(s.std)
    );
    fs::write(dir.join("summary.csv"), summary)?;
    let mut failures = String::from("seed,episode,message\n");
    for r in records {
        if let Some((ep, msg)) = &r.failure {
            let _ = writeln!(failures, "{},{},\"{}\"", r.seed, ep, msg.replace('"', "'"));
        }
    }
    fs::write(dir.join("failures.csv"), failures)?;
    if !cfg.trajectories.is_empty() {
        let mut t = String::from("seed,episode,step,position,velocity,action\n");
        for r in records {
            for row in &r.trajectories {
                let _ = writeln!(
                    t,
                    "{},{},{},{},{},{}",
                    r.seed,
                    row.episode,
                    row.step,
                    fmt_f64(row.position),
                    fmt_f64(row.velocity),
                    fmt_f64(row.action)
                );
            }
        }
        fs::write(dir.join("trajectories.csv"), t)?;
    }
    let curves: Vec<Vec<f64>> = records.iter().map(|r| r.returns.clone()).collect();
    fs::write(dir.join("plot_data.csv"), plot_csv(&curves, cfg.window))?;
    Ok(())
}

fn seed_csv(r: &RunRecord) -> String {
    let mut s = String::from("episode,return,steps,running_avg,terminal\n");
    for i in 0..r.returns.len() {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            i + 1,
            fmt_f64(r.returns[i]),
            r.steps[i],
            fmt_f64(r.running_avg[i]),
            u8::from(r.terminal[i])
        );
    }
    s
}

/// Per-episode mean and population std across seeds of the running average.
/// Seeds that stopped early only contribute to the episodes they reached.
pub fn emit_plot_data(returns: &[Vec<f64>], window: usize) -> Vec<(usize, f64, f64)> {
    let curves: Vec<Vec<f64>> = returns.iter().map(|r| running_average(r, window)).collect();
    let len = curves.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            let vals: Vec<f64> = curves.iter().filter_map(|c| c.get(i).copied()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (i + 1, mean, var.sqrt())
        })
        .collect()
}

fn plot_csv(returns: &[Vec<f64>], window: usize) -> String {
    let mut s = String::from("episode,mean_running_return,std_running_return\n");
    for (ep, mean, std) in emit_plot_data(returns, window) {
        let _ = writeln!(s, "{ep},{},{}", fmt_f64(mean), fmt_f64(std));
    }
    s
}

/// Reads the `return` column of every `seed_<n>.csv` in `dir`, in seed order.
pub fn read_seed_returns(dir: &Path) -> Result<Vec<(u64, Vec<f64>)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path: PathBuf = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(seed) = name
            .strip_prefix("seed_")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse::<u64>().ok())
        else {
            continue;
        };
        let text = fs::read_to_string(&path)?;
        let mut returns = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            let field = line
                .split(',')
                .nth(1)
                .ok_or_else(|| Error::Config(format!("{name}:{}: missing return column", n + 1)))?;
            returns.push(
                field
                    .parse()
                    .map_err(|e| Error::Config(format!("{name}:{}: {e}", n + 1)))?,
            );
        }
        out.push((seed, returns));
    }
    if out.is_empty() {
        return Err(Error::Config(format!("no seed_<n>.csv files in {}", dir.display())));
    }
    out.sort_by_key(|(s, _)| *s);
    Ok(out)
}

/// Rebuilds `plot_data.csv` contents from the seed logs in `dir`.
pub fn plot_data_from_dir(dir: &Path, window: usize) -> Result<String> {
    if window == 0 {
        return Err(Error::Config("window must be positive".into()));
    }
    let returns: Vec<Vec<f64>> = read_seed_returns(dir)?.into_iter().map(|(_, r)| r).collect();
    Ok(plot_csv(&returns, window))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_average_uses_partial_windows() {
        let r = running_average(&[1.0, 2.0, 3.0, 4.0], 2);
        assert_eq!(r, vec![1.0, 1.5, 2.5, 3.5]);
    }

    #[test]
    fn record_running_average_matches_helper() {
        let mut rec = RunRecord::new(0);
        let vals = [3.0, -1.0, 4.0, 1.0, 5.0, 9.0, 2.0];
        for &v in &vals {
            rec.push(v, 1, true, 3);
        }
        assert_eq!(rec.running_avg, running_average(&vals, 3));
    }

    #[test]
    fn single_seed_plot_std_is_zero() {
        let rows = emit_plot_data(&[vec![1.0, 2.0, 3.0]], 10);
        assert!(rows.iter().all(|r| r.2 == 0.0));
        assert_eq!(rows[2].1, 2.0);
    }

    #[test]
    fn summary_is_mean_of_per_seed_averages() {
        let mut a = RunRecord::new(0);
        let mut b = RunRecord::new(1);
        for v in [1.0, 3.0] {
            a.push(v, 1, true, 10);
        }
        for v in [10.0, 20.0, 30.0] {
            b.push(v, 1, true, 10);
        }
        let s = summarize(&[a, b]);
        assert_eq!(s.mean, (2.0 + 20.0) / 2.0);
        assert!((s.std - (2.0f64 * 81.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 459.7, f64::MAX] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}
