//! Experiment configuration: flat `key=value` text with dotted keys, layered
//! over per-task presets.
//!
//! ```text
//! # CartPole, MAP propagation actor-critic
//! env=cartpole
//! algo=mapprop_ac
//! episodes=1000
//! seeds=0..9
//! actor.alpha=1e-2,1e-5,1e-6
//! critic.lambda=0.95
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::env::{make_env, ActionKind, ConstantFeature, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::learners::LearnerConfig;
use crate::optim::{Anneal, Optimizer};
use crate::settle::{SettleConfig, UpdateOrder};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvName {
    Multiplexer,
    Regression,
    CartPole,
    Acrobot,
    MountainCar,
}

impl EnvName {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvName::Multiplexer => "multiplexer",
            EnvName::Regression => "regression",
            EnvName::CartPole => "cartpole",
            EnvName::Acrobot => "acrobot",
            EnvName::MountainCar => "mountaincar",
        }
    }

    /// One-step tasks are trained in batches; an "episode" is a batch.
    pub fn single_step(self) -> bool {
        matches!(self, EnvName::Multiplexer | EnvName::Regression)
    }
}

impl FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "multiplexer" => EnvName::Multiplexer,
            "regression" => EnvName::Regression,
            "cartpole" => EnvName::CartPole,
            "acrobot" => EnvName::Acrobot,
            "mountaincar" => EnvName::MountainCar,
            other => return Err(Error::Config(format!("unknown env `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    MappropMc,
    MappropAc,
    Reinforce,
    ReinforceThomas,
    BackpropAc,
    MappropSl,
    BackpropSl,
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Algo::MappropMc => "mapprop_mc",
            Algo::MappropAc => "mapprop_ac",
            Algo::Reinforce => "reinforce",
            Algo::ReinforceThomas => "reinforce_thomas",
            Algo::BackpropAc => "backprop_ac",
            Algo::MappropSl => "mapprop_sl",
            Algo::BackpropSl => "backprop_sl",
        }
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mapprop_mc" => Algo::MappropMc,
            "mapprop_ac" => Algo::MappropAc,
            "reinforce" => Algo::Reinforce,
            "reinforce_thomas" => Algo::ReinforceThomas,
            "backprop_ac" => Algo::BackpropAc,
            "mapprop_sl" => Algo::MappropSl,
            "backprop_sl" => Algo::BackpropSl,
            other => return Err(Error::Config(format!("unknown algo `{other}`"))),
        })
    }
}

/// Architecture and learning rule of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    /// Variance of each hidden layer, then of the output when it is Gaussian.
    pub sigma_sq: Vec<f64>,
    /// Softmax temperature of a discrete output.
    pub temperature: f64,
    pub learner: LearnerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvName,
    pub multiplexer_k: usize,
    pub regression_dim: usize,
    pub teacher_seed: u64,
    /// Append a constant 1 to observations (a first-layer bias). On by
    /// default for CartPole only.
    pub input_bias: bool,
    pub algo: Algo,
    pub actor: NetConfig,
    pub critic: NetConfig,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub workers: usize,
    /// 1-based episodes whose state trajectories are logged.
    pub trajectories: Vec<usize>,
    /// Running-average window.
    pub window: usize,
}

fn learner(alphas: [f64; 3], lambda: f64, batch_size: usize) -> LearnerConfig {
    LearnerConfig {
        alphas: alphas.to_vec(),
        lambda,
        gamma: 0.98,
        optimizer: Optimizer::default(),
        settle: SettleConfig::default(),
        anneal: Anneal::None,
        reward_clip: None,
        batch_size,
        explore_mask_prob: None,
        entropy_coef: 0.0,
    }
}

fn net(sigma_sq: &[f64], temperature: f64, learner: LearnerConfig) -> NetConfig {
    NetConfig {
        hidden: vec![64, 32],
        sigma_sq: sigma_sq.to_vec(),
        temperature,
        learner,
    }
}

impl ExperimentConfig {
    /// Published hyperparameters of each task; baselines reuse them.
    pub fn preset(env: EnvName, algo: Algo) -> Self {
        let linear = |end_step| Anneal::Linear {
            end_step,
            final_fraction: 0.1,
        };
        let (mut actor, mut critic, episodes) = match env {
            EnvName::Multiplexer => {
                let a = net(&[0.3, 1.0], 1.0, learner([4e-2, 4e-5, 4e-6], 0.0, 128));
                (a.clone(), a, 500)
            }
            EnvName::Regression => {
                let a = net(&[0.0075, 0.025, 0.025], 1.0, learner([6e-2, 6e-5, 6e-6], 0.0, 128));
                (a.clone(), a, 500)
            }
            EnvName::CartPole => {
                let mut a = net(&[0.03, 0.1], 2.0, learner([1e-2, 1e-5, 1e-6], 0.95, 1));
                let mut c = net(&[0.03, 0.1, 0.1], 1.0, learner([2e-2, 2e-5, 2e-6], 0.95, 1));
                a.learner.anneal = linear(50_000);
                c.learner.anneal = linear(50_000);
                (a, c, 1000)
            }
            EnvName::Acrobot => {
                let mut a = net(&[0.03, 0.1], 4.0, learner([1e-2, 1e-5, 1e-6], 0.97, 1));
                let mut c = net(&[0.06, 0.2, 0.2], 1.0, learner([2e-2, 2e-5, 2e-6], 0.97, 1));
                a.learner.anneal = linear(100_000);
                c.learner.anneal = linear(100_000);
                (a, c, 1000)
            }
            EnvName::MountainCar => {
                let mut a = net(&[0.03, 0.1, 0.5], 1.0, learner([4e-3, 4e-6, 4e-7], 0.97, 1));
                let mut c = net(&[0.003, 0.01, 0.05], 1.0, learner([1e-2, 1e-5, 1e-6], 0.97, 1));
                a.learner.reward_clip = Some(crate::env::mountaincar::REWARD_CLIP);
                c.learner.reward_clip = a.learner.reward_clip;
                (a, c, 300)
            }
        };
        match algo {
            Algo::Reinforce => actor.learner.settle.n_steps = 0,
            Algo::ReinforceThomas => {
                actor.learner.settle.n_steps = 0;
                actor.learner.explore_mask_prob = Some(0.5);
            }
            _ => {}
        }
        if !matches!(algo, Algo::MappropAc) {
            critic.learner.settle.n_steps = 0;
        }
        Self {
            env,
            multiplexer_k: 5,
            regression_dim: 8,
            teacher_seed: 0,
            input_bias: env == EnvName::CartPole,
            algo,
            actor,
            critic,
            episodes,
            seeds: (0..10).collect(),
            output_dir: PathBuf::from("runs"),
            workers: 1,
            trajectories: Vec::new(),
            window: if env.single_step() { 10 } else { 100 },
        }
    }

    /// Parses config text: `env` and `algo` select the preset, every other
    /// key overrides it.
    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_kv(text)?;
        let get = |k: &str| kv.get(k).ok_or_else(|| Error::Config(format!("missing required key `{k}`")));
        let env: EnvName = get("env")?.parse()?;
        let algo: Algo = get("algo")?.parse()?;
        let mut cfg = Self::preset(env, algo);
        for (k, v) in &kv {
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("`{key}={value}`: {e}"));
        match key {
            "env" | "algo" => {}
            "env.k" => self.multiplexer_k = value.parse().map_err(|e| bad(&e))?,
            "env.input_dim" => self.regression_dim = value.parse().map_err(|e| bad(&e))?,
            "env.teacher_seed" => self.teacher_seed = value.parse().map_err(|e| bad(&e))?,
            "input_bias" => self.input_bias = value.parse().map_err(|e| bad(&e))?,
            "episodes" => self.episodes = value.parse().map_err(|e| bad(&e))?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "out" | "output_dir" => self.output_dir = PathBuf::from(value),
            "workers" => self.workers = value.parse().map_err(|e| bad(&e))?,
            "trajectories" => self.trajectories = parse_list(value).map_err(|e| bad(&e))?,
            "window" => self.window = value.parse().map_err(|e| bad(&e))?,
            _ => {
                let (section, field) = key
                    .split_once('.')
                    .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
                let net = match section {
                    "actor" => &mut self.actor,
                    "critic" => &mut self.critic,
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                };
                apply_net(net, field, value).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("`{key}`: {m}")),
                    other => other,
                })?;
            }
        }
        Ok(())
    }

    /// The task as the learners see it.
    pub fn make_env(&self) -> Result<Box<dyn Environment>> {
        let env = make_env(self.env.as_str(), self.multiplexer_k, self.regression_dim, self.teacher_seed)?;
        Ok(if self.input_bias {
            Box::new(ConstantFeature::new(env))
        } else {
            env
        })
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        Ok(self.make_env()?.spec())
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.env_spec()?;
        let single = self.env.single_step();
        match self.algo {
            Algo::MappropSl | Algo::BackpropSl if self.env != EnvName::Regression => {
                return Err(Error::Config(format!(
                    "{} needs a task with a supervised target",
                    self.algo.as_str()
                )))
            }
            Algo::MappropAc if single => {
                return Err(Error::Config("mapprop_ac needs a multi-step task".into()));
            }
            _ => {}
        }
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.workers == 0 || self.window == 0 {
            return Err(Error::Config("workers and window must be positive".into()));
        }
        let gaussian_out = matches!(spec.action_kind, ActionKind::Continuous { .. });
        validate_net(&self.actor, gaussian_out, "actor")?;
        if self.uses_critic() {
            validate_net(&self.critic, true, "critic")?;
        }
        Ok(())
    }

    /// Whether the run trains a separate critic network.
    pub fn uses_critic(&self) -> bool {
        !self.env.single_step() && matches!(self.algo, Algo::MappropAc | Algo::Reinforce | Algo::ReinforceThomas | Algo::BackpropAc)
    }

    /// Resolved configuration in the input format, written next to results.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let join = |xs: &[f64]| xs.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "env={}", self.env.as_str());
        let _ = writeln!(s, "algo={}", self.algo.as_str());
        let _ = writeln!(s, "env.k={}", self.multiplexer_k);
        let _ = writeln!(s, "env.input_dim={}", self.regression_dim);
        let _ = writeln!(s, "env.teacher_seed={}", self.teacher_seed);
        let _ = writeln!(s, "input_bias={}", self.input_bias);
        let _ = writeln!(s, "episodes={}", self.episodes);
        let seeds: Vec<String> = self.seeds.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "seeds={}", seeds.join(","));
        let _ = writeln!(s, "window={}", self.window);
        for (name, n) in [("actor", &self.actor), ("critic", &self.critic)] {
            let l = &n.learner;
            let hidden: Vec<String> = n.hidden.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "{name}.hidden={}", hidden.join(","));
            let _ = writeln!(s, "{name}.sigma_sq={}", join(&n.sigma_sq));
            let _ = writeln!(s, "{name}.temperature={:e}", n.temperature);
            let _ = writeln!(s, "{name}.alpha={}", join(&l.alphas));
            let _ = writeln!(s, "{name}.lambda={:e}", l.lambda);
            let _ = writeln!(s, "{name}.gamma={:e}", l.gamma);
            let _ = writeln!(s, "{name}.settle_steps={}", l.settle.n_steps);
            let _ = writeln!(s, "{name}.settle_factor={:e}", l.settle.alpha_h_factor);
            let order = match l.settle.order {
                UpdateOrder::Jacobi => "jacobi",
                UpdateOrder::GaussSeidel => "gauss_seidel",
            };
            let _ = writeln!(s, "{name}.settle_order={order}");
            match l.optimizer {
                Optimizer::Adam { beta1, beta2, eps } => {
                    let _ = writeln!(s, "{name}.optimizer=adam");
                    let _ = writeln!(s, "{name}.adam_beta1={beta1:e}");
                    let _ = writeln!(s, "{name}.adam_beta2={beta2:e}");
                    let _ = writeln!(s, "{name}.adam_eps={eps:e}");
                }
                Optimizer::Sgd => {
                    let _ = writeln!(s, "{name}.optimizer=sgd");
                }
            }
            match l.anneal {
                Anneal::None => {
                    let _ = writeln!(s, "{name}.anneal=none");
                }
                Anneal::Linear { end_step, final_fraction } => {
                    let _ = writeln!(s, "{name}.anneal_end={end_step}");
                    let _ = writeln!(s, "{name}.anneal_fraction={final_fraction:e}");
                }
            }
            if let Some(c) = l.reward_clip {
                let _ = writeln!(s, "{name}.reward_clip={c:e}");
            }
            let _ = writeln!(s, "{name}.batch_size={}", l.batch_size);
            if let Some(p) = l.explore_mask_prob {
                let _ = writeln!(s, "{name}.explore_mask_prob={p:e}");
            }
            let _ = writeln!(s, "{name}.entropy_coef={:e}", l.entropy_coef);
        }
        s
    }
}

fn validate_net(net: &NetConfig, gaussian_out: bool, name: &str) -> Result<()> {
    let want = net.hidden.len() + usize::from(gaussian_out);
    if net.sigma_sq.len() != want {
        return Err(Error::Config(format!(
            "{name}.sigma_sq needs {want} entries, got {}",
            net.sigma_sq.len()
        )));
    }
    if net.sigma_sq.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Config(format!("{name}.sigma_sq must be positive")));
    }
    if net.hidden.contains(&0) {
        return Err(Error::Config(format!("{name}.hidden sizes must be positive")));
    }
    if !(net.temperature > 0.0 && net.temperature.is_finite()) {
        return Err(Error::Config(format!("{name}.temperature must be positive")));
    }
    net.learner.validate(net.hidden.len() + 1)
}

fn apply_net(net: &mut NetConfig, field: &str, value: &str) -> Result<()> {
    let f = |v: &str| -> Result<f64> { v.trim().parse().map_err(|e| Error::Config(format!("{e}"))) };
    let l = &mut net.learner;
    match field {
        "hidden" => net.hidden = parse_list::<usize>(value).map_err(|e| Error::Config(e.to_string()))?,
        "sigma_sq" => net.sigma_sq = value.split(',').map(f).collect::<Result<_>>()?,
        "temperature" => net.temperature = f(value)?,
        "alpha" => l.alphas = value.split(',').map(f).collect::<Result<_>>()?,
        "lambda" => l.lambda = f(value)?,
        "gamma" => l.gamma = f(value)?,
        "settle_steps" => l.settle.n_steps = value.parse().map_err(|e| Error::Config(format!("{e}")))?,
        "settle_factor" => l.settle.alpha_h_factor = f(value)?,
        "settle_order" => {
            l.settle.order = match value {
                "jacobi" => UpdateOrder::Jacobi,
                "gauss_seidel" => UpdateOrder::GaussSeidel,
                _ => return Err(Error::Config("expected jacobi or gauss_seidel".into())),
            }
        }
        "optimizer" => {
            l.optimizer = match value {
                "adam" => Optimizer::default(),
                "sgd" => Optimizer::Sgd,
                _ => return Err(Error::Config("expected adam or sgd".into())),
            }
        }
        "adam_beta1" | "adam_beta2" | "adam_eps" => {
            let (mut b1, mut b2, mut eps) = match l.optimizer {
                Optimizer::Adam { beta1, beta2, eps } => (beta1, beta2, eps),
                Optimizer::Sgd => return Err(Error::Config("Adam settings need optimizer=adam".into())),
            };
            let x = f(value)?;
            match field {
                "adam_beta1" => b1 = x,
                "adam_beta2" => b2 = x,
                _ => eps = x,
            }
            l.optimizer = Optimizer::Adam {
                beta1: b1,
                beta2: b2,
                eps,
            };
        }
        "anneal" => match value {
            "none" => l.anneal = Anneal::None,
            _ => return Err(Error::Config("use anneal=none or anneal_end/anneal_fraction".into())),
        },
        "anneal_end" | "anneal_fraction" => {
            let (mut end, mut frac) = match l.anneal {
                Anneal::Linear { end_step, final_fraction } => (end_step, final_fraction),
                Anneal::None => (1, 1.0),
            };
            if field == "anneal_end" {
                end = value.parse().map_err(|e| Error::Config(format!("{e}")))?;
            } else {
                frac = f(value)?;
            }
            l.anneal = Anneal::Linear {
                end_step: end,
                final_fraction: frac,
            };
        }
        "reward_clip" => l.reward_clip = if value == "none" { None } else { Some(f(value)?) },
        "batch_size" => l.batch_size = value.parse().map_err(|e| Error::Config(format!("{e}")))?,
        "explore_mask_prob" => l.explore_mask_prob = if value == "none" { None } else { Some(f(value)?) },
        "entropy_coef" => l.entropy_coef = f(value)?,
        _ => {
            // `alpha1`, `alpha2`, ... set one layer's step size.
            if let Some(idx) = field.strip_prefix("alpha").and_then(|n| n.parse::<usize>().ok()) {
                if idx == 0 || idx > l.alphas.len() {
                    return Err(Error::Config(format!("layer {idx} out of range")));
                }
                l.alphas[idx - 1] = f(value)?;
            } else {
                return Err(Error::Config(format!("unknown field `{field}`")));
            }
        }
    }
    Ok(())
}

/// `key=value` lines; `#` starts a comment, blank lines are skipped and a
/// repeated key is an error.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
        }
    }
    Ok(out)
}

fn parse_list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, T::Err> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

/// `0..9` (inclusive) or a comma list.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("bad seed list `{value}`"));
    if let Some((a, b)) = value.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        Ok((a..=b).collect())
    } else {
        let seeds: Vec<u64> = parse_list(value).map_err(|_| bad())?;
        if seeds.is_empty() {
            return Err(bad());
        }
        Ok(seeds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_follow_published_tables() {
        let c = ExperimentConfig::preset(EnvName::CartPole, Algo::MappropAc);
        assert_eq!(c.actor.learner.alphas, vec![1e-2, 1e-5, 1e-6]);
        assert_eq!(c.critic.sigma_sq, vec![0.03, 0.1, 0.1]);
        assert_eq!(c.actor.temperature, 2.0);
        assert_eq!(
            c.actor.learner.anneal,
            Anneal::Linear {
                end_step: 50_000,
                final_fraction: 0.1
            }
        );
        let m = ExperimentConfig::preset(EnvName::Multiplexer, Algo::MappropMc);
        assert_eq!(m.actor.learner.batch_size, 128);
        assert_eq!(m.actor.learner.settle.n_steps, 20);
        assert_eq!(m.window, 10);
        let r = ExperimentConfig::preset(EnvName::Acrobot, Algo::Reinforce);
        assert_eq!(r.actor.learner.settle.n_steps, 0);
        assert_eq!(r.window, 100);
        let t = ExperimentConfig::preset(EnvName::MountainCar, Algo::ReinforceThomas);
        assert_eq!(t.actor.learner.explore_mask_prob, Some(0.5));
        assert_eq!(t.actor.learner.reward_clip, Some(5.0));
    }

    #[test]
    fn overrides_and_round_trip() {
        let text = "env=cartpole\nalgo=mapprop_ac\n# comment\nactor.alpha1=3e-2\nseeds=2..4\nepisodes = 7\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.actor.learner.alphas[0], 3e-2);
        assert_eq!(c.seeds, vec![2, 3, 4]);
        assert_eq!(c.episodes, 7);
        let again = ExperimentConfig::parse(&c.to_kv()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::parse("env=cartpole\nalgo=mapprop_sl\n").is_err());
        assert!(ExperimentConfig::parse("env=multiplexer\nalgo=mapprop_ac\n").is_err());
        assert!(ExperimentConfig::parse("env=cartpole\n").is_err());
        assert!(ExperimentConfig::parse("env=cartpole\nalgo=mapprop_ac\nactor.bogus=1\n").is_err());
        assert!(ExperimentConfig::parse("env=cartpole\nalgo=mapprop_ac\nactor.sigma_sq=0.1\n").is_err());
        assert!(ExperimentConfig::parse("env=cartpole\nalgo=mapprop_ac\nepisodes=1\nepisodes=2\n").is_err());
        assert!(parse_seeds("5..1").is_err());
    }
}
