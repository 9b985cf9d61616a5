//! Episodic tasks behind one interface: the multiplexer and scalar
//! regression bandits plus three classic-control problems transcribed from
//! the public Gym sources.

pub mod acrobot;
pub mod cartpole;
pub mod mountaincar;
pub mod multiplexer;
pub mod regression;

pub use acrobot::Acrobot;
pub use cartpole::CartPole;
pub use mountaincar::MountainCarContinuous;
pub use multiplexer::Multiplexer;
pub use regression::{RegressionTeacher, ScalarRegression};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Action;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ActionKind {
    Discrete(usize),
    Continuous { dim: usize, low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub action_kind: ActionKind,
    pub max_steps: usize,
    /// Bound applied to rewards by learners; recorded returns stay raw.
    pub reward_clip: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next_obs: Array1<f64>,
    pub reward: f64,
    /// A true terminal state: nothing follows it.
    pub terminal: bool,
    /// The step limit was hit; the state itself is not terminal.
    pub truncated: bool,
}

impl Transition {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment: Send {
    fn spec(&self) -> EnvSpec;
    /// Starts an episode whose randomness is fully determined by `seed`.
    fn reset(&mut self, seed: u64) -> Array1<f64>;
    fn step(&mut self, action: &Action) -> Result<Transition>;
    /// Supervised target of the current observation, for tasks that have one.
    fn target(&self) -> Option<f64> {
        None
    }
    /// `(position, velocity)` for tasks whose state has them.
    fn position_velocity(&self) -> Option<(f64, f64)> {
        None
    }
}

/// Appends a constant 1 to every observation so the first layer of a
/// bias-free network gets an offset weight.
pub struct ConstantFeature {
    inner: Box<dyn Environment>,
}

impl ConstantFeature {
    pub fn new(inner: Box<dyn Environment>) -> Self {
        Self { inner }
    }
}

fn with_one(obs: Array1<f64>) -> Array1<f64> {
    let mut v = obs.to_vec();
    v.push(1.0);
    Array1::from(v)
}

impl Environment for ConstantFeature {
    fn spec(&self) -> EnvSpec {
        let mut s = self.inner.spec();
        s.obs_dim += 1;
        s
    }
    fn reset(&mut self, seed: u64) -> Array1<f64> {
        with_one(self.inner.reset(seed))
    }
    fn step(&mut self, action: &Action) -> Result<Transition> {
        let mut t = self.inner.step(action)?;
        t.next_obs = with_one(t.next_obs);
        Ok(t)
    }
    fn target(&self) -> Option<f64> {
        self.inner.target()
    }
    fn position_velocity(&self) -> Option<(f64, f64)> {
        self.inner.position_velocity()
    }
}

/// Step bookkeeping shared by every task.
#[derive(Debug, Clone, Default)]
pub(crate) struct EpisodeClock {
    steps: usize,
    active: bool,
}

impl EpisodeClock {
    pub(crate) fn start(&mut self) {
        self.steps = 0;
        self.active = true;
    }

    pub(crate) fn check(&self, name: &str) -> Result<()> {
        if self.active {
            Ok(())
        } else {
            Err(Error::EnvUsage(format!("{name}: step called without an active episode")))
        }
    }

    /// Counts a step and returns whether the step limit is now reached.
    pub(crate) fn tick(&mut self, terminal: bool, max_steps: usize) -> bool {
        self.steps += 1;
        let truncated = !terminal && self.steps >= max_steps;
        if terminal || truncated {
            self.active = false;
        }
        truncated
    }
}

pub(crate) fn discrete_action(action: &Action, n: usize, name: &str) -> Result<usize> {
    match action {
        Action::Discrete(a) if *a < n => Ok(*a),
        _ => Err(Error::EnvUsage(format!("{name}: expected a discrete action below {n}, got {action:?}"))),
    }
}

pub(crate) fn scalar_action(action: &Action, name: &str) -> Result<f64> {
    match action {
        Action::Continuous(a) if a.len() == 1 && a[0].is_finite() => Ok(a[0]),
        _ => Err(Error::EnvUsage(format!("{name}: expected one finite real action, got {action:?}"))),
    }
}

/// Builds a task by name: `multiplexer`, `regression`, `cartpole`,
/// `acrobot` or `mountaincar`.
pub fn make_env(name: &str, multiplexer_k: usize, regression_dim: usize, teacher_seed: u64) -> Result<Box<dyn Environment>> {
    Ok(match name {
        "multiplexer" => Box::new(Multiplexer::new(multiplexer_k)?),
        "regression" => Box::new(ScalarRegression::new(regression_dim, teacher_seed)?),
        "cartpole" => Box::new(CartPole::new()),
        "acrobot" => Box::new(Acrobot::new()),
        "mountaincar" => Box::new(MountainCarContinuous::new()),
        other => return Err(Error::Config(format!("unknown environment `{other}`"))),
    })
}
