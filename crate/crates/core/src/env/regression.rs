use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{scalar_action, ActionKind, EnvSpec, Environment, EpisodeClock, Transition};
use crate::error::{Error, Result};
use crate::network::Action;

pub const TEACHER_HIDDEN: usize = 16;

/// Fixed random target network: 16 tanh units, no biases, linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTeacher {
    pub w1: Array2<f64>,
    pub w2: Array1<f64>,
}

impl RegressionTeacher {
    pub fn new(input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s1 = 1.0 / (input_dim as f64).sqrt();
        let w1 = Array2::from_shape_fn((TEACHER_HIDDEN, input_dim), |_| s1 * rng.sample::<f64, _>(StandardNormal));
        let s2 = 1.0 / (TEACHER_HIDDEN as f64).sqrt();
        let w2 = Array1::from_shape_fn(TEACHER_HIDDEN, |_| s2 * rng.sample::<f64, _>(StandardNormal));
        Self { w1, w2 }
    }

    pub fn output(&self, x: &Array1<f64>) -> f64 {
        self.w2.dot(&self.w1.dot(x).mapv(f64::tanh))
    }
}

/// One-step task: the observation is standard normal, the action is a real
/// guess and the reward is minus its squared error against the teacher.
#[derive(Debug, Clone)]
pub struct ScalarRegression {
    teacher: RegressionTeacher,
    obs: Array1<f64>,
    target: f64,
    clock: EpisodeClock,
}

impl ScalarRegression {
    pub fn new(input_dim: usize, teacher_seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("regression input_dim must be positive".into()));
        }
        Ok(Self {
            teacher: RegressionTeacher::new(input_dim, teacher_seed),
            obs: Array1::zeros(input_dim),
            target: 0.0,
            clock: EpisodeClock::default(),
        })
    }

    pub fn teacher(&self) -> &RegressionTeacher {
        &self.teacher
    }
}

impl Environment for ScalarRegression {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: self.obs.len(),
            action_kind: ActionKind::Continuous {
                dim: 1,
                low: f64::NEG_INFINITY,
                high: f64::INFINITY,
            },
            max_steps: 1,
            reward_clip: None,
        }
    }

    fn reset(&mut self, seed: u64) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.obs.mapv_inplace(|_| rng.sample(StandardNormal));
        self.target = self.teacher.output(&self.obs);
        self.clock.start();
        self.obs.clone()
    }

    fn step(&mut self, action: &Action) -> Result<Transition> {
        self.clock.check("regression")?;
        let a = scalar_action(action, "regression")?;
        self.clock.tick(true, 1);
        Ok(Transition {
            next_obs: self.obs.clone(),
            reward: -(a - self.target).powi(2),
            terminal: true,
            truncated: false,
        })
    }

    fn target(&self) -> Option<f64> {
        Some(self.target)
    }
}
