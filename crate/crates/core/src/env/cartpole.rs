use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{discrete_action, ActionKind, EnvSpec, Environment, EpisodeClock, Transition};
use crate::error::Result;
use crate::network::Action;

pub const GRAVITY: f64 = 9.8;
pub const MASS_CART: f64 = 1.0;
pub const MASS_POLE: f64 = 0.1;
/// Half the pole length.
pub const LENGTH: f64 = 0.5;
pub const FORCE_MAG: f64 = 10.0;
pub const TAU: f64 = 0.02;
pub const THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
pub const X_LIMIT: f64 = 2.4;
pub const MAX_STEPS: usize = 500;

/// Pole balancing on a cart; state `[x, x_dot, theta, theta_dot]`, actions
/// push left (0) or right (1), +1 reward per step, explicit Euler.
#[derive(Debug, Clone, Default)]
pub struct CartPole {
    state: [f64; 4],
    clock: EpisodeClock,
}

impl CartPole {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    /// Starts an episode from an explicit state.
    pub fn set_state(&mut self, state: [f64; 4]) -> Array1<f64> {
        self.state = state;
        self.clock.start();
        self.obs()
    }

    fn obs(&self) -> Array1<f64> {
        Array1::from(self.state.to_vec())
    }
}

impl Environment for CartPole {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: 4,
            action_kind: ActionKind::Discrete(2),
            max_steps: MAX_STEPS,
            reward_clip: None,
        }
    }

    fn reset(&mut self, seed: u64) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = std::array::from_fn(|_| rng.random_range(-0.05..0.05));
        self.set_state(s)
    }

    fn step(&mut self, action: &Action) -> Result<Transition> {
        self.clock.check("cartpole")?;
        let a = discrete_action(action, 2, "cartpole")?;
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if a == 1 { FORCE_MAG } else { -FORCE_MAG };
        let (sin, cos) = theta.sin_cos();
        let total_mass = MASS_CART + MASS_POLE;
        let pole_mass_length = MASS_POLE * LENGTH;
        let temp = (force + pole_mass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc =
            (GRAVITY * sin - cos * temp) / (LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / total_mass));
        let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
        self.state = [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ];
        let terminal = self.state[0].abs() > X_LIMIT || self.state[2].abs() > THETA_LIMIT;
        let truncated = self.clock.tick(terminal, MAX_STEPS);
        Ok(Transition {
            next_obs: self.obs(),
            reward: 1.0,
            terminal,
            truncated,
        })
    }

    fn position_velocity(&self) -> Option<(f64, f64)> {
        Some((self.state[0], self.state[1]))
    }
}
