use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{scalar_action, ActionKind, EnvSpec, Environment, EpisodeClock, Transition};
use crate::error::Result;
use crate::network::Action;

pub const MIN_POSITION: f64 = -1.2;
pub const MAX_POSITION: f64 = 0.6;
pub const MAX_SPEED: f64 = 0.07;
pub const GOAL_POSITION: f64 = 0.45;
pub const GOAL_VELOCITY: f64 = 0.0;
pub const POWER: f64 = 0.0015;
pub const MAX_STEPS: usize = 999;
/// Learners bound this task's rewards to `[-5, 5]`.
pub const REWARD_CLIP: f64 = 5.0;

/// Underpowered car in a valley with a continuous force in `[-1, 1]`;
/// state `[position, velocity]`. Reward +100 at the goal minus `0.1 a^2` per
/// step, with `a` the clipped force.
#[derive(Debug, Clone, Default)]
pub struct MountainCarContinuous {
    state: [f64; 2],
    clock: EpisodeClock,
}

impl MountainCarContinuous {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> [f64; 2] {
        self.state
    }

    pub fn set_state(&mut self, state: [f64; 2]) -> Array1<f64> {
        self.state = state;
        self.clock.start();
        self.obs()
    }

    fn obs(&self) -> Array1<f64> {
        Array1::from(self.state.to_vec())
    }
}

impl Environment for MountainCarContinuous {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: 2,
            action_kind: ActionKind::Continuous {
                dim: 1,
                low: -1.0,
                high: 1.0,
            },
            max_steps: MAX_STEPS,
            reward_clip: Some(REWARD_CLIP),
        }
    }

    fn reset(&mut self, seed: u64) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.set_state([rng.random_range(-0.6..-0.4), 0.0])
    }

    fn step(&mut self, action: &Action) -> Result<Transition> {
        self.clock.check("mountaincar")?;
        let force = scalar_action(action, "mountaincar")?.clamp(-1.0, 1.0);
        let [mut position, mut velocity] = self.state;
        velocity += force * POWER - 0.0025 * (3.0 * position).cos();
        velocity = velocity.clamp(-MAX_SPEED, MAX_SPEED);
        position = (position + velocity).clamp(MIN_POSITION, MAX_POSITION);
        if position == MIN_POSITION && velocity < 0.0 {
            velocity = 0.0;
        }
        self.state = [position, velocity];
        let terminal = position >= GOAL_POSITION && velocity >= GOAL_VELOCITY;
        let reward = if terminal { 100.0 } else { 0.0 } - 0.1 * force * force;
        let truncated = self.clock.tick(terminal, MAX_STEPS);
        Ok(Transition {
            next_obs: self.obs(),
            reward,
            terminal,
            truncated,
        })
    }

    fn position_velocity(&self) -> Option<(f64, f64)> {
        Some((self.state[0], self.state[1]))
    }
}
