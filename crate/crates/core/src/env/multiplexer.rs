use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{discrete_action, ActionKind, EnvSpec, Environment, EpisodeClock, Transition};
use crate::error::{Error, Result};
use crate::network::Action;

/// One-step task: `k` address bits (most significant first) select one of
/// `2^k` data bits. Action index `b` means `2b - 1`; the reward is +1 when it
/// equals `2d - 1` for the addressed data bit `d`, and -1 otherwise.
#[derive(Debug, Clone)]
pub struct Multiplexer {
    k: usize,
    bits: Vec<u8>,
    clock: EpisodeClock,
}

impl Multiplexer {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 || k > 16 {
            return Err(Error::Config(format!("multiplexer address width {k} outside 1..=16")));
        }
        Ok(Self {
            k,
            bits: vec![0; k + (1 << k)],
            clock: EpisodeClock::default(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Desired action in {-1, +1} for a bit vector.
    pub fn desired_action(k: usize, bits: &[u8]) -> i32 {
        let address = bits[..k].iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
        2 * bits[k + address] as i32 - 1
    }

    /// Sets the current observation directly.
    pub fn set_bits(&mut self, bits: &[u8]) -> Result<Array1<f64>> {
        if bits.len() != self.bits.len() || bits.iter().any(|&b| b > 1) {
            return Err(Error::EnvUsage("multiplexer: bits must be 0/1 of length k + 2^k".into()));
        }
        self.bits.copy_from_slice(bits);
        self.clock.start();
        Ok(self.obs())
    }

    fn obs(&self) -> Array1<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }
}

impl Environment for Multiplexer {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: self.bits.len(),
            action_kind: ActionKind::Discrete(2),
            max_steps: 1,
            reward_clip: None,
        }
    }

    fn reset(&mut self, seed: u64) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in &mut self.bits {
            *b = rng.random_range(0..2u8);
        }
        self.clock.start();
        self.obs()
    }

    fn step(&mut self, action: &Action) -> Result<Transition> {
        self.clock.check("multiplexer")?;
        let a = 2 * discrete_action(action, 2, "multiplexer")? as i32 - 1;
        let reward = if a == Self::desired_action(self.k, &self.bits) { 1.0 } else { -1.0 };
        self.clock.tick(true, 1);
        Ok(Transition {
            next_obs: self.obs(),
            reward,
            terminal: true,
            truncated: false,
        })
    }
}
