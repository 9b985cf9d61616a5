//! Training rules for teams of stochastic units and their baselines.
//!
//! * [`mapprop`]: Monte-Carlo MAP propagation, plain REINFORCE (with optional
//!   random disabling of exploration) and the supervised ratio rule.
//! * [`online`]: actor and critic teams trained online with eligibility
//!   traces and a shared TD error.
//! * [`reparam`]: pathwise gradient through the reparameterized network.
//! * [`backprop`]: deterministic ANNs trained by backprop, used as baselines
//!   and as the critic of the REINFORCE baselines.

pub mod backprop;
pub mod mapprop;
pub mod online;
pub mod reparam;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::network::{HiddenState, NetworkParams};
use crate::optim::{anneal_alpha, AdamMoments, Anneal, Optimizer};
use crate::settle::SettleConfig;

pub use mapprop::{mc_batch_update, mc_episode_update, reinforce_episode_update, sl_target_update, SlSample};
pub use online::{actor_final_update, actor_online_step, critic_online_step, ActorStep, Boundary, CriticStep};
pub use reparam::{reparam_backprop_update, reparam_gradient};

/// `|A - mu|` below `RATIO_GUARD * sigma_L` skips a ratio-rule contribution.
pub const RATIO_GUARD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    /// One step size per layer.
    pub alphas: Vec<f64>,
    pub lambda: f64,
    pub gamma: f64,
    pub optimizer: Optimizer,
    pub settle: SettleConfig,
    pub anneal: Anneal,
    pub reward_clip: Option<f64>,
    pub batch_size: usize,
    /// Probability of disabling a hidden unit's exploration per step.
    pub explore_mask_prob: Option<f64>,
    /// Entropy bonus for backprop actors.
    pub entropy_coef: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            alphas: vec![1e-2, 1e-5, 1e-6],
            lambda: 0.95,
            gamma: 0.98,
            optimizer: Optimizer::default(),
            settle: SettleConfig::default(),
            anneal: Anneal::None,
            reward_clip: None,
            batch_size: 1,
            explore_mask_prob: None,
            entropy_coef: 0.0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self, num_layers: usize) -> Result<()> {
        if self.alphas.len() != num_layers {
            return Err(Error::Config(format!(
                "{} step sizes for {num_layers} layers",
                self.alphas.len()
            )));
        }
        if self.alphas.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::Config("step sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) || !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("lambda and gamma must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some(p) = self.explore_mask_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config("explore_mask_prob must lie in [0, 1]".into()));
            }
        }
        if let Some(c) = self.reward_clip {
            if !(c > 0.0) {
                return Err(Error::Config("reward_clip must be positive".into()));
            }
        }
        self.settle.validate()
    }

    /// Step sizes after annealing at `step`.
    pub fn alphas_at(&self, step: u64) -> Vec<f64> {
        self.alphas.iter().map(|&a| anneal_alpha(a, step, self.anneal)).collect()
    }

    pub fn clip(&self, reward: f64) -> f64 {
        clip_reward(reward, self.reward_clip)
    }
}

pub fn clip_reward(reward: f64, bound: Option<f64>) -> f64 {
    match bound {
        Some(b) => reward.clamp(-b, b),
        None => reward,
    }
}

/// Eligibility traces plus optimizer moments of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceState {
    pub traces: Vec<Array2<f64>>,
    pub moments: AdamMoments,
}

impl TraceState {
    pub fn new(params: &NetworkParams) -> Self {
        Self {
            traces: params.zeros_like(),
            moments: AdamMoments::zeros_like(params.weights()),
        }
    }

    /// Zeroes the traces; optimizer moments persist across episodes.
    pub fn reset_traces(&mut self) {
        for z in &mut self.traces {
            z.fill(0.0);
        }
    }
}

/// One recorded time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub hidden: HiddenState,
    /// Units whose exploration was disabled at this step.
    pub frozen: Option<Vec<Vec<bool>>>,
    /// Reward received after acting, before clipping.
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
}

impl EpisodeLog {
    /// `G_t = sum_{k >= t} gamma^(k - t) r_k` over clipped rewards.
    pub fn returns(&self, gamma: f64, clip: Option<f64>) -> Vec<f64> {
        let mut out = vec![0.0; self.steps.len()];
        let mut acc = 0.0;
        for (t, s) in self.steps.iter().enumerate().rev() {
            acc = clip_reward(s.reward, clip) + gamma * acc;
            out[t] = acc;
        }
        out
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Applies one optimizer step on an ascent direction.
pub(crate) fn apply_ascent(
    params: &mut NetworkParams,
    moments: &mut AdamMoments,
    gradient: &[Array2<f64>],
    alphas: &[f64],
    optimizer: Optimizer,
) -> Result<()> {
    let deltas = moments.step(gradient, alphas, optimizer)?;
    params.add_scaled(&deltas, 1.0)
}

/// [`apply_ascent`] for bare weight matrices.
pub(crate) fn apply_ascent_raw(
    weights: &mut [Array2<f64>],
    moments: &mut AdamMoments,
    gradient: &[Array2<f64>],
    alphas: &[f64],
    optimizer: Optimizer,
) -> Result<()> {
    if alphas.len() != weights.len() {
        return Err(Error::Config(format!("{} step sizes for {} layers", alphas.len(), weights.len())));
    }
    let deltas = moments.step(gradient, alphas, optimizer)?;
    for (w, d) in weights.iter_mut().zip(&deltas) {
        *w += d;
    }
    Ok(())
}
