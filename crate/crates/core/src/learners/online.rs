//! Online actor and critic teams with eligibility traces.
//!
//! The actor follows four phases per step: sample a forward pass, apply the
//! TD error of the previous transition to the traces, settle the hidden
//! values with the sampled action clamped, then decay the traces and add the
//! score at the settled values. The critic is a team with a scalar Gaussian
//! output whose mean is the value estimate; its traces accumulate the score
//! divided by `a - mu`.

use ndarray::Array1;
use rand::Rng;

use super::mapprop::{output_residual, ratio_signal};
use super::{apply_ascent, LearnerConfig, TraceState};
use crate::error::Result;
use crate::network::{grad_logpi_all, sample_forward_recorded, Action, HiddenState, NetworkParams};
use crate::settle::settle_in_place;

/// Applies `delta * z` through the optimizer.
fn reinforce_phase(
    params: &mut NetworkParams,
    traces: &mut TraceState,
    delta: f64,
    cfg: &LearnerConfig,
    step: u64,
) -> Result<()> {
    let grad: Vec<_> = traces.traces.iter().map(|z| z * delta).collect();
    let alphas = cfg.alphas_at(step);
    apply_ascent(params, &mut traces.moments, &grad, &alphas, cfg.optimizer)
}

fn decay_traces(traces: &mut TraceState, cfg: &LearnerConfig) {
    let decay = cfg.gamma * cfg.lambda;
    for z in &mut traces.traces {
        *z *= decay;
    }
}

#[derive(Debug, Clone)]
pub struct ActorStep {
    /// Action sampled in the feedforward phase.
    pub action: Action,
    /// Hidden values after settling.
    pub settled: HiddenState,
    /// Units whose exploration was disabled this step.
    pub frozen: Option<Vec<Vec<bool>>>,
}

/// One actor step. `delta` is the critic's TD error for the previous
/// transition and is `None` on the first step of an episode. `step` is the
/// global step count used for annealing.
pub fn actor_online_step<R: Rng + ?Sized>(
    params: &mut NetworkParams,
    traces: &mut TraceState,
    obs: &Array1<f64>,
    delta: Option<f64>,
    cfg: &LearnerConfig,
    step: u64,
    rng: &mut R,
) -> Result<ActorStep> {
    // 1. feedforward
    let sample = sample_forward_recorded(params, obs, cfg.explore_mask_prob, rng)?;
    let action = sample.hidden.action.clone();
    // 2. REINFORCE with the previous transition's TD error
    if let Some(delta) = delta {
        reinforce_phase(params, traces, delta, cfg, step)?;
    }
    // 3. minimize energy
    let mut settled = sample.hidden;
    settle_in_place(&mut settled, params, &cfg.settle, |_| Ok(()))?;
    // 4. trace accumulation
    let mut grads = grad_logpi_all(params, &settled)?;
    if let Some(frozen) = &sample.frozen {
        for (g, mask) in grads.iter_mut().zip(frozen) {
            for (k, &off) in mask.iter().enumerate() {
                if off {
                    g.row_mut(k).fill(0.0);
                }
            }
        }
    }
    decay_traces(traces, cfg);
    for (z, g) in traces.traces.iter_mut().zip(&grads) {
        *z += g;
    }
    Ok(ActorStep {
        action,
        settled,
        frozen: sample.frozen,
    })
}

/// Applies the TD error of an episode's last transition, which has no
/// following actor step.
pub fn actor_final_update(
    params: &mut NetworkParams,
    traces: &mut TraceState,
    delta: f64,
    cfg: &LearnerConfig,
    step: u64,
) -> Result<()> {
    reinforce_phase(params, traces, delta, cfg, step)
}

/// Where a critic step sits in its episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// First state: no previous estimate, no TD error.
    First,
    /// Ordinary state reached by a non-final transition.
    Mid,
    /// Terminal state: the TD target is the reward alone.
    Terminal,
    /// Step limit reached: the target still bootstraps from this state, but
    /// nothing is learned from acting in it.
    Truncated,
}

#[derive(Debug, Clone)]
pub struct CriticStep {
    /// Value estimate `W^L h^{L-1}` of the new state after the feedforward
    /// phase (zero for a terminal state).
    pub mu: f64,
    /// TD error of the transition into the new state.
    pub delta: Option<f64>,
    pub settled: Option<HiddenState>,
}

/// One critic step on arriving in `obs` with `reward`. `prev_mu` is the
/// estimate returned by the previous step of the same episode.
#[allow(clippy::too_many_arguments)]
pub fn critic_online_step<R: Rng + ?Sized>(
    params: &mut NetworkParams,
    traces: &mut TraceState,
    obs: &Array1<f64>,
    reward: f64,
    prev_mu: Option<f64>,
    boundary: Boundary,
    cfg: &LearnerConfig,
    step: u64,
    rng: &mut R,
) -> Result<CriticStep> {
    let reward = cfg.clip(reward);
    if boundary == Boundary::Terminal {
        let delta = prev_mu.map(|p| reward - p);
        if let Some(d) = delta {
            reinforce_phase(params, traces, d, cfg, step)?;
        }
        return Ok(CriticStep {
            mu: 0.0,
            delta,
            settled: None,
        });
    }
    let sample = sample_forward_recorded(params, obs, None, rng)?;
    let (mu, _, _) = output_residual(params, &sample.hidden)?;
    let delta = match boundary {
        Boundary::First => None,
        _ => prev_mu.map(|p| reward + cfg.gamma * mu - p),
    };
    if let Some(d) = delta {
        reinforce_phase(params, traces, d, cfg, step)?;
    }
    if boundary == Boundary::Truncated {
        return Ok(CriticStep {
            mu,
            delta,
            settled: None,
        });
    }
    let mut settled = sample.hidden;
    settle_in_place(&mut settled, params, &cfg.settle, |_| Ok(()))?;
    decay_traces(traces, cfg);
    // (a - mu)^-1 at the settled values; target 1 + mu gives exactly that.
    let (mu_hat, _, _) = output_residual(params, &settled)?;
    if let Some(scale) = ratio_signal(params, &settled, mu_hat + 1.0)? {
        let grads = grad_logpi_all(params, &settled)?;
        for (z, g) in traces.traces.iter_mut().zip(&grads) {
            z.scaled_add(scale, g);
        }
    }
    Ok(CriticStep {
        mu,
        delta,
        settled: Some(settled),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{layer_stack, LayerKind};
    use crate::optim::Optimizer;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn actor() -> NetworkParams {
        let layers = layer_stack(4, &[6, 3], &[0.03, 0.1], LayerKind::SoftmaxOutput { temperature: 2.0 }, 2).unwrap();
        NetworkParams::glorot(layers, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    fn critic() -> NetworkParams {
        let layers = layer_stack(4, &[6, 3], &[0.03, 0.1], LayerKind::LinearGaussianOutput { sigma_sq: 0.1 }, 1).unwrap();
        NetworkParams::glorot(layers, &mut ChaCha8Rng::seed_from_u64(2)).unwrap()
    }

    #[test]
    fn zero_lambda_trace_is_current_gradient() {
        let mut params = actor();
        let mut tr = TraceState::new(&params);
        let cfg = LearnerConfig {
            lambda: 0.0,
            ..LearnerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs = array![0.1, -0.2, 0.05, 0.3];
        actor_online_step(&mut params, &mut tr, &obs, None, &cfg, 0, &mut rng).unwrap();
        let out = actor_online_step(&mut params, &mut tr, &obs, None, &cfg, 1, &mut rng).unwrap();
        let g = grad_logpi_all(&params, &out.settled).unwrap();
        assert_eq!(tr.traces, g);
    }

    #[test]
    fn untouched_trace_entries_decay_geometrically() {
        let params = actor();
        let mut tr = TraceState::new(&params);
        tr.traces[0][[0, 0]] = 1.0;
        let cfg = LearnerConfig::default();
        for _ in 0..7 {
            decay_traces(&mut tr, &cfg);
        }
        let expect = (cfg.gamma * cfg.lambda).powi(7);
        assert!((tr.traces[0][[0, 0]] - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_td_error_leaves_critic_weights() {
        let mut params = critic();
        let mut tr = TraceState::new(&params);
        let cfg = LearnerConfig {
            alphas: vec![2e-2, 2e-5, 2e-6],
            ..LearnerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let obs = array![0.1, -0.2, 0.05, 0.3];
        critic_online_step(&mut params, &mut tr, &obs, 0.0, None, Boundary::First, &cfg, 0, &mut rng).unwrap();
        let before = params.clone();
        // Terminal with reward equal to the previous estimate: delta = 0.
        critic_online_step(&mut params, &mut tr, &obs, 0.7, Some(0.7), Boundary::Terminal, &cfg, 1, &mut rng).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn terminal_target_drops_bootstrap() {
        let mut params = critic();
        let mut tr = TraceState::new(&params);
        let cfg = LearnerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = critic_online_step(
            &mut params,
            &mut tr,
            &array![0.0, 0.0, 0.0, 0.0],
            1.0,
            Some(0.25),
            Boundary::Terminal,
            &cfg,
            0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.delta, Some(0.75));
        assert_eq!(out.mu, 0.0);
    }

    #[test]
    fn td_error_bootstraps_from_new_mean() {
        let mut params = critic();
        let mut tr = TraceState::new(&params);
        let cfg = LearnerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let out = critic_online_step(
            &mut params,
            &mut tr,
            &array![0.3, 0.1, 0.0, -0.4],
            0.5,
            Some(0.2),
            Boundary::Mid,
            &cfg,
            0,
            &mut rng,
        )
        .unwrap();
        assert!((out.delta.unwrap() - (0.5 + cfg.gamma * out.mu - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn trace_linearity_without_decay() {
        // With gamma * lambda = 0 and SGD, T online steps with a shared delta
        // change the weights by the sum of T one-step updates.
        let params0 = actor();
        let cfg = LearnerConfig {
            lambda: 0.0,
            optimizer: Optimizer::Sgd,
            alphas: vec![1e-2, 1e-2, 1e-2],
            ..LearnerConfig::default()
        };
        let obs = [array![0.1, -0.2, 0.05, 0.3], array![-0.3, 0.2, 0.0, 0.1], array![0.2, 0.2, -0.1, 0.0]];
        let delta = 0.37;
        let mut params = params0.clone();
        let mut tr = TraceState::new(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut expected = params0.zeros_like();
        for (t, o) in obs.iter().enumerate() {
            let d = if t == 0 { None } else { Some(delta) };
            let out = actor_online_step(&mut params, &mut tr, o, d, &cfg, t as u64, &mut rng).unwrap();
            // one-step update this step's score will receive
            for (e, g) in expected.iter_mut().zip(grad_logpi_all(&params, &out.settled).unwrap()) {
                e.scaled_add(1e-2 * delta, &g);
            }
        }
        actor_final_update(&mut params, &mut tr, delta, &cfg, 3).unwrap();
        for ((w, w0), e) in params.weights().iter().zip(params0.weights()).zip(&expected) {
            let diff = w - w0;
            for (a, b) in diff.iter().zip(e.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
