//! Monte-Carlo MAP propagation and its REINFORCE special case.
//!
//! For every recorded step the hidden values are settled with the observation
//! and the action clamped, then each layer receives the REINFORCE update
//! `G * grad_W log pi_l` evaluated at the settled values. With zero settling
//! steps this is plain per-unit REINFORCE.

use ndarray::Array2;

use super::{apply_ascent, EpisodeLog, LearnerConfig, RATIO_GUARD};
use crate::error::{Error, Result};
use crate::network::{grad_logpi_all, HiddenState, LayerKind, NetworkParams};
use crate::optim::AdamMoments;
use crate::settle::{settle_in_place, SettleConfig};

/// Settled score of one step scaled by `signal`; frozen units contribute
/// nothing.
fn settled_score(
    params: &NetworkParams,
    hidden: &HiddenState,
    frozen: Option<&Vec<Vec<bool>>>,
    signal: f64,
    settle: &SettleConfig,
) -> Result<Vec<Array2<f64>>> {
    let mut h = hidden.clone();
    settle_in_place(&mut h, params, settle, |_| Ok(()))?;
    let mut grads = grad_logpi_all(params, &h)?;
    if let Some(frozen) = frozen {
        zero_frozen_rows(&mut grads, frozen);
    }
    for g in &mut grads {
        *g *= signal;
    }
    Ok(grads)
}

fn zero_frozen_rows(grads: &mut [Array2<f64>], frozen: &[Vec<bool>]) {
    for (g, mask) in grads.iter_mut().zip(frozen) {
        for (k, &off) in mask.iter().enumerate() {
            if off {
                g.row_mut(k).fill(0.0);
            }
        }
    }
}

fn accumulate(acc: &mut [Array2<f64>], add: &[Array2<f64>]) {
    for (a, g) in acc.iter_mut().zip(add) {
        *a += g;
    }
}

/// Averages the per-step updates of every step of every episode and applies
/// them as a single optimizer step. This is the batch form used on
/// single-step tasks.
pub fn mc_batch_update(
    params: &mut NetworkParams,
    moments: &mut AdamMoments,
    episodes: &[EpisodeLog],
    cfg: &LearnerConfig,
) -> Result<()> {
    cfg.validate(params.num_layers())?;
    let mut acc = params.zeros_like();
    let mut count = 0usize;
    for ep in episodes {
        let returns = ep.returns(cfg.gamma, cfg.reward_clip);
        for (rec, g) in ep.steps.iter().zip(returns) {
            let grads = settled_score(params, &rec.hidden, rec.frozen.as_ref(), g, &cfg.settle)?;
            accumulate(&mut acc, &grads);
            count += 1;
        }
    }
    if count == 0 {
        return Ok(());
    }
    let inv = 1.0 / count as f64;
    for a in &mut acc {
        *a *= inv;
    }
    let alphas = cfg.alphas_at(moments.step_count);
    apply_ascent(params, moments, &acc, &alphas, cfg.optimizer)
}

/// Sequential Monte-Carlo update over one episode: one optimizer step per
/// time step, each settled with the current weights.
pub fn mc_episode_update(
    params: &mut NetworkParams,
    moments: &mut AdamMoments,
    episode: &EpisodeLog,
    cfg: &LearnerConfig,
) -> Result<()> {
    cfg.validate(params.num_layers())?;
    let returns = episode.returns(cfg.gamma, cfg.reward_clip);
    for (rec, g) in episode.steps.iter().zip(returns) {
        let grads = settled_score(params, &rec.hidden, rec.frozen.as_ref(), g, &cfg.settle)?;
        let alphas = cfg.alphas_at(moments.step_count);
        apply_ascent(params, moments, &grads, &alphas, cfg.optimizer)?;
    }
    Ok(())
}

/// Per-unit REINFORCE: [`mc_episode_update`] without settling. Units whose
/// exploration was disabled while sampling (recorded in the episode) get no
/// update for that step.
pub fn reinforce_episode_update(
    params: &mut NetworkParams,
    moments: &mut AdamMoments,
    episode: &EpisodeLog,
    cfg: &LearnerConfig,
) -> Result<()> {
    mc_episode_update(params, moments, episode, &without_settling(cfg))
}

/// Batch form of [`reinforce_episode_update`].
pub fn reinforce_batch_update(
    params: &mut NetworkParams,
    moments: &mut AdamMoments,
    episodes: &[EpisodeLog],
    cfg: &LearnerConfig,
) -> Result<()> {
    mc_batch_update(params, moments, episodes, &without_settling(cfg))
}

fn without_settling(cfg: &LearnerConfig) -> LearnerConfig {
    let mut c = cfg.clone();
    c.settle.n_steps = 0;
    c
}

/// A sampled forward pass of a Gaussian-output network with its regression
/// target.
#[derive(Debug, Clone)]
pub struct SlSample {
    pub hidden: HiddenState,
    pub target: f64,
}

/// Learning signal `(target - mu) / (a - mu)` at settled values, or `None`
/// when `|a - mu|` is inside the guard band.
pub(crate) fn ratio_signal(params: &NetworkParams, settled: &HiddenState, target: f64) -> Result<Option<f64>> {
    let (mu, a, sigma) = output_residual(params, settled)?;
    let denom = a - mu;
    if denom.abs() < RATIO_GUARD * sigma {
        Ok(None)
    } else {
        Ok(Some((target - mu) / denom))
    }
}

/// `(mu, a, sigma_L)` for a scalar Gaussian output at `hidden`.
pub(crate) fn output_residual(params: &NetworkParams, hidden: &HiddenState) -> Result<(f64, f64, f64)> {
    let last = params.num_layers() - 1;
    let spec = params.output();
    let sigma_sq = match spec.kind {
        LayerKind::LinearGaussianOutput { sigma_sq } if spec.out_dim == 1 => sigma_sq,
        _ => {
            return Err(Error::LayerKind {
                layer: last,
                message: "the ratio rule needs a scalar linear Gaussian output".into(),
            })
        }
    };
    let input = hidden.layer_input(last);
    let mu = params.weights()[last].row(0).dot(input);
    let a = hidden
        .action
        .as_continuous()
        .ok_or_else(|| Error::LayerKind {
            layer: last,
            message: "expected a continuous action".into(),
        })?[0];
    Ok((mu, a, sigma_sq.sqrt()))
}

/// Supervised variant for a scalar Gaussian output: each sample is settled
/// and contributes `(target - mu) / (a - mu) * grad_W log pi_l`; the batch
/// average is applied as one optimizer step. Samples inside the guard band
/// contribute zero.
pub fn sl_target_update(
    params: &mut NetworkParams,
    moments: &mut AdamMoments,
    samples: &[SlSample],
    cfg: &LearnerConfig,
) -> Result<()> {
    cfg.validate(params.num_layers())?;
    if samples.is_empty() {
        return Ok(());
    }
    let mut acc = params.zeros_like();
    for s in samples {
        let mut h = s.hidden.clone();
        settle_in_place(&mut h, params, &cfg.settle, |_| Ok(()))?;
        if let Some(signal) = ratio_signal(params, &h, s.target)? {
            let grads = grad_logpi_all(params, &h)?;
            for (a, g) in acc.iter_mut().zip(&grads) {
                a.scaled_add(signal, g);
            }
        }
    }
    let inv = 1.0 / samples.len() as f64;
    for a in &mut acc {
        *a *= inv;
    }
    let alphas = cfg.alphas_at(moments.step_count);
    apply_ascent(params, moments, &acc, &alphas, cfg.optimizer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::StepRecord;
    use crate::network::{
        layer_stack, sample_forward, sample_forward_recorded, softmax, Action, LayerSpec,
    };
    use crate::optim::Optimizer;
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sgd_cfg(n_layers: usize, alpha: f64) -> LearnerConfig {
        LearnerConfig {
            alphas: vec![alpha; n_layers],
            optimizer: Optimizer::Sgd,
            gamma: 1.0,
            ..LearnerConfig::default()
        }
    }

    fn episode(hidden: HiddenState, reward: f64) -> EpisodeLog {
        EpisodeLog {
            steps: vec![StepRecord {
                hidden,
                frozen: None,
                reward,
            }],
        }
    }

    #[test]
    fn zero_rewards_leave_params_unchanged() {
        let layers = layer_stack(3, &[4, 2], &[0.3, 1.0], LayerKind::SoftmaxOutput { temperature: 1.0 }, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = NetworkParams::glorot(layers, &mut rng).unwrap();
        let before = params.clone();
        let mut moments = AdamMoments::zeros_like(params.weights());
        let eps: Vec<EpisodeLog> = (0..5)
            .map(|_| episode(sample_forward(&params, &array![1.0, 0.0, 1.0], &mut rng).unwrap(), 0.0))
            .collect();
        let cfg = LearnerConfig {
            alphas: vec![4e-2, 4e-5, 4e-6],
            ..LearnerConfig::default()
        };
        mc_batch_update(&mut params, &mut moments, &eps, &cfg).unwrap();
        assert_eq!(params, before);
        assert_eq!(moments.step_count, 1);
    }

    #[test]
    fn bandit_update_matches_textbook_reinforce() {
        // Softmax-only network on a two-state bandit with one-hot states.
        let layers = vec![LayerSpec::new(LayerKind::SoftmaxOutput { temperature: 1.0 }, 2, 2)];
        let w0 = array![[0.3, -0.1], [-0.2, 0.4]];
        let mut params = NetworkParams::new(layers, vec![w0.clone()]).unwrap();
        let mut moments = AdamMoments::zeros_like(params.weights());
        let hs = HiddenState {
            state: array![0.0, 1.0],
            hidden: vec![],
            action: Action::Discrete(1),
        };
        let cfg = sgd_cfg(1, 0.1);
        mc_batch_update(&mut params, &mut moments, &[episode(hs, 2.5)], &cfg).unwrap();
        // Textbook: theta_{a, s} += alpha * G * (1[a = 1] - p_a(s)) for state s = 1.
        let p = softmax(&array![-0.1, 0.4]);
        let mut expect = w0;
        expect[[0, 1]] += 0.1 * 2.5 * (0.0 - p[0]);
        expect[[1, 1]] += 0.1 * 2.5 * (1.0 - p[1]);
        for (a, b) in params.weights()[0].iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn fully_frozen_hidden_units_get_no_update() {
        let layers = layer_stack(3, &[4, 2], &[0.3, 1.0], LayerKind::SoftmaxOutput { temperature: 1.0 }, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = NetworkParams::glorot(layers, &mut rng).unwrap();
        let before = params.clone();
        let mut moments = AdamMoments::zeros_like(params.weights());
        let fs = sample_forward_recorded(&params, &array![1.0, 0.0, 1.0], Some(1.0), &mut rng).unwrap();
        let ep = EpisodeLog {
            steps: vec![StepRecord {
                hidden: fs.hidden,
                frozen: fs.frozen,
                reward: 1.0,
            }],
        };
        reinforce_episode_update(&mut params, &mut moments, &ep, &sgd_cfg(3, 0.1)).unwrap();
        assert_eq!(params.weights()[0], before.weights()[0]);
        assert_eq!(params.weights()[1], before.weights()[1]);
        assert_ne!(params.weights()[2], before.weights()[2]);
    }

    #[test]
    fn zero_mask_prob_matches_plain_reinforce() {
        let layers = layer_stack(3, &[4, 2], &[0.3, 1.0], LayerKind::SoftmaxOutput { temperature: 1.0 }, 2).unwrap();
        let params0 = NetworkParams::glorot(layers, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let s = array![1.0, 0.0, 1.0];
        let run = |p: Option<f64>| {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut params = params0.clone();
            let mut moments = AdamMoments::zeros_like(params.weights());
            let fs = sample_forward_recorded(&params, &s, p, &mut rng).unwrap();
            let ep = EpisodeLog {
                steps: vec![StepRecord {
                    hidden: fs.hidden,
                    frozen: fs.frozen,
                    reward: 1.0,
                }],
            };
            let mut cfg = LearnerConfig {
                alphas: vec![1e-2, 1e-3, 1e-3],
                ..LearnerConfig::default()
            };
            cfg.settle.n_steps = 0;
            mc_episode_update(&mut params, &mut moments, &ep, &cfg).unwrap();
            params
        };
        assert_eq!(run(Some(0.0)), run(None));
    }

    #[test]
    fn sl_target_at_mean_is_zero_update() {
        let layers = layer_stack(2, &[3], &[0.1], LayerKind::LinearGaussianOutput { sigma_sq: 0.1 }, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = NetworkParams::glorot(layers, &mut rng).unwrap();
        let before = params.clone();
        let h = sample_forward(&params, &array![0.3, 0.7], &mut rng).unwrap();
        let mut settled = h.clone();
        settle_in_place(&mut settled, &params, &SettleConfig::default(), |_| Ok(())).unwrap();
        let (mu, _, _) = output_residual(&params, &settled).unwrap();
        let mut moments = AdamMoments::zeros_like(params.weights());
        sl_target_update(
            &mut params,
            &mut moments,
            &[SlSample { hidden: h, target: mu }],
            &sgd_cfg(2, 0.1),
        )
        .unwrap();
        for (a, b) in params.weights().iter().zip(before.weights()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_layer_sl_direction_is_l2_descent() {
        let layers = vec![LayerSpec::new(LayerKind::LinearGaussianOutput { sigma_sq: 0.2 }, 3, 1)];
        let w0 = array![[0.5, -0.3, 0.8]];
        let mut params = NetworkParams::new(layers, vec![w0.clone()]).unwrap();
        let x: Array1<f64> = array![0.2, 1.1, -0.4];
        let hs = HiddenState {
            state: x.clone(),
            hidden: vec![],
            action: Action::Continuous(array![0.9]),
        };
        let target = -0.35;
        let mut moments = AdamMoments::zeros_like(params.weights());
        sl_target_update(&mut params, &mut moments, &[SlSample { hidden: hs, target }], &sgd_cfg(1, 1.0)).unwrap();
        let update = &params.weights()[0] - &w0;
        let mu = w0.row(0).dot(&x);
        // -d/dW (target - mu)^2 = 2 (target - mu) x
        let descent = x.mapv(|v| 2.0 * (target - mu) * v);
        let u = update.row(0);
        let cos = u.dot(&descent) / (u.dot(&u).sqrt() * descent.dot(&descent).sqrt());
        assert!((cos - 1.0).abs() < 1e-10, "{cos}");
    }

    #[test]
    fn ratio_guard_skips_tiny_residuals() {
        let layers = vec![LayerSpec::new(LayerKind::LinearGaussianOutput { sigma_sq: 1.0 }, 1, 1)];
        let params = NetworkParams::new(layers, vec![array![[1.0]]]).unwrap();
        let hs = HiddenState {
            state: array![0.5],
            hidden: vec![],
            action: Action::Continuous(array![0.5 + 1e-5]),
        };
        assert_eq!(ratio_signal(&params, &hs, 3.0).unwrap(), None);
    }
}
