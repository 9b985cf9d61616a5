//! One seed of one experiment.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Algo, ExperimentConfig, NetConfig};
use super::{RunRecord, TrajectoryRow};
use crate::env::{ActionKind, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::learners::backprop::{BackpropActorCritic, BackpropReinforce, BackpropRegressor, Head, Mlp, TdCritic};
use crate::learners::mapprop::reinforce_batch_update;
use crate::learners::{
    actor_final_update, actor_online_step, critic_online_step, mc_batch_update, mc_episode_update, sl_target_update,
    Boundary, EpisodeLog, SlSample, StepRecord, TraceState,
};
use crate::network::{layer_stack, sample_forward_recorded, Action, LayerKind, NetworkParams};
use crate::optim::AdamMoments;

/// Outcome of one episode (one batch on single-step tasks).
struct Episode {
    ret: f64,
    steps: usize,
    terminal: bool,
}

fn team(net: &NetConfig, spec: &EnvSpec, value_head: bool, rng: &mut ChaCha8Rng) -> Result<NetworkParams> {
    let n_hidden = net.hidden.len();
    let hidden_var = &net.sigma_sq[..n_hidden.min(net.sigma_sq.len())];
    let (kind, out_dim) = if value_head {
        (LayerKind::LinearGaussianOutput { sigma_sq: output_var(net)? }, 1)
    } else {
        match spec.action_kind {
            ActionKind::Discrete(n) => (
                LayerKind::SoftmaxOutput {
                    temperature: net.temperature,
                },
                n,
            ),
            ActionKind::Continuous { dim, .. } => (LayerKind::LinearGaussianOutput { sigma_sq: output_var(net)? }, dim),
        }
    };
    NetworkParams::glorot(layer_stack(spec.obs_dim, &net.hidden, hidden_var, kind, out_dim)?, rng)
}

fn output_var(net: &NetConfig) -> Result<f64> {
    net.sigma_sq
        .get(net.hidden.len())
        .copied()
        .ok_or_else(|| Error::Config("a Gaussian output needs its variance as the last sigma_sq entry".into()))
}

fn ann_head(net: &NetConfig, spec: &EnvSpec) -> Result<(Head, usize)> {
    Ok(match spec.action_kind {
        ActionKind::Discrete(n) => (
            Head::Softmax {
                temperature: net.temperature,
            },
            n,
        ),
        ActionKind::Continuous { dim, .. } => (Head::Gaussian { sigma_sq: output_var(net)? }, dim),
    })
}

/// Per-seed learner state.
enum Agent {
    /// Team actor trained by Monte-Carlo returns, with or without settling.
    TeamMc { params: NetworkParams, moments: AdamMoments },
    /// Team regressor trained on the supervised target.
    TeamSl { params: NetworkParams, moments: AdamMoments },
    /// Team actor with a team critic.
    TeamAc {
        actor: NetworkParams,
        actor_tr: TraceState,
        critic: NetworkParams,
        critic_tr: TraceState,
    },
    /// Team actor without settling, with an ANN critic.
    TeamTd {
        actor: NetworkParams,
        actor_tr: TraceState,
        critic: TdCritic,
    },
    AnnAc(BackpropActorCritic),
    AnnReinforce(BackpropReinforce),
    AnnSl(BackpropRegressor),
}

fn build_agent(cfg: &ExperimentConfig, spec: &EnvSpec, rng: &mut ChaCha8Rng) -> Result<Agent> {
    let single = cfg.env.single_step();
    let a = &cfg.actor;
    Ok(match cfg.algo {
        Algo::MappropSl => {
            let params = team(a, spec, true, rng)?;
            let moments = AdamMoments::zeros_like(params.weights());
            Agent::TeamSl { params, moments }
        }
        Algo::BackpropSl => Agent::AnnSl(BackpropRegressor::new(spec.obs_dim, &a.hidden, a.learner.clone(), rng)),
        Algo::MappropMc => {
            let params = team(a, spec, false, rng)?;
            let moments = AdamMoments::zeros_like(params.weights());
            Agent::TeamMc { params, moments }
        }
        Algo::Reinforce | Algo::ReinforceThomas if single => {
            let params = team(a, spec, false, rng)?;
            let moments = AdamMoments::zeros_like(params.weights());
            Agent::TeamMc { params, moments }
        }
        Algo::Reinforce | Algo::ReinforceThomas => {
            let actor = team(a, spec, false, rng)?;
            let actor_tr = TraceState::new(&actor);
            let critic = TdCritic::new(spec.obs_dim, &cfg.critic.hidden, cfg.critic.learner.clone(), rng);
            Agent::TeamTd {
                actor,
                actor_tr,
                critic,
            }
        }
        Algo::MappropAc => {
            let actor = team(a, spec, false, rng)?;
            let critic = team(&cfg.critic, spec, true, rng)?;
            Agent::TeamAc {
                actor_tr: TraceState::new(&actor),
                critic_tr: TraceState::new(&critic),
                actor,
                critic,
            }
        }
        Algo::BackpropAc => {
            let (head, out) = ann_head(a, spec)?;
            let net = Mlp::glorot(spec.obs_dim, &a.hidden, out, head, rng);
            if single {
                Agent::AnnReinforce(BackpropReinforce::new(net, a.learner.clone()))
            } else {
                let critic = TdCritic::new(spec.obs_dim, &cfg.critic.hidden, cfg.critic.learner.clone(), rng);
                Agent::AnnAc(BackpropActorCritic::new(net, a.learner.clone(), critic))
            }
        }
    })
}

fn action_value(a: &Action) -> f64 {
    match a {
        Action::Discrete(i) => *i as f64,
        Action::Continuous(v) => v[0],
    }
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    env: Box<dyn Environment>,
    agent: Agent,
    /// Network initialization and sampling.
    rng: ChaCha8Rng,
    /// Per-episode environment seeds.
    env_rng: ChaCha8Rng,
    /// Environment steps taken so far; drives annealing.
    global_step: u64,
    trajectories: Vec<TrajectoryRow>,
}

impl Runner<'_> {
    fn reset(&mut self) -> Array1<f64> {
        let s: u64 = self.env_rng.random();
        self.env.reset(s)
    }

    /// One batch of independent single-step samples.
    fn batch(&mut self) -> Result<Episode> {
        let n = self.cfg.actor.learner.batch_size;
        let lc = &self.cfg.actor.learner;
        let mut total = 0.0;
        match &mut self.agent {
            Agent::TeamMc { params, moments } => {
                let mut logs = Vec::with_capacity(n);
                for _ in 0..n {
                    let s: u64 = self.env_rng.random();
                    let obs = self.env.reset(s);
                    let sample = sample_forward_recorded(params, &obs, lc.explore_mask_prob, &mut self.rng)?;
                    let tr = self.env.step(&sample.hidden.action)?;
                    total += tr.reward;
                    logs.push(EpisodeLog {
                        steps: vec![StepRecord {
                            hidden: sample.hidden,
                            frozen: sample.frozen,
                            reward: tr.reward,
                        }],
                    });
                }
                if matches!(self.cfg.algo, Algo::Reinforce | Algo::ReinforceThomas) {
                    reinforce_batch_update(params, moments, &logs, lc)?;
                } else {
                    mc_batch_update(params, moments, &logs, lc)?;
                }
            }
            Agent::TeamSl { params, moments } => {
                let mut samples = Vec::with_capacity(n);
                for _ in 0..n {
                    let s: u64 = self.env_rng.random();
                    let obs = self.env.reset(s);
                    let target = self
                        .env
                        .target()
                        .ok_or_else(|| Error::Config("task exposes no supervised target".into()))?;
                    let sample = sample_forward_recorded(params, &obs, None, &mut self.rng)?;
                    let tr = self.env.step(&sample.hidden.action)?;
                    total += tr.reward;
                    samples.push(SlSample {
                        hidden: sample.hidden,
                        target,
                    });
                }
                sl_target_update(params, moments, &samples, lc)?;
            }
            Agent::AnnSl(reg) => {
                let mut batch = Vec::with_capacity(n);
                for _ in 0..n {
                    let s: u64 = self.env_rng.random();
                    let obs = self.env.reset(s);
                    let target = self
                        .env
                        .target()
                        .ok_or_else(|| Error::Config("task exposes no supervised target".into()))?;
                    let y = reg.predict(&obs)?;
                    let tr = self.env.step(&Action::Continuous(Array1::from_elem(1, y)))?;
                    total += tr.reward;
                    batch.push((obs, target));
                }
                reg.batch_update(&batch)?;
            }
            Agent::AnnReinforce(net) => {
                let mut batch = Vec::with_capacity(n);
                for _ in 0..n {
                    let s: u64 = self.env_rng.random();
                    let obs = self.env.reset(s);
                    let action = net.act(&obs, &mut self.rng)?;
                    let tr = self.env.step(&action)?;
                    total += tr.reward;
                    batch.push((obs, action, tr.reward));
                }
                net.batch_update(&batch)?;
            }
            _ => return Err(Error::Config("learner needs a multi-step task".into())),
        }
        self.global_step += n as u64;
        Ok(Episode {
            ret: total / n as f64,
            steps: n,
            terminal: true,
        })
    }

    fn episode(&mut self, index: usize) -> Result<Episode> {
        let mut obs = self.reset();
        let mut ret = 0.0;
        let mut steps = 0usize;
        let actor_cfg = &self.cfg.actor.learner;
        let critic_cfg = &self.cfg.critic.learner;
        let terminal = match &mut self.agent {
            Agent::TeamAc {
                actor,
                actor_tr,
                critic,
                critic_tr,
            } => {
                actor_tr.reset_traces();
                critic_tr.reset_traces();
                let first = critic_online_step(
                    critic,
                    critic_tr,
                    &obs,
                    0.0,
                    None,
                    Boundary::First,
                    critic_cfg,
                    self.global_step,
                    &mut self.rng,
                )?;
                let mut prev_mu = first.mu;
                let mut delta = None;
                loop {
                    let step = self.global_step;
                    let a = actor_online_step(actor, actor_tr, &obs, delta, actor_cfg, step, &mut self.rng)?;
                    let tr = self.env.step(&a.action)?;
                    ret += tr.reward;
                    steps += 1;
                    self.global_step += 1;
                    let boundary = if tr.terminal {
                        Boundary::Terminal
                    } else if tr.truncated {
                        Boundary::Truncated
                    } else {
                        Boundary::Mid
                    };
                    let c = critic_online_step(
                        critic,
                        critic_tr,
                        &tr.next_obs,
                        tr.reward,
                        Some(prev_mu),
                        boundary,
                        critic_cfg,
                        step,
                        &mut self.rng,
                    )?;
                    prev_mu = c.mu;
                    delta = c.delta;
                    record(&mut self.trajectories, &*self.env, self.cfg, index, steps, &a.action);
                    if tr.done() {
                        if let Some(d) = delta {
                            actor_final_update(actor, actor_tr, d, actor_cfg, step)?;
                        }
                        break tr.terminal;
                    }
                    obs = tr.next_obs;
                }
            }
            Agent::TeamTd {
                actor,
                actor_tr,
                critic,
            } => {
                actor_tr.reset_traces();
                critic.reset_traces();
                let mut delta = None;
                loop {
                    let step = self.global_step;
                    let a = actor_online_step(actor, actor_tr, &obs, delta, actor_cfg, step, &mut self.rng)?;
                    let tr = self.env.step(&a.action)?;
                    ret += tr.reward;
                    steps += 1;
                    self.global_step += 1;
                    let next = (!tr.terminal).then_some(&tr.next_obs);
                    delta = Some(critic.update(&obs, tr.reward, next, step)?);
                    record(&mut self.trajectories, &*self.env, self.cfg, index, steps, &a.action);
                    if tr.done() {
                        if let Some(d) = delta {
                            actor_final_update(actor, actor_tr, d, actor_cfg, step)?;
                        }
                        break tr.terminal;
                    }
                    obs = tr.next_obs;
                }
            }
            Agent::AnnAc(ac) => {
                ac.reset_traces();
                loop {
                    let step = self.global_step;
                    let action = ac.act(&obs, &mut self.rng)?;
                    let tr = self.env.step(&action)?;
                    ret += tr.reward;
                    steps += 1;
                    self.global_step += 1;
                    let next = (!tr.terminal).then_some(&tr.next_obs);
                    ac.learn(&obs, &action, tr.reward, next, step)?;
                    record(&mut self.trajectories, &*self.env, self.cfg, index, steps, &action);
                    if tr.done() {
                        break tr.terminal;
                    }
                    obs = tr.next_obs;
                }
            }
            Agent::TeamMc { params, moments } => {
                let mut log = EpisodeLog::default();
                let terminal = loop {
                    let sample = sample_forward_recorded(params, &obs, actor_cfg.explore_mask_prob, &mut self.rng)?;
                    let action = sample.hidden.action.clone();
                    let tr = self.env.step(&action)?;
                    ret += tr.reward;
                    steps += 1;
                    self.global_step += 1;
                    log.steps.push(StepRecord {
                        hidden: sample.hidden,
                        frozen: sample.frozen,
                        reward: tr.reward,
                    });
                    record(&mut self.trajectories, &*self.env, self.cfg, index, steps, &action);
                    if tr.done() {
                        break tr.terminal;
                    }
                    obs = tr.next_obs;
                };
                mc_episode_update(params, moments, &log, actor_cfg)?;
                terminal
            }
            _ => return Err(Error::Config("learner needs a single-step task".into())),
        };
        Ok(Episode { ret, steps, terminal })
    }
}

fn record(
    rows: &mut Vec<TrajectoryRow>,
    env: &dyn Environment,
    cfg: &ExperimentConfig,
    episode: usize,
    step: usize,
    action: &Action,
) {
    if !cfg.trajectories.contains(&episode) {
        return;
    }
    if let Some((position, velocity)) = env.position_velocity() {
        rows.push(TrajectoryRow {
            episode,
            step,
            position,
            velocity,
            action: action_value(action),
        });
    }
}

/// Environment seeds come from a separate ChaCha stream of the same seed so
/// that changing the learner leaves the task sequence unchanged.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    let env = cfg.make_env()?;
    let spec = env.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
    env_rng.set_stream(1);
    let agent = build_agent(cfg, &spec, &mut rng)?;
    let mut runner = Runner {
        cfg,
        env,
        agent,
        rng,
        env_rng,
        global_step: 0,
        trajectories: Vec::new(),
    };
    let mut rec = RunRecord::new(seed);
    for i in 1..=cfg.episodes {
        let ep = if cfg.env.single_step() {
            runner.batch()
        } else {
            runner.episode(i)
        };
        match ep {
            Ok(ep) => rec.push(ep.ret, ep.steps, ep.terminal, cfg.window),
            Err(e @ Error::Config(_)) => return Err(e),
            Err(e) => {
                rec.failure = Some((i, e.to_string()));
                break;
            }
        }
    }
    rec.trajectories = runner.trajectories;
    Ok(rec)
}
