//! Deterministic softplus ANNs trained by backprop: the actor-critic
//! baseline, the TD critic paired with REINFORCE teams, and the regression
//! baseline.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{apply_ascent_raw, LearnerConfig};
use crate::error::{check_len, Result};
use crate::network::{outer, sigmoid, softmax, softmax_score, softplus_vec, Action};
use crate::optim::AdamMoments;

/// What the linear output of an [`Mlp`] parameterizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Head {
    Softmax { temperature: f64 },
    /// Gaussian policy with fixed variance around the linear output.
    Gaussian { sigma_sq: f64 },
    /// Scalar regression or state value.
    Value,
}

/// Fully connected network: softplus hidden layers, linear output, no biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub weights: Vec<Array2<f64>>,
    pub head: Head,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpForward {
    /// Input of each layer.
    pub inputs: Vec<Array1<f64>>,
    /// Pre-activation of each hidden layer.
    pub pres: Vec<Array1<f64>>,
    /// Linear output.
    pub out: Array1<f64>,
}

impl Mlp {
    pub fn glorot<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], output_dim: usize, head: Head, rng: &mut R) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let weights = dims
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Array2::from_shape_fn((w[1], w[0]), |_| rng.random_range(-bound..bound))
            })
            .collect();
        Self { weights, head }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn forward(&self, x: &Array1<f64>) -> Result<MlpForward> {
        check_len("ANN input", self.input_dim(), x.len())?;
        let n = self.weights.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pres = Vec::with_capacity(n - 1);
        let mut h = x.clone();
        for w in &self.weights[..n - 1] {
            let pre = w.dot(&h);
            inputs.push(h);
            h = softplus_vec(&pre);
            pres.push(pre);
        }
        let out = self.weights[n - 1].dot(&h);
        inputs.push(h);
        Ok(MlpForward { inputs, pres, out })
    }

    /// Weight gradients of a scalar objective given its gradient with
    /// respect to the linear output.
    pub fn backward(&self, fwd: &MlpForward, d_out: &Array1<f64>) -> Vec<Array2<f64>> {
        let n = self.weights.len();
        let mut grads = vec![Array2::zeros((0, 0)); n];
        let mut upstream = d_out.clone();
        for l in (0..n).rev() {
            grads[l] = outer(&upstream, &fwd.inputs[l]);
            if l > 0 {
                let back = self.weights[l].t().dot(&upstream);
                upstream = back * fwd.pres[l - 1].mapv(sigmoid);
            }
        }
        grads
    }

    /// `(log pi(a|x), d log pi / d out)`.
    fn log_prob_and_dout(&self, out: &Array1<f64>, action: &Action) -> (f64, Array1<f64>) {
        match (self.head, action) {
            (Head::Softmax { temperature }, Action::Discrete(a)) => {
                let p = softmax(&(out * temperature));
                (p[*a].ln(), softmax_score(&p, *a) * temperature)
            }
            (Head::Gaussian { sigma_sq }, Action::Continuous(a)) => {
                let e = a - out;
                let lp = -e.dot(&e) / (2.0 * sigma_sq)
                    - 0.5 * e.len() as f64 * (2.0 * std::f64::consts::PI * sigma_sq).ln();
                (lp, e / sigma_sq)
            }
            _ => panic!("action kind does not match the ANN head"),
        }
    }

    pub fn log_prob(&self, x: &Array1<f64>, action: &Action) -> Result<f64> {
        let fwd = self.forward(x)?;
        Ok(self.log_prob_and_dout(&fwd.out, action).0)
    }

    /// Gradient of `log pi(a|x)` with respect to every weight matrix.
    pub fn log_prob_grad(&self, x: &Array1<f64>, action: &Action) -> Result<Vec<Array2<f64>>> {
        let fwd = self.forward(x)?;
        let (_, d) = self.log_prob_and_dout(&fwd.out, action);
        Ok(self.backward(&fwd, &d))
    }

    /// Policy entropy (softmax head only; a fixed-variance Gaussian has
    /// constant entropy) and its weight gradient.
    pub fn entropy_grad(&self, x: &Array1<f64>) -> Result<(f64, Vec<Array2<f64>>)> {
        let fwd = self.forward(x)?;
        match self.head {
            Head::Softmax { temperature } => {
                let p = softmax(&(&fwd.out * temperature));
                let logp = p.mapv(|v| v.max(1e-300).ln());
                let ent = -p.dot(&logp);
                let d = (&p * &(&logp + ent)).mapv(|v| -v * temperature);
                Ok((ent, self.backward(&fwd, &d)))
            }
            _ => Ok((0.0, self.weights.iter().map(|w| Array2::zeros(w.dim())).collect())),
        }
    }

    pub fn value(&self, x: &Array1<f64>) -> Result<f64> {
        Ok(self.forward(x)?.out[0])
    }

    pub fn value_grad(&self, x: &Array1<f64>) -> Result<(f64, Vec<Array2<f64>>)> {
        let fwd = self.forward(x)?;
        let grads = self.backward(&fwd, &Array1::ones(fwd.out.len()));
        Ok((fwd.out[0], grads))
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, x: &Array1<f64>, rng: &mut R) -> Result<Action> {
        let fwd = self.forward(x)?;
        Ok(match self.head {
            Head::Softmax { temperature } => {
                let p = softmax(&(&fwd.out * temperature));
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = p.len() - 1;
                for (k, v) in p.iter().enumerate() {
                    acc += v;
                    if u < acc {
                        chosen = k;
                        break;
                    }
                }
                Action::Discrete(chosen)
            }
            Head::Gaussian { sigma_sq } => {
                let s = sigma_sq.sqrt();
                Action::Continuous(fwd.out.mapv(|m| m + s * rng.sample::<f64, _>(StandardNormal)))
            }
            Head::Value => Action::Continuous(fwd.out),
        })
    }
}

/// Trace-decayed optimizer state of one ANN.
#[derive(Debug, Clone)]
struct AnnTraces {
    traces: Vec<Array2<f64>>,
    moments: AdamMoments,
}

impl AnnTraces {
    fn new(net: &Mlp) -> Self {
        Self {
            traces: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            moments: AdamMoments::zeros_like(&net.weights),
        }
    }

    fn accumulate(&mut self, grads: &[Array2<f64>], decay: f64) {
        for (z, g) in self.traces.iter_mut().zip(grads) {
            *z *= decay;
            *z += g;
        }
    }

    fn reset(&mut self) {
        for z in &mut self.traces {
            z.fill(0.0);
        }
    }
}

/// State-value ANN trained by TD(lambda).
#[derive(Debug, Clone)]
pub struct TdCritic {
    pub net: Mlp,
    pub cfg: LearnerConfig,
    state: AnnTraces,
}

impl TdCritic {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], cfg: LearnerConfig, rng: &mut R) -> Self {
        let net = Mlp::glorot(input_dim, hidden, 1, Head::Value, rng);
        let state = AnnTraces::new(&net);
        Self { net, cfg, state }
    }

    pub fn reset_traces(&mut self) {
        self.state.reset();
    }

    /// Learns from `(obs, reward, next)`; `next` is `None` when the
    /// transition ended in a terminal state. Returns the TD error.
    pub fn update(&mut self, obs: &Array1<f64>, reward: f64, next: Option<&Array1<f64>>, step: u64) -> Result<f64> {
        let reward = self.cfg.clip(reward);
        let (v, grad) = self.net.value_grad(obs)?;
        let v_next = match next {
            Some(n) => self.net.value(n)?,
            None => 0.0,
        };
        let delta = reward + self.cfg.gamma * v_next - v;
        self.state.accumulate(&grad, self.cfg.gamma * self.cfg.lambda);
        let g: Vec<_> = self.state.traces.iter().map(|z| z * delta).collect();
        let alphas = self.cfg.alphas_at(step);
        apply_ascent_raw(&mut self.net.weights, &mut self.state.moments, &g, &alphas, self.cfg.optimizer)?;
        Ok(delta)
    }
}

/// Actor-critic with eligibility traces where both networks are ANNs.
#[derive(Debug, Clone)]
pub struct BackpropActorCritic {
    pub actor: Mlp,
    pub actor_cfg: LearnerConfig,
    pub critic: TdCritic,
    actor_state: AnnTraces,
}

impl BackpropActorCritic {
    pub fn new(actor: Mlp, actor_cfg: LearnerConfig, critic: TdCritic) -> Self {
        let actor_state = AnnTraces::new(&actor);
        Self {
            actor,
            actor_cfg,
            critic,
            actor_state,
        }
    }

    pub fn reset_traces(&mut self) {
        self.actor_state.reset();
        self.critic.reset_traces();
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &Array1<f64>, rng: &mut R) -> Result<Action> {
        self.actor.sample_action(obs, rng)
    }

    /// One learning step on the transition `(obs, action, reward, next)`.
    /// Returns the TD error.
    pub fn learn(
        &mut self,
        obs: &Array1<f64>,
        action: &Action,
        reward: f64,
        next: Option<&Array1<f64>>,
        step: u64,
    ) -> Result<f64> {
        let delta = self.critic.update(obs, reward, next, step)?;
        let cfg = &self.actor_cfg;
        let grad = self.actor.log_prob_grad(obs, action)?;
        self.actor_state.accumulate(&grad, cfg.gamma * cfg.lambda);
        let mut g: Vec<Array2<f64>> = self.actor_state.traces.iter().map(|z| z * delta).collect();
        if cfg.entropy_coef > 0.0 {
            let (_, eg) = self.actor.entropy_grad(obs)?;
            for (a, e) in g.iter_mut().zip(&eg) {
                a.scaled_add(cfg.entropy_coef, e);
            }
        }
        let alphas = cfg.alphas_at(step);
        apply_ascent_raw(&mut self.actor.weights, &mut self.actor_state.moments, &g, &alphas, cfg.optimizer)?;
        Ok(delta)
    }
}

/// ANN whose output is trained by REINFORCE and whose hidden layers get the
/// same signal by backprop; the single-step baseline.
#[derive(Debug, Clone)]
pub struct BackpropReinforce {
    pub net: Mlp,
    pub cfg: LearnerConfig,
    moments: AdamMoments,
}

impl BackpropReinforce {
    pub fn new(net: Mlp, cfg: LearnerConfig) -> Self {
        let moments = AdamMoments::zeros_like(&net.weights);
        Self { net, cfg, moments }
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &Array1<f64>, rng: &mut R) -> Result<Action> {
        self.net.sample_action(obs, rng)
    }

    /// One optimizer step on the batch mean of `G grad log pi(a|s)`.
    pub fn batch_update(&mut self, batch: &[(Array1<f64>, Action, f64)]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let mut acc: Vec<Array2<f64>> = self.net.weights.iter().map(|w| Array2::zeros(w.dim())).collect();
        for (obs, action, ret) in batch {
            let g = self.net.log_prob_grad(obs, action)?;
            for (a, g) in acc.iter_mut().zip(&g) {
                a.scaled_add(self.cfg.clip(*ret), g);
            }
        }
        let inv = 1.0 / batch.len() as f64;
        for a in &mut acc {
            *a *= inv;
        }
        let alphas = self.cfg.alphas_at(self.moments.step_count);
        apply_ascent_raw(&mut self.net.weights, &mut self.moments, &acc, &alphas, self.cfg.optimizer)
    }
}

/// Regression ANN trained by gradient descent on the squared error.
#[derive(Debug, Clone)]
pub struct BackpropRegressor {
    pub net: Mlp,
    pub cfg: LearnerConfig,
    moments: AdamMoments,
}

impl BackpropRegressor {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], cfg: LearnerConfig, rng: &mut R) -> Self {
        let net = Mlp::glorot(input_dim, hidden, 1, Head::Value, rng);
        let moments = AdamMoments::zeros_like(&net.weights);
        Self { net, cfg, moments }
    }

    pub fn predict(&self, x: &Array1<f64>) -> Result<f64> {
        self.net.value(x)
    }

    /// One optimizer step on the batch-mean of `-(y - target)^2`.
    pub fn batch_update(&mut self, batch: &[(Array1<f64>, f64)]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let mut acc: Vec<Array2<f64>> = self.net.weights.iter().map(|w| Array2::zeros(w.dim())).collect();
        for (x, t) in batch {
            let fwd = self.net.forward(x)?;
            let d = Array1::from_elem(1, -2.0 * (fwd.out[0] - t));
            for (a, g) in acc.iter_mut().zip(self.net.backward(&fwd, &d)) {
                *a += &g;
            }
        }
        let inv = 1.0 / batch.len() as f64;
        for a in &mut acc {
            *a *= inv;
        }
        let alphas = self.cfg.alphas_at(self.moments.step_count);
        apply_ascent_raw(&mut self.net.weights, &mut self.moments, &acc, &alphas, self.cfg.optimizer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_td_error_stream_leaves_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let actor = Mlp::glorot(2, &[4, 3], 2, Head::Softmax { temperature: 1.0 }, &mut rng);
        let mut critic = TdCritic::new(2, &[4, 3], LearnerConfig::default(), &mut rng);
        critic.net.weights.last_mut().unwrap().fill(0.0);
        let mut ac = BackpropActorCritic::new(actor, LearnerConfig::default(), critic);
        let before = (ac.actor.clone(), ac.critic.net.clone());
        // Zero critic output and zero rewards give zero TD errors.
        for t in 0..5 {
            let obs = array![0.1 * t as f64, -0.2];
            let a = ac.act(&obs, &mut rng).unwrap();
            let d = ac.learn(&obs, &a, 0.0, Some(&array![0.0, 0.1]), t).unwrap();
            assert_eq!(d, 0.0);
        }
        assert_eq!(ac.actor, before.0);
        // Output weights stay zero so the value stays zero; hidden weights
        // receive zero updates because delta is zero.
        assert_eq!(ac.critic.net, before.1);
    }

    #[test]
    fn regressor_fits_linear_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = LearnerConfig {
            alphas: vec![1e-2, 1e-2, 1e-2],
            ..LearnerConfig::default()
        };
        let mut reg = BackpropRegressor::new(2, &[8, 4], cfg, &mut rng);
        let xs: Vec<Array1<f64>> = (0..32).map(|i| array![(i as f64 / 16.0) - 1.0, ((i * 7) % 5) as f64 / 5.0]).collect();
        let batch: Vec<(Array1<f64>, f64)> = xs.iter().map(|x| (x.clone(), 0.5 * x[0] - 0.3 * x[1])).collect();
        let mse = |r: &BackpropRegressor| {
            batch.iter().map(|(x, t)| (r.predict(x).unwrap() - t).powi(2)).sum::<f64>() / batch.len() as f64
        };
        let start = mse(&reg);
        for _ in 0..500 {
            reg.batch_update(&batch).unwrap();
        }
        assert!(mse(&reg) < 0.1 * start);
    }
}
