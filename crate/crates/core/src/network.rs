//! Multi-layer networks of stochastic units.
//!
//! Layer `i` (zero-based) maps the value of layer `i - 1` (the observation
//! for `i == 0`) to a distribution over its own value. Hidden layers are
//! Gaussian with mean `softplus(W h)` and fixed variance; the output layer is
//! either a tempered softmax over discrete actions or a Gaussian with linear
//! mean. There is no bias term.
//!
//! All densities and their gradients are closed form. The gradient of every
//! Gaussian layer is built from the same "signal" vector
//! `(h - mu) * f'(W h_prev) / sigma^2`, so the score with respect to the
//! weights is `signal * h_prev^T` and the score with respect to the input is
//! `W^T signal`.

use ndarray::{Array1, Array2, ArrayViewMut2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_len, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `log(1 + exp(x))` without overflow for large `x`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus_vec(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(softplus)
}

/// Numerically stable `log(sum(exp(x)))`.
pub fn log_sum_exp(x: &Array1<f64>) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &Array1<f64>) -> Array1<f64> {
    let lse = log_sum_exp(x);
    x.mapv(|v| (v - lse).exp())
}

/// Distribution family of one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerKind {
    /// `N(softplus(W h), sigma_sq I)`.
    NormalSoftplus { sigma_sq: f64 },
    /// `softmax(temperature * W h)` over `out_dim` actions.
    SoftmaxOutput { temperature: f64 },
    /// `N(W h, sigma_sq I)`.
    LinearGaussianOutput { sigma_sq: f64 },
}

impl LayerKind {
    pub fn sigma_sq(&self) -> Option<f64> {
        match *self {
            LayerKind::NormalSoftplus { sigma_sq } | LayerKind::LinearGaussianOutput { sigma_sq } => {
                Some(sigma_sq)
            }
            LayerKind::SoftmaxOutput { .. } => None,
        }
    }

    pub fn is_gaussian(&self) -> bool {
        self.sigma_sq().is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, in_dim: usize, out_dim: usize) -> Self {
        Self {
            kind,
            in_dim,
            out_dim,
        }
    }
}

/// Builds the layer list for a network with softplus hidden layers.
///
/// `hidden_sigma_sq[i]` is the variance of hidden layer `i`.
pub fn layer_stack(
    input_dim: usize,
    hidden: &[usize],
    hidden_sigma_sq: &[f64],
    output: LayerKind,
    output_dim: usize,
) -> Result<Vec<LayerSpec>> {
    check_len("hidden variances", hidden.len(), hidden_sigma_sq.len())?;
    let mut layers = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input_dim;
    for (&width, &sigma_sq) in hidden.iter().zip(hidden_sigma_sq) {
        layers.push(LayerSpec::new(
            LayerKind::NormalSoftplus { sigma_sq },
            prev,
            width,
        ));
        prev = width;
    }
    layers.push(LayerSpec::new(output, prev, output_dim));
    Ok(layers)
}

/// Weights and layer descriptions of a stochastic network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layers: Vec<LayerSpec>,
    weights: Vec<Array2<f64>>,
}

impl NetworkParams {
    pub fn new(layers: Vec<LayerSpec>, weights: Vec<Array2<f64>>) -> Result<Self> {
        validate_layers(&layers)?;
        check_len("weight matrices", layers.len(), weights.len())?;
        for (i, (spec, w)) in layers.iter().zip(&weights).enumerate() {
            if w.dim() != (spec.out_dim, spec.in_dim) {
                return Err(Error::LayerKind {
                    layer: i,
                    message: format!(
                        "weight shape {:?} does not match {}x{}",
                        w.dim(),
                        spec.out_dim,
                        spec.in_dim
                    ),
                });
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::LayerKind {
                    layer: i,
                    message: "non-finite weight".into(),
                });
            }
        }
        Ok(Self { layers, weights })
    }

    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        let weights = layers
            .iter()
            .map(|s| Array2::zeros((s.out_dim, s.in_dim)))
            .collect();
        Self::new(layers, weights)
    }

    /// Glorot-uniform initialization: every entry of layer `i` is drawn from
    /// `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng + ?Sized>(layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        validate_layers(&layers)?;
        let weights = layers
            .iter()
            .map(|s| {
                let bound = (6.0 / (s.in_dim + s.out_dim) as f64).sqrt();
                Array2::from_shape_fn((s.out_dim, s.in_dim), |_| {
                    rng.random_range(-bound..bound)
                })
            })
            .collect();
        Self::new(layers, weights)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    /// Mutable view of one weight matrix; the shape cannot change through it.
    pub fn weight_mut(&mut self, layer: usize) -> ArrayViewMut2<'_, f64> {
        self.weights[layer].view_mut()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output(&self) -> &LayerSpec {
        self.layers.last().expect("validated non-empty")
    }

    /// Adds `scale * deltas[i]` to every weight matrix.
    pub fn add_scaled(&mut self, deltas: &[Array2<f64>], scale: f64) -> Result<()> {
        check_len("weight deltas", self.weights.len(), deltas.len())?;
        for (i, (w, d)) in self.weights.iter_mut().zip(deltas).enumerate() {
            if w.dim() != d.dim() {
                return Err(Error::LayerKind {
                    layer: i,
                    message: format!("delta shape {:?} != weight shape {:?}", d.dim(), w.dim()),
                });
            }
            w.scaled_add(scale, d);
        }
        Ok(())
    }

    /// Zero matrices shaped like the weights.
    pub fn zeros_like(&self) -> Vec<Array2<f64>> {
        self.weights.iter().map(|w| Array2::zeros(w.dim())).collect()
    }
}

fn validate_layers(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Config("network needs at least one layer".into()));
    }
    for (i, spec) in layers.iter().enumerate() {
        if spec.in_dim == 0 || spec.out_dim == 0 {
            return Err(Error::LayerKind {
                layer: i,
                message: "layer dimensions must be positive".into(),
            });
        }
        if i > 0 {
            check_len("consecutive layer dims", layers[i - 1].out_dim, spec.in_dim)?;
        }
        match spec.kind {
            LayerKind::SoftmaxOutput { temperature } => {
                if i + 1 != layers.len() {
                    return Err(Error::LayerKind {
                        layer: i,
                        message: "a softmax layer can only be the output layer".into(),
                    });
                }
                if !(temperature > 0.0 && temperature.is_finite()) {
                    return Err(Error::LayerKind {
                        layer: i,
                        message: "temperature must be positive".into(),
                    });
                }
            }
            LayerKind::NormalSoftplus { sigma_sq } | LayerKind::LinearGaussianOutput { sigma_sq } => {
                if !(sigma_sq >= 0.0 && sigma_sq.is_finite()) {
                    return Err(Error::LayerKind {
                        layer: i,
                        message: "variance must be non-negative".into(),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Output of the network's final layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Array1<f64>),
}

impl Action {
    pub fn as_discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }

    pub fn as_continuous(&self) -> Option<&Array1<f64>> {
        match self {
            Action::Continuous(a) => Some(a),
            Action::Discrete(_) => None,
        }
    }

    pub fn value(&self) -> LayerValue<'_> {
        match self {
            Action::Discrete(a) => LayerValue::Discrete(*a),
            Action::Continuous(a) => LayerValue::Real(a),
        }
    }
}

/// Borrowed value of one layer.
#[derive(Debug, Clone, Copy)]
pub enum LayerValue<'a> {
    Real(&'a Array1<f64>),
    Discrete(usize),
}

/// Values of every layer for one time step: the clamped observation, the
/// hidden layers and the clamped action.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub state: Array1<f64>,
    pub hidden: Vec<Array1<f64>>,
    pub action: Action,
}

impl HiddenState {
    /// Value feeding layer `layer`.
    pub fn layer_input(&self, layer: usize) -> &Array1<f64> {
        if layer == 0 {
            &self.state
        } else {
            &self.hidden[layer - 1]
        }
    }

    /// Value produced by layer `layer`.
    pub fn layer_output(&self, layer: usize) -> LayerValue<'_> {
        if layer < self.hidden.len() {
            LayerValue::Real(&self.hidden[layer])
        } else {
            self.action.value()
        }
    }

    pub fn is_finite(&self) -> bool {
        let action_ok = match &self.action {
            Action::Discrete(_) => true,
            Action::Continuous(a) => a.iter().all(|v| v.is_finite()),
        };
        action_ok
            && self.state.iter().all(|v| v.is_finite())
            && self.hidden.iter().all(|h| h.iter().all(|v| v.is_finite()))
    }

    /// Checks the value dimensions against `params`.
    pub fn check_dims(&self, params: &NetworkParams) -> Result<()> {
        check_len("state", params.input_dim(), self.state.len())?;
        check_len("hidden layer count", params.num_layers() - 1, self.hidden.len())?;
        for (i, h) in self.hidden.iter().enumerate() {
            check_len("hidden layer", params.layers()[i].out_dim, h.len())?;
        }
        check_output(params, params.num_layers() - 1, self.action.value())
    }
}

/// A forward sample together with the exogenous noise that produced it.
#[derive(Debug, Clone)]
pub struct ForwardSample {
    pub hidden: HiddenState,
    /// Standard-normal draws `zeta` of each Gaussian layer, so that
    /// `h = mean + sigma * zeta`. Empty for a softmax output.
    pub noise: Vec<Array1<f64>>,
    /// Per hidden unit: `true` when its exploration was disabled and it
    /// emitted its mean. Present only when masking was requested.
    pub frozen: Option<Vec<Vec<bool>>>,
}

/// Samples every layer in order from its conditional distribution.
pub fn sample_forward<R: Rng + ?Sized>(
    params: &NetworkParams,
    state: &Array1<f64>,
    rng: &mut R,
) -> Result<HiddenState> {
    Ok(sample_forward_recorded(params, state, None, rng)?.hidden)
}

/// Forward sampling that records the noise and, with `freeze_prob = Some(p)`
/// and `p > 0`, disables exploration of each hidden unit independently with
/// probability `p`.
pub fn sample_forward_recorded<R: Rng + ?Sized>(
    params: &NetworkParams,
    state: &Array1<f64>,
    freeze_prob: Option<f64>,
    rng: &mut R,
) -> Result<ForwardSample> {
    check_len("state", params.input_dim(), state.len())?;
    let freeze_prob = freeze_prob.filter(|&p| p > 0.0);
    let n = params.num_layers();
    let mut hidden = Vec::with_capacity(n - 1);
    let mut noise = Vec::with_capacity(n);
    let mut frozen = freeze_prob.map(|_| Vec::with_capacity(n - 1));
    let mut action = None;
    for (i, (spec, w)) in params.layers.iter().zip(&params.weights).enumerate() {
        let input = if i == 0 { state } else { &hidden[i - 1] };
        let pre = w.dot(input);
        match spec.kind {
            LayerKind::SoftmaxOutput { temperature } => {
                let probs = softmax(&(pre * temperature));
                let u: f64 = rng.random();
                action = Some(Action::Discrete(sample_categorical(&probs, u)));
                noise.push(Array1::zeros(0));
            }
            LayerKind::NormalSoftplus { sigma_sq } | LayerKind::LinearGaussianOutput { sigma_sq } => {
                let mean = match spec.kind {
                    LayerKind::NormalSoftplus { .. } => softplus_vec(&pre),
                    _ => pre,
                };
                let zeta: Array1<f64> =
                    Array1::from_shape_fn(spec.out_dim, |_| rng.sample(StandardNormal));
                let sigma = sigma_sq.sqrt();
                let mut value = &mean + &(&zeta * sigma);
                if i + 1 < n {
                    if let (Some(p), Some(frozen)) = (freeze_prob, frozen.as_mut()) {
                        let mask: Vec<bool> = (0..spec.out_dim).map(|_| rng.random::<f64>() < p).collect();
                        for (k, &off) in mask.iter().enumerate() {
                            if off {
                                value[k] = mean[k];
                            }
                        }
                        frozen.push(mask);
                    }
                    hidden.push(value);
                } else {
                    action = Some(Action::Continuous(value));
                }
                noise.push(zeta);
            }
        }
    }
    Ok(ForwardSample {
        hidden: HiddenState {
            state: state.clone(),
            hidden,
            action: action.expect("output layer always produces an action"),
        },
        noise,
        frozen,
    })
}

fn sample_categorical(probs: &Array1<f64>, u: f64) -> usize {
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Deterministic pass with all noise set to zero; returns hidden means and
/// the output layer's mean (or probabilities for a softmax output).
pub fn mean_forward(params: &NetworkParams, state: &Array1<f64>) -> Result<(Vec<Array1<f64>>, Array1<f64>)> {
    check_len("state", params.input_dim(), state.len())?;
    let mut hidden: Vec<Array1<f64>> = Vec::with_capacity(params.num_layers() - 1);
    let n = params.num_layers();
    for i in 0..n - 1 {
        let input = if i == 0 { state } else { &hidden[i - 1] };
        hidden.push(softplus_vec(&params.weights[i].dot(input)));
    }
    let input = if n == 1 { state } else { &hidden[n - 2] };
    let pre = params.weights[n - 1].dot(input);
    let out = match params.layers[n - 1].kind {
        LayerKind::SoftmaxOutput { temperature } => softmax(&(pre * temperature)),
        LayerKind::NormalSoftplus { .. } => softplus_vec(&pre),
        LayerKind::LinearGaussianOutput { .. } => pre,
    };
    Ok((hidden, out))
}

/// Conditional mean of a Gaussian layer (or softmax probabilities).
pub fn layer_mean(params: &NetworkParams, layer: usize, input: &Array1<f64>) -> Result<Array1<f64>> {
    let spec = &params.layers[layer];
    check_len("layer input", spec.in_dim, input.len())?;
    Ok(LayerEval::new(spec, &params.weights[layer], input).mean)
}

/// Per-layer quantities shared by densities and gradients.
pub(crate) struct LayerEval {
    /// Softplus mean, linear mean, or softmax probabilities.
    pub mean: Array1<f64>,
    /// `f'(W h)`; ones for linear layers, unused for softmax.
    pub slope: Array1<f64>,
}

impl LayerEval {
    pub(crate) fn new(spec: &LayerSpec, w: &Array2<f64>, input: &Array1<f64>) -> Self {
        let pre = w.dot(input);
        match spec.kind {
            LayerKind::NormalSoftplus { .. } => Self {
                mean: softplus_vec(&pre),
                slope: pre.mapv(sigmoid),
            },
            LayerKind::LinearGaussianOutput { .. } => Self {
                slope: Array1::ones(pre.len()),
                mean: pre,
            },
            LayerKind::SoftmaxOutput { temperature } => Self {
                mean: softmax(&(pre * temperature)),
                slope: Array1::zeros(0),
            },
        }
    }
}

fn check_output(params: &NetworkParams, layer: usize, output: LayerValue<'_>) -> Result<()> {
    let spec = &params.layers[layer];
    match (spec.kind, output) {
        (LayerKind::SoftmaxOutput { .. }, LayerValue::Discrete(a)) => {
            if a < spec.out_dim {
                Ok(())
            } else {
                Err(Error::LayerKind {
                    layer,
                    message: format!("action index {a} out of range for {} actions", spec.out_dim),
                })
            }
        }
        (LayerKind::SoftmaxOutput { .. }, LayerValue::Real(_)) => Err(Error::LayerKind {
            layer,
            message: "softmax layer needs a discrete value".into(),
        }),
        (_, LayerValue::Real(h)) => check_len("layer output", spec.out_dim, h.len()),
        (_, LayerValue::Discrete(_)) => Err(Error::LayerKind {
            layer,
            message: "Gaussian layer needs a real value".into(),
        }),
    }
}

fn checked_eval(
    params: &NetworkParams,
    layer: usize,
    input: &Array1<f64>,
    output: LayerValue<'_>,
) -> Result<LayerEval> {
    if layer >= params.num_layers() {
        return Err(Error::LayerKind {
            layer,
            message: "no such layer".into(),
        });
    }
    let spec = &params.layers[layer];
    check_len("layer input", spec.in_dim, input.len())?;
    check_output(params, layer, output)?;
    if let Some(sigma_sq) = spec.kind.sigma_sq() {
        if sigma_sq <= 0.0 {
            return Err(Error::UndefinedDensity { layer });
        }
    }
    Ok(LayerEval::new(spec, &params.weights[layer], input))
}

/// Score signal: `d log pi / d (W h_prev)`.
/// `onehot(a) - p`, with the `a` entry summed from the other probabilities
/// so it keeps its precision when `p[a]` is close to 1.
pub fn softmax_score(p: &Array1<f64>, a: usize) -> Array1<f64> {
    let mut s = -p;
    s[a] = p.iter().enumerate().filter(|&(b, _)| b != a).map(|(_, v)| v).sum();
    s
}

pub(crate) fn signal_from_eval(spec: &LayerSpec, eval: &LayerEval, output: LayerValue<'_>) -> Array1<f64> {
    match (spec.kind, output) {
        (LayerKind::SoftmaxOutput { temperature }, LayerValue::Discrete(a)) => {
            softmax_score(&eval.mean, a) * temperature
        }
        (kind, LayerValue::Real(h)) => {
            let sigma_sq = kind.sigma_sq().expect("checked Gaussian");
            (h - &eval.mean) * &eval.slope / sigma_sq
        }
        _ => unreachable!("output kind checked by check_output"),
    }
}

/// `log pi_layer(input, output)`.
pub fn log_pi_layer(
    params: &NetworkParams,
    layer: usize,
    input: &Array1<f64>,
    output: LayerValue<'_>,
) -> Result<f64> {
    let eval = checked_eval(params, layer, input, output)?;
    Ok(log_pi_from_eval(&params.layers[layer], &eval, output))
}

pub(crate) fn log_pi_from_eval(spec: &LayerSpec, eval: &LayerEval, output: LayerValue<'_>) -> f64 {
    match (spec.kind, output) {
        (LayerKind::SoftmaxOutput { .. }, LayerValue::Discrete(a)) => eval.mean[a].ln(),
        (kind, LayerValue::Real(h)) => {
            let sigma_sq = kind.sigma_sq().expect("checked Gaussian");
            let sq: f64 = h
                .iter()
                .zip(&eval.mean)
                .map(|(x, m)| (x - m) * (x - m))
                .sum();
            -sq / (2.0 * sigma_sq) - 0.5 * h.len() as f64 * (LN_2PI + sigma_sq.ln())
        }
        _ => unreachable!("output kind checked by check_output"),
    }
}

/// Log-probability of a softmax layer computed through log-sum-exp, for
/// callers that need accuracy far in the tails.
pub fn log_softmax_layer(params: &NetworkParams, layer: usize, input: &Array1<f64>, action: usize) -> Result<f64> {
    checked_eval(params, layer, input, LayerValue::Discrete(action))?;
    match params.layers[layer].kind {
        LayerKind::SoftmaxOutput { temperature } => {
            let logits = params.weights[layer].dot(input) * temperature;
            Ok(logits[action] - log_sum_exp(&logits))
        }
        _ => Err(Error::LayerKind {
            layer,
            message: "not a softmax layer".into(),
        }),
    }
}

/// Gradient of `log pi_layer` with respect to the layer's weights.
pub fn grad_logpi_params(
    params: &NetworkParams,
    layer: usize,
    input: &Array1<f64>,
    output: LayerValue<'_>,
) -> Result<Array2<f64>> {
    let eval = checked_eval(params, layer, input, output)?;
    let signal = signal_from_eval(&params.layers[layer], &eval, output);
    Ok(outer(&signal, input))
}

/// Gradient of `log pi_layer` with respect to the layer's input.
pub fn grad_logpi_input(
    params: &NetworkParams,
    layer: usize,
    input: &Array1<f64>,
    output: LayerValue<'_>,
) -> Result<Array1<f64>> {
    let eval = checked_eval(params, layer, input, output)?;
    let signal = signal_from_eval(&params.layers[layer], &eval, output);
    Ok(params.weights[layer].t().dot(&signal))
}

/// Gradient of `log pi_layer` with respect to its own (real) value.
pub fn grad_logpi_output(
    params: &NetworkParams,
    layer: usize,
    input: &Array1<f64>,
    output: &Array1<f64>,
) -> Result<Array1<f64>> {
    let value = LayerValue::Real(output);
    let eval = checked_eval(params, layer, input, value)?;
    let sigma_sq = params.layers[layer].kind.sigma_sq().expect("checked Gaussian");
    Ok((&eval.mean - output) / sigma_sq)
}

/// `a * b^T`.
pub fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut m = Array2::zeros((a.len(), b.len()));
    for (mut row, &x) in m.rows_mut().into_iter().zip(a) {
        row.scaled_add(x, b);
    }
    m
}

/// Scores of all layers at `hidden`: `grad_W log pi_l` for every `l`.
pub fn grad_logpi_all(params: &NetworkParams, hidden: &HiddenState) -> Result<Vec<Array2<f64>>> {
    hidden.check_dims(params)?;
    (0..params.num_layers())
        .map(|i| grad_logpi_params(params, i, hidden.layer_input(i), hidden.layer_output(i)))
        .collect()
}

/// Energy `-sum_l log pi_l`, i.e. `-log Pr(H = h | S = s, A = a)` up to the
/// additive constant `-log Pr(A = a | S = s)`. Only differences and gradients
/// of this quantity are meaningful.
pub fn energy(hidden: &HiddenState, params: &NetworkParams) -> Result<f64> {
    hidden.check_dims(params)?;
    let mut total = 0.0;
    for i in 0..params.num_layers() {
        total -= log_pi_layer(params, i, hidden.layer_input(i), hidden.layer_output(i))?;
    }
    Ok(total)
}

/// Gradient of [`energy`] with respect to every hidden layer, evaluated
/// synchronously from the current values.
pub fn grad_energy_hidden(hidden: &HiddenState, params: &NetworkParams) -> Result<Vec<Array1<f64>>> {
    hidden.check_dims(params)?;
    let n = params.num_layers();
    for (i, spec) in params.layers.iter().enumerate() {
        if let Some(s) = spec.kind.sigma_sq() {
            if s <= 0.0 {
                return Err(Error::UndefinedDensity { layer: i });
            }
        }
    }
    let evals: Vec<LayerEval> = (0..n)
        .map(|i| LayerEval::new(&params.layers[i], &params.weights[i], hidden.layer_input(i)))
        .collect();
    let signals: Vec<Array1<f64>> = (0..n)
        .map(|i| signal_from_eval(&params.layers[i], &evals[i], hidden.layer_output(i)))
        .collect();
    Ok(energy_grads_from(params, hidden, &evals, &signals))
}

/// `-(d log pi_l / d h_l + d log pi_{l+1} / d h_l)` for each hidden layer.
pub(crate) fn energy_grads_from(
    params: &NetworkParams,
    hidden: &HiddenState,
    evals: &[LayerEval],
    signals: &[Array1<f64>],
) -> Vec<Array1<f64>> {
    hidden
        .hidden
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let sigma_sq = params.layers[i].kind.sigma_sq().expect("hidden layers are Gaussian");
            let own = (h - &evals[i].mean) / sigma_sq;
            own - params.weights[i + 1].t().dot(&signals[i + 1])
        })
        .collect()
}
