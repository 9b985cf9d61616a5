//! Independent reference densities and finite-difference gradient checks.
//!
//! Nothing here calls the library's density or gradient code: log-densities
//! are rewritten with explicit loops and differentiated numerically, then
//! compared with the analytic gradients the library returns.

#![allow(dead_code)]

use mapprop::learners::backprop::{Head, Mlp};
use mapprop::learners::reparam::reparam_gradient;
use mapprop::network::{
    grad_energy_hidden, grad_logpi_input, grad_logpi_output, grad_logpi_params, Action, HiddenState, LayerKind,
    LayerSpec, LayerValue, NetworkParams,
};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-6;
pub const SCALE_FLOOR: f64 = 1e-8;

fn ref_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn matvec(w: &Array2<f64>, x: &Array1<f64>) -> Vec<f64> {
    (0..w.nrows())
        .map(|i| (0..w.ncols()).map(|j| w[[i, j]] * x[j]).sum())
        .collect()
}

fn gauss_logpdf(x: &[f64], mean: &[f64], var: f64) -> f64 {
    x.iter()
        .zip(mean)
        .map(|(a, m)| -(a - m).powi(2) / (2.0 * var) - 0.5 * (2.0 * std::f64::consts::PI * var).ln())
        .sum()
}

/// `log softmax(logits)[a]`, keeping full relative precision when `a`
/// holds nearly all the mass: the normalizer is `ln_1p` of the other terms.
fn log_softmax_ref(logits: &[f64], a: usize) -> f64 {
    let top = (0..logits.len())
        .max_by(|&i, &j| logits[i].total_cmp(&logits[j]))
        .unwrap();
    let rest: f64 = (0..logits.len())
        .filter(|&b| b != top)
        .map(|b| (logits[b] - logits[top]).exp())
        .sum();
    logits[a] - logits[top] - rest.ln_1p()
}

/// Discrete or real value of one layer.
#[derive(Debug, Clone)]
pub enum Val {
    Real(Array1<f64>),
    Disc(usize),
}

pub fn ref_log_pi(kind: LayerKind, w: &Array2<f64>, input: &Array1<f64>, out: &Val) -> f64 {
    let z = matvec(w, input);
    match (kind, out) {
        (LayerKind::NormalSoftplus { sigma_sq }, Val::Real(h)) => {
            let mean: Vec<f64> = z.iter().map(|&v| ref_softplus(v)).collect();
            gauss_logpdf(h.as_slice().unwrap(), &mean, sigma_sq)
        }
        (LayerKind::LinearGaussianOutput { sigma_sq }, Val::Real(h)) => gauss_logpdf(h.as_slice().unwrap(), &z, sigma_sq),
        (LayerKind::SoftmaxOutput { temperature }, Val::Disc(a)) => {
            let logits: Vec<f64> = z.iter().map(|v| v * temperature).collect();
            log_softmax_ref(&logits, *a)
        }
        _ => panic!("value does not match layer kind"),
    }
}

/// A random network plus one full assignment of its layer values.
pub struct Instance {
    pub params: NetworkParams,
    pub state: Array1<f64>,
    pub hidden: Vec<Array1<f64>>,
    pub action: Val,
    /// Standard-normal noise that reproduces `hidden` from `state`.
    pub noise: Vec<Array1<f64>>,
}

impl Instance {
    pub fn action(&self) -> Action {
        match &self.action {
            Val::Real(a) => Action::Continuous(a.clone()),
            Val::Disc(a) => Action::Discrete(*a),
        }
    }

    pub fn hidden_state(&self) -> HiddenState {
        HiddenState {
            state: self.state.clone(),
            hidden: self.hidden.clone(),
            action: self.action(),
        }
    }

    fn input(&self, layer: usize) -> &Array1<f64> {
        if layer == 0 {
            &self.state
        } else {
            &self.hidden[layer - 1]
        }
    }

    fn output(&self, layer: usize) -> Val {
        if layer < self.hidden.len() {
            Val::Real(self.hidden[layer].clone())
        } else {
            self.action.clone()
        }
    }
}

fn normal_vec<R: Rng>(n: usize, scale: f64, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Random depth, widths, output family and weights; hidden values are a
/// forward sample so every density stays in a typical region.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_hidden = rng.random_range(1..=3);
    let mut dims = vec![rng.random_range(1..=5)];
    for _ in 0..n_hidden {
        dims.push(rng.random_range(1..=5));
    }
    let softmax = rng.random_bool(0.5);
    let out_dim = if softmax { rng.random_range(2..=4) } else { rng.random_range(1..=3) };
    dims.push(out_dim);
    let mut layers = Vec::new();
    for l in 0..=n_hidden {
        let kind = if l < n_hidden {
            LayerKind::NormalSoftplus {
                sigma_sq: rng.random_range(0.1..1.5),
            }
        } else if softmax {
            LayerKind::SoftmaxOutput {
                temperature: rng.random_range(0.5..2.0),
            }
        } else {
            LayerKind::LinearGaussianOutput {
                sigma_sq: rng.random_range(0.1..1.5),
            }
        };
        layers.push(LayerSpec::new(kind, dims[l], dims[l + 1]));
    }
    let weights: Vec<Array2<f64>> = layers
        .iter()
        .map(|s| Array2::from_shape_fn((s.out_dim, s.in_dim), |_| 0.7 * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let state = normal_vec(dims[0], 1.0, &mut rng);
    let mut hidden = Vec::new();
    let mut noise = Vec::new();
    let mut x = state.clone();
    for l in 0..n_hidden {
        let sigma = layers[l].kind.sigma_sq().unwrap().sqrt();
        let z = normal_vec(dims[l + 1], 1.0, &mut rng);
        let h: Array1<f64> = matvec(&weights[l], &x)
            .iter()
            .zip(&z)
            .map(|(&v, e)| ref_softplus(v) + sigma * e)
            .collect();
        noise.push(z);
        hidden.push(h.clone());
        x = h;
    }
    let action = if softmax {
        Val::Disc(rng.random_range(0..out_dim))
    } else {
        Val::Real(normal_vec(out_dim, 1.0, &mut rng))
    };
    Instance {
        params: NetworkParams::new(layers, weights).unwrap(),
        state,
        hidden,
        action,
        noise,
    }
}

/// `||a - b|| / max(||a||, ||b||)`, taken over every entry of both lists.
/// Scales below `SCALE_FLOOR` count as the floor, so a saturated softmax
/// whose gradient is `1e-28` against a finite difference of exactly zero is
/// not reported as a 100% error.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(SCALE_FLOOR)
}

fn central<F: FnMut(f64) -> f64>(mut f: F, x0: f64) -> f64 {
    (f(x0 + FD_STEP) - f(x0 - FD_STEP)) / (2.0 * FD_STEP)
}

fn flat(ms: &[Array2<f64>]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.iter().copied()).collect()
}

fn value_ref(v: &Val) -> LayerValue<'_> {
    match v {
        Val::Real(a) => LayerValue::Real(a),
        Val::Disc(a) => LayerValue::Discrete(*a),
    }
}

/// Weight and input scores of every layer, plus the output-value score of
/// Gaussian layers.
pub fn logpi_error(inst: &Instance) -> f64 {
    let p = &inst.params;
    let mut worst = 0.0f64;
    for l in 0..p.num_layers() {
        let kind = p.layers()[l].kind;
        let input = inst.input(l).clone();
        let out = inst.output(l);
        let w0 = p.weights()[l].clone();

        let analytic = grad_logpi_params(p, l, &input, value_ref(&out)).unwrap();
        let mut fd = Array2::zeros(w0.dim());
        for ((i, j), g) in fd.indexed_iter_mut() {
            *g = central(
                |x| {
                    let mut w = w0.clone();
                    w[[i, j]] = x;
                    ref_log_pi(kind, &w, &input, &out)
                },
                w0[[i, j]],
            );
        }
        worst = worst.max(rel_err(analytic.as_slice().unwrap(), fd.as_slice().unwrap()));

        let analytic = grad_logpi_input(p, l, &input, value_ref(&out)).unwrap();
        let fd: Vec<f64> = (0..input.len())
            .map(|k| {
                central(
                    |x| {
                        let mut s = input.clone();
                        s[k] = x;
                        ref_log_pi(kind, &w0, &s, &out)
                    },
                    input[k],
                )
            })
            .collect();
        worst = worst.max(rel_err(analytic.as_slice().unwrap(), &fd));

        if let Val::Real(h) = &out {
            let analytic = grad_logpi_output(p, l, &input, h).unwrap();
            let fd: Vec<f64> = (0..h.len())
                .map(|k| {
                    central(
                        |x| {
                            let mut v = h.clone();
                            v[k] = x;
                            ref_log_pi(kind, &w0, &input, &Val::Real(v))
                        },
                        h[k],
                    )
                })
                .collect();
            worst = worst.max(rel_err(analytic.as_slice().unwrap(), &fd));
        }
    }
    worst
}

pub fn ref_energy(params: &NetworkParams, state: &Array1<f64>, hidden: &[Array1<f64>], action: &Val) -> f64 {
    let mut total = 0.0;
    for l in 0..params.num_layers() {
        let input = if l == 0 { state } else { &hidden[l - 1] };
        let out = if l < hidden.len() {
            Val::Real(hidden[l].clone())
        } else {
            action.clone()
        };
        total -= ref_log_pi(params.layers()[l].kind, &params.weights()[l], input, &out);
    }
    total
}

/// Energy gradient with respect to every hidden value.
pub fn energy_error(inst: &Instance) -> f64 {
    let analytic = grad_energy_hidden(&inst.hidden_state(), &inst.params).unwrap();
    let mut a = Vec::new();
    let mut fd = Vec::new();
    for (l, h) in inst.hidden.iter().enumerate() {
        a.extend(analytic[l].iter().copied());
        for k in 0..h.len() {
            fd.push(central(
                |x| {
                    let mut hs = inst.hidden.clone();
                    hs[l][k] = x;
                    ref_energy(&inst.params, &inst.state, &hs, &inst.action)
                },
                h[k],
            ));
        }
    }
    rel_err(&a, &fd)
}

/// `log pi_L` at the end of the reparameterized pass with weights `ws`.
pub fn ref_reparam_logpi(params: &NetworkParams, ws: &[Array2<f64>], state: &Array1<f64>, noise: &[Array1<f64>], action: &Val) -> f64 {
    let last = params.num_layers() - 1;
    let mut x = state.clone();
    for l in 0..last {
        let sigma = params.layers()[l].kind.sigma_sq().unwrap().sqrt();
        x = matvec(&ws[l], &x)
            .iter()
            .zip(&noise[l])
            .map(|(&v, e)| ref_softplus(v) + sigma * e)
            .collect();
    }
    ref_log_pi(params.layers()[last].kind, &ws[last], &x, action)
}

/// Pathwise gradient through the reparameterized network.
pub fn reparam_error(inst: &Instance) -> f64 {
    let analytic = reparam_gradient(&inst.params, &inst.state, &inst.action(), &inst.noise).unwrap();
    let w0: Vec<Array2<f64>> = inst.params.weights().to_vec();
    let mut fd = Vec::new();
    for l in 0..w0.len() {
        for ((i, j), &v) in w0[l].indexed_iter() {
            fd.push(central(
                |x| {
                    let mut ws = w0.clone();
                    ws[l][[i, j]] = x;
                    ref_reparam_logpi(&inst.params, &ws, &inst.state, &inst.noise, &inst.action)
                },
                v,
            ));
        }
    }
    rel_err(&flat(&analytic), &fd)
}

fn ref_mlp_out(ws: &[Array2<f64>], x: &Array1<f64>) -> Vec<f64> {
    let mut h = x.clone();
    for w in &ws[..ws.len() - 1] {
        h = matvec(w, &h).into_iter().map(ref_softplus).collect();
    }
    matvec(&ws[ws.len() - 1], &h)
}

/// Backprop ANN: log-probability gradient of the policy head and the value
/// gradient of a value head sharing the same hidden weights.
pub fn mlp_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let input = rng.random_range(1..=5);
    let hidden: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=5)).collect();
    let x = normal_vec(input, 1.0, &mut rng);
    let softmax = rng.random_bool(0.5);
    let (head, out_dim, action) = if softmax {
        let n = rng.random_range(2..=4);
        let a = rng.random_range(0..n);
        (
            Head::Softmax {
                temperature: rng.random_range(0.5..2.0),
            },
            n,
            Val::Disc(a),
        )
    } else {
        let n = rng.random_range(1..=3);
        (
            Head::Gaussian {
                sigma_sq: rng.random_range(0.1..1.5),
            },
            n,
            Val::Real(normal_vec(n, 1.0, &mut rng)),
        )
    };
    let net = Mlp::glorot(input, &hidden, out_dim, head, &mut rng);
    let logp = |ws: &[Array2<f64>]| -> f64 {
        let out = ref_mlp_out(ws, &x);
        match (head, &action) {
            (Head::Softmax { temperature }, Val::Disc(a)) => {
                let logits: Vec<f64> = out.iter().map(|v| v * temperature).collect();
                log_softmax_ref(&logits, *a)
            }
            (Head::Gaussian { sigma_sq }, Val::Real(a)) => gauss_logpdf(a.as_slice().unwrap(), &out, sigma_sq),
            _ => unreachable!(),
        }
    };
    let act = match &action {
        Val::Real(a) => Action::Continuous(a.clone()),
        Val::Disc(a) => Action::Discrete(*a),
    };
    let analytic = net.log_prob_grad(&x, &act).unwrap();
    let mut worst = rel_err(&flat(&analytic), &fd_weights(&net.weights, logp));

    let mut vnet = net.clone();
    vnet.head = Head::Value;
    let last = vnet.weights.len() - 1;
    vnet.weights[last] = vnet.weights[last].slice(ndarray::s![0..1, ..]).to_owned();
    let (_, analytic) = vnet.value_grad(&x).unwrap();
    let fd = fd_weights(&vnet.weights, |ws| ref_mlp_out(ws, &x)[0]);
    worst = worst.max(rel_err(&flat(&analytic), &fd));
    worst
}

fn fd_weights<F: Fn(&[Array2<f64>]) -> f64>(w0: &[Array2<f64>], f: F) -> Vec<f64> {
    let mut fd = Vec::new();
    for l in 0..w0.len() {
        for ((i, j), &v) in w0[l].indexed_iter() {
            fd.push(central(
                |x| {
                    let mut ws = w0.to_vec();
                    ws[l][[i, j]] = x;
                    f(&ws)
                },
                v,
            ));
        }
    }
    fd
}

/// Worst relative error of each gradient family over `n` random instances.
pub fn gradient_suite(n: u64, base_seed: u64) -> [(&'static str, f64); 4] {
    let mut worst = [0.0f64; 4];
    for s in 0..n {
        let inst = random_instance(base_seed + s);
        worst[0] = worst[0].max(logpi_error(&inst));
        worst[1] = worst[1].max(energy_error(&inst));
        worst[2] = worst[2].max(reparam_error(&inst));
        worst[3] = worst[3].max(mlp_error(base_seed + s));
    }
    [
        ("log_pi", worst[0]),
        ("energy", worst[1]),
        ("reparam", worst[2]),
        ("ann", worst[3]),
    ]
}
