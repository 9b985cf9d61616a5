//! Pathwise gradient of the output log-density through the reparameterized
//! network `h^l = softplus(W^l h^{l-1}) + sigma_l * zeta^l`, with the noise
//! `zeta` held fixed.

use ndarray::{Array1, Array2};

use super::LearnerConfig;
use crate::error::{check_len, Error, Result};
use crate::network::{outer, sigmoid, signal_from_eval, softplus_vec, Action, LayerEval, LayerKind, NetworkParams};

/// Hidden values produced by the reparameterized forward pass.
pub fn reparam_forward(params: &NetworkParams, state: &Array1<f64>, noise: &[Array1<f64>]) -> Result<Vec<Array1<f64>>> {
    Ok(forward(params, state, noise)?.1)
}

/// Pre-activations and values of every hidden layer.
fn forward(
    params: &NetworkParams,
    state: &Array1<f64>,
    noise: &[Array1<f64>],
) -> Result<(Vec<Array1<f64>>, Vec<Array1<f64>>)> {
    check_len("state", params.input_dim(), state.len())?;
    let n_hidden = params.num_layers() - 1;
    if noise.len() < n_hidden {
        return Err(Error::DimensionMismatch {
            context: "noise layers".into(),
            expected: n_hidden,
            got: noise.len(),
        });
    }
    let mut pres = Vec::with_capacity(n_hidden);
    let mut values: Vec<Array1<f64>> = Vec::with_capacity(n_hidden);
    for l in 0..n_hidden {
        let spec = &params.layers()[l];
        let sigma_sq = match spec.kind {
            LayerKind::NormalSoftplus { sigma_sq } => sigma_sq,
            _ => {
                return Err(Error::LayerKind {
                    layer: l,
                    message: "reparameterization needs softplus Gaussian hidden layers".into(),
                })
            }
        };
        check_len("noise", spec.out_dim, noise[l].len())?;
        let input = if l == 0 { state } else { &values[l - 1] };
        let pre = params.weights()[l].dot(input);
        let h = softplus_vec(&pre) + &noise[l] * sigma_sq.sqrt();
        pres.push(pre);
        values.push(h);
    }
    Ok((pres, values))
}

/// `grad_{W^l} log pi_L(h^{L-1}(zeta; W, s), a)` for every layer, by reverse
/// accumulation through the deterministic reparameterized pass.
pub fn reparam_gradient(
    params: &NetworkParams,
    state: &Array1<f64>,
    action: &Action,
    noise: &[Array1<f64>],
) -> Result<Vec<Array2<f64>>> {
    let (pres, values) = forward(params, state, noise)?;
    let last = params.num_layers() - 1;
    let top_input = if last == 0 { state } else { &values[last - 1] };
    let spec = &params.layers()[last];
    let value = action.value();
    // Reuse the density code for the output layer's score signal.
    crate::network::log_pi_layer(params, last, top_input, value)?;
    let eval = LayerEval::new(spec, &params.weights()[last], top_input);
    let signal = signal_from_eval(spec, &eval, value);

    let mut grads = vec![Array2::zeros((0, 0)); params.num_layers()];
    grads[last] = outer(&signal, top_input);
    let mut upstream = params.weights()[last].t().dot(&signal);
    for l in (0..last).rev() {
        let d_pre = &upstream * &pres[l].mapv(sigmoid);
        let input = if l == 0 { state } else { &values[l - 1] };
        grads[l] = outer(&d_pre, input);
        if l > 0 {
            upstream = params.weights()[l].t().dot(&d_pre);
        }
    }
    Ok(grads)
}

/// `W^l += alpha_l * G * reparam_gradient`.
pub fn reparam_backprop_update(
    params: &mut NetworkParams,
    state: &Array1<f64>,
    action: &Action,
    ret: f64,
    noise: &[Array1<f64>],
    cfg: &LearnerConfig,
) -> Result<()> {
    cfg.validate(params.num_layers())?;
    let grads = reparam_gradient(params, state, action, noise)?;
    let deltas: Vec<Array2<f64>> = grads
        .iter()
        .zip(&cfg.alphas)
        .map(|(g, &a)| g * (a * ret))
        .collect();
    params.add_scaled(&deltas, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{layer_stack, sample_forward_recorded};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_reproduces_recorded_sample() {
        let layers = layer_stack(3, &[4, 2], &[0.3, 0.7], LayerKind::SoftmaxOutput { temperature: 1.5 }, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = NetworkParams::glorot(layers, &mut rng).unwrap();
        let s = array![0.5, -0.5, 1.0];
        let fs = sample_forward_recorded(&params, &s, None, &mut rng).unwrap();
        let values = reparam_forward(&params, &s, &fs.noise).unwrap();
        for (a, b) in values.iter().zip(&fs.hidden.hidden) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_return_is_zero_update() {
        let layers = layer_stack(3, &[4], &[0.3], LayerKind::LinearGaussianOutput { sigma_sq: 0.5 }, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = NetworkParams::glorot(layers, &mut rng).unwrap();
        let before = params.clone();
        let s = array![0.5, -0.5, 1.0];
        let fs = sample_forward_recorded(&params, &s, None, &mut rng).unwrap();
        let cfg = LearnerConfig {
            alphas: vec![0.1, 0.1],
            ..LearnerConfig::default()
        };
        reparam_backprop_update(&mut params, &s, &fs.hidden.action, 0.0, &fs.noise, &cfg).unwrap();
        assert_eq!(params, before);
    }
}
