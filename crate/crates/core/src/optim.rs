//! Bias-corrected Adam, plain SGD, and linear learning-rate annealing.

use ndarray::Array2;

use crate::error::{check_len, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    /// `delta = alpha * gradient`.
    Sgd,
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Anneal {
    #[default]
    None,
    /// Linear ramp from `base` at step 0 to `final_fraction * base` at
    /// `end_step`, constant afterwards.
    Linear { end_step: u64, final_fraction: f64 },
}

pub fn anneal_alpha(base: f64, step: u64, schedule: Anneal) -> f64 {
    match schedule {
        Anneal::None => base,
        Anneal::Linear {
            end_step,
            final_fraction,
        } => {
            if end_step == 0 || step >= end_step {
                base * final_fraction
            } else {
                let frac = step as f64 / end_step as f64;
                base * (1.0 - frac * (1.0 - final_fraction))
            }
        }
    }
}

/// Moment accumulators of one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    pub step_count: u64,
}

impl AdamMoments {
    pub fn zeros_like(shapes: &[Array2<f64>]) -> Self {
        let zeros: Vec<Array2<f64>> = shapes.iter().map(|w| Array2::zeros(w.dim())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step_count: 0,
        }
    }

    /// One optimizer step on `gradient` (an ascent direction); returns the
    /// deltas to add to the parameters. `alphas` holds one step size per
    /// matrix.
    pub fn step(&mut self, gradient: &[Array2<f64>], alphas: &[f64], optimizer: Optimizer) -> Result<Vec<Array2<f64>>> {
        check_len("gradient matrices", self.m.len(), gradient.len())?;
        check_len("step sizes", self.m.len(), alphas.len())?;
        match optimizer {
            Optimizer::Sgd => Ok(gradient.iter().zip(alphas).map(|(g, &a)| g * a).collect()),
            Optimizer::Adam { beta1, beta2, eps } => {
                self.step_count += 1;
                let t = self.step_count as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let mut deltas = Vec::with_capacity(gradient.len());
                for (((m, v), g), &alpha) in self.m.iter_mut().zip(self.v.iter_mut()).zip(gradient).zip(alphas) {
                    check_len("gradient rows", m.nrows(), g.nrows())?;
                    check_len("gradient cols", m.ncols(), g.ncols())?;
                    let mut d = Array2::zeros(g.dim());
                    ndarray::Zip::from(&mut d)
                        .and(m)
                        .and(v)
                        .and(g)
                        .for_each(|d, m, v, &g| {
                            *m = beta1 * *m + (1.0 - beta1) * g;
                            *v = beta2 * *v + (1.0 - beta2) * g * g;
                            let m_hat = *m / c1;
                            let v_hat = *v / c2;
                            *d = alpha * m_hat / (v_hat.sqrt() + eps);
                        });
                    deltas.push(d);
                }
                Ok(deltas)
            }
        }
    }
}
