use std::f64::consts::PI;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{discrete_action, ActionKind, EnvSpec, Environment, EpisodeClock, Transition};
use crate::error::Result;
use crate::network::Action;

pub const DT: f64 = 0.2;
pub const LINK_LENGTH_1: f64 = 1.0;
pub const LINK_MASS_1: f64 = 1.0;
pub const LINK_MASS_2: f64 = 1.0;
pub const LINK_COM_POS_1: f64 = 0.5;
pub const LINK_COM_POS_2: f64 = 0.5;
pub const LINK_MOI: f64 = 1.0;
pub const MAX_VEL_1: f64 = 4.0 * PI;
pub const MAX_VEL_2: f64 = 9.0 * PI;
pub const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];
pub const GRAVITY: f64 = 9.8;
pub const MAX_STEPS: usize = 500;

/// Two-link swing-up; state `[theta1, theta2, dtheta1, dtheta2]`, observation
/// `[cos t1, sin t1, cos t2, sin t2, dt1, dt2]`, -1 reward until the tip
/// clears the bar. One RK4 step of length `DT` per action.
#[derive(Debug, Clone, Default)]
pub struct Acrobot {
    state: [f64; 4],
    clock: EpisodeClock,
}

/// Time derivative of `[theta1, theta2, dtheta1, dtheta2]` under torque `a`.
pub fn dynamics(s: [f64; 4], a: f64) -> [f64; 4] {
    let (m1, m2, l1) = (LINK_MASS_1, LINK_MASS_2, LINK_LENGTH_1);
    let (lc1, lc2, i1, i2) = (LINK_COM_POS_1, LINK_COM_POS_2, LINK_MOI, LINK_MOI);
    let [theta1, theta2, dtheta1, dtheta2] = s;
    let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos()) + i1 + i2;
    let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
    let phi2 = m2 * lc2 * GRAVITY * (theta1 + theta2 - PI / 2.0).cos();
    let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
        - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
        + (m1 * lc1 + m2 * l1) * GRAVITY * (theta1 - PI / 2.0).cos()
        + phi2;
    let ddtheta2 = (a + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin() - phi2)
        / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    [dtheta1, dtheta2, ddtheta1, ddtheta2]
}

fn rk4(s: [f64; 4], a: f64, dt: f64) -> [f64; 4] {
    let add = |y: [f64; 4], k: [f64; 4], h: f64| std::array::from_fn::<f64, 4, _>(|i| y[i] + h * k[i]);
    let k1 = dynamics(s, a);
    let k2 = dynamics(add(s, k1, dt / 2.0), a);
    let k3 = dynamics(add(s, k2, dt / 2.0), a);
    let k4 = dynamics(add(s, k3, dt), a);
    std::array::from_fn(|i| s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Wraps into `[lo, hi]` by whole periods.
fn wrap(mut x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    while x > hi {
        x -= span;
    }
    while x < lo {
        x += span;
    }
    x
}

impl Acrobot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    pub fn set_state(&mut self, state: [f64; 4]) -> Array1<f64> {
        self.state = state;
        self.clock.start();
        self.obs()
    }

    fn obs(&self) -> Array1<f64> {
        let [t1, t2, d1, d2] = self.state;
        Array1::from(vec![t1.cos(), t1.sin(), t2.cos(), t2.sin(), d1, d2])
    }
}

impl Environment for Acrobot {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: 6,
            action_kind: ActionKind::Discrete(3),
            max_steps: MAX_STEPS,
            reward_clip: None,
        }
    }

    fn reset(&mut self, seed: u64) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = std::array::from_fn(|_| rng.random_range(-0.1..0.1));
        self.set_state(s)
    }

    fn step(&mut self, action: &Action) -> Result<Transition> {
        self.clock.check("acrobot")?;
        let a = TORQUES[discrete_action(action, 3, "acrobot")?];
        let ns = rk4(self.state, a, DT);
        self.state = [
            wrap(ns[0], -PI, PI),
            wrap(ns[1], -PI, PI),
            ns[2].clamp(-MAX_VEL_1, MAX_VEL_1),
            ns[3].clamp(-MAX_VEL_2, MAX_VEL_2),
        ];
        let [t1, t2, _, _] = self.state;
        let terminal = -t1.cos() - (t1 + t2).cos() > 1.0;
        let truncated = self.clock.tick(terminal, MAX_STEPS);
        Ok(Transition {
            next_obs: self.obs(),
            reward: if terminal { 0.0 } else { -1.0 },
            terminal,
            truncated,
        })
    }
}
