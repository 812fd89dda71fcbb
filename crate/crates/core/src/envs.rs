//! Pendulum, CartPole and fully actuated Acrobot with exact dynamics.
//!
//! Each environment integrates a physical state (angles unwrapped, measured
//! from upright) and exposes an observation `s = (q, p)` where `q` holds
//! Cartesian coordinates comparable to the goal and `p` the velocities.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Matrix, Tape, Var};
use crate::ode::{integrate_partial, SolverConfig, VectorField};
use crate::trajectory::Trajectory;

pub const GRAVITY: f64 = 9.81;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Pendulum,
    CartPole,
    Acrobot,
}

impl std::str::FromStr for EnvKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pendulum" => Ok(EnvKind::Pendulum),
            "cartpole" => Ok(EnvKind::CartPole),
            "acrobot" => Ok(EnvKind::Acrobot),
            _ => Err(format!("unknown environment `{s}`")),
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::CartPole => "cartpole",
            EnvKind::Acrobot => "acrobot",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    /// Number of position features in the observation.
    pub q_dim: usize,
    /// Number of velocity features in the observation.
    pub p_dim: usize,
    pub act_dim: usize,
    pub phys_dim: usize,
    pub n0: usize,
    pub n_exp: usize,
    pub c_p: f64,
    pub c_a: f64,
    pub a_max: f64,
    /// Half-widths of the initial box around the hanging rest state, in
    /// physical coordinates.
    pub s_box: Vec<f64>,
    pub goal: Vec<f64>,
    /// Index of the first position feature compared against `goal`.
    pub goal_offset: usize,
    /// Pole or link length.
    pub length: f64,
    pub mass: f64,
}

impl EnvSpec {
    pub fn new(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Pendulum => Self::pendulum(),
            EnvKind::CartPole => Self::cartpole(),
            EnvKind::Acrobot => Self::acrobot(),
        }
    }

    /// Physical state `(θ, ω)`, θ from upright.
    pub fn pendulum() -> Self {
        EnvSpec {
            kind: EnvKind::Pendulum,
            q_dim: 2,
            p_dim: 1,
            act_dim: 1,
            phys_dim: 2,
            n0: 3,
            n_exp: 0,
            c_p: 1e-2,
            c_a: 1e-2,
            a_max: 2.0,
            s_box: vec![std::f64::consts::PI, 3.0],
            goal: vec![0.0, 1.0],
            goal_offset: 0,
            length: 1.0,
            mass: 1.0,
        }
    }

    /// Physical state `(x, θ, ẋ, θ̇)`; cart mass 1, pole mass 0.1.
    pub fn cartpole() -> Self {
        EnvSpec {
            kind: EnvKind::CartPole,
            q_dim: 3,
            p_dim: 2,
            act_dim: 1,
            phys_dim: 4,
            n0: 5,
            n_exp: 2,
            c_p: 1e-2,
            c_a: 1e-2,
            a_max: 3.0,
            s_box: vec![0.05; 4],
            goal: vec![0.0, 0.0, 1.0],
            goal_offset: 0,
            length: 1.0,
            mass: 0.1,
        }
    }

    /// Physical state `(θ1, θ2, ω1, ω2)`, θ2 relative to the first link.
    /// The observation holds both link tips so that it determines the
    /// configuration; the goal applies to the second tip.
    pub fn acrobot() -> Self {
        EnvSpec {
            kind: EnvKind::Acrobot,
            q_dim: 4,
            p_dim: 2,
            act_dim: 2,
            phys_dim: 4,
            n0: 7,
            n_exp: 3,
            c_p: 1e-4,
            c_a: 1e-2,
            a_max: 4.0,
            s_box: vec![0.1; 4],
            goal: vec![0.0, 2.0],
            goal_offset: 2,
            length: 1.0,
            mass: 1.0,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.q_dim + self.p_dim
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a_max > 0.0) || self.c_p < 0.0 || self.c_a < 0.0 || self.s_box.iter().any(|b| *b < 0.0) {
            return Err(Error::Config(format!("invalid constants for {}", self.kind)));
        }
        if self.s_box.len() != self.phys_dim || self.goal_offset + self.goal.len() > self.q_dim {
            return Err(Error::Config(format!("inconsistent dimensions for {}", self.kind)));
        }
        Ok(())
    }

    /// Resting configuration with every link hanging down.
    pub fn hanging_state(&self) -> Vec<f64> {
        let pi = std::f64::consts::PI;
        match self.kind {
            EnvKind::Pendulum => vec![pi, 0.0],
            EnvKind::CartPole => vec![0.0, pi, 0.0, 0.0],
            EnvKind::Acrobot => vec![pi, 0.0, 0.0, 0.0],
        }
    }

    /// Physical state with every position feature at the goal.
    pub fn upright_state(&self) -> Vec<f64> {
        vec![0.0; self.phys_dim]
    }

    pub fn sample_initial_state(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.hanging_state()
            .iter()
            .zip(&self.s_box)
            .map(|(x, b)| x + b * (2.0 * rng.random::<f64>() - 1.0))
            .collect()
    }

    pub fn clamp_action(&self, a: &mut [f64]) {
        for v in a {
            *v = v.clamp(-self.a_max, self.a_max);
        }
    }

    pub fn observe(&self, x: &[f64]) -> Vec<f64> {
        let l = self.length;
        match self.kind {
            EnvKind::Pendulum => vec![l * x[0].sin(), l * x[0].cos(), x[1]],
            EnvKind::CartPole => vec![x[0], l * x[1].sin(), l * x[1].cos(), x[2], x[3]],
            EnvKind::Acrobot => {
                let (x1, y1) = (l * x[0].sin(), l * x[0].cos());
                let a12 = x[0] + x[1];
                vec![x1, y1, x1 + l * a12.sin(), y1 + l * a12.cos(), x[2], x[3]]
            }
        }
    }

    /// Physical time derivative under action `a` (clamped to the bound).
    pub fn derivative(&self, x: &[f64], a: &[f64], dx: &mut [f64]) {
        let clamp = |v: f64| v.clamp(-self.a_max, self.a_max);
        let (m, l, g) = (self.mass, self.length, GRAVITY);
        match self.kind {
            EnvKind::Pendulum => {
                dx[0] = x[1];
                dx[1] = 1.5 * g / l * x[0].sin() + 3.0 * clamp(a[0]) / (m * l * l);
            }
            EnvKind::CartPole => {
                let total = 1.0 + m;
                let half = 0.5 * l;
                let (sin, cos) = x[1].sin_cos();
                let temp = (clamp(a[0]) + m * half * x[3] * x[3] * sin) / total;
                let theta_acc = (g * sin - cos * temp) / (half * (4.0 / 3.0 - m * cos * cos / total));
                dx[0] = x[2];
                dx[1] = x[3];
                dx[2] = temp - m * half * theta_acc * cos / total;
                dx[3] = theta_acc;
            }
            EnvKind::Acrobot => {
                let (m11, m12, m22) = self.acrobot_mass_matrix(x[1]);
                let (lc, coupling) = (0.5 * l, m * l * 0.5 * l);
                let (s2, s12) = (x[1].sin(), (x[0] + x[1]).sin());
                let h1 = -coupling * s2 * (2.0 * x[2] * x[3] + x[3] * x[3]);
                let h2 = coupling * s2 * x[2] * x[2];
                let g1 = -(m * lc + m * l) * g * x[0].sin() - m * lc * g * s12;
                let g2 = -m * lc * g * s12;
                let r1 = clamp(a[0]) - h1 - g1;
                let r2 = clamp(a[1]) - h2 - g2;
                let det = m11 * m22 - m12 * m12;
                dx[0] = x[2];
                dx[1] = x[3];
                dx[2] = (m22 * r1 - m12 * r2) / det;
                dx[3] = (m11 * r2 - m12 * r1) / det;
            }
        }
    }

    /// Uniform rods: centre of mass at half length, inertia `m l² / 12`.
    fn acrobot_mass_matrix(&self, theta2: f64) -> (f64, f64, f64) {
        let (m, l) = (self.mass, self.length);
        let lc = 0.5 * l;
        let inertia = m * l * l / 12.0;
        let c2 = theta2.cos();
        let m22 = m * lc * lc + inertia;
        let m12 = m * (lc * lc + l * lc * c2) + inertia;
        let m11 = m * lc * lc + inertia + m * (l * l + lc * lc + 2.0 * l * lc * c2) + inertia;
        (m11, m12, m22)
    }

    /// Total mechanical energy; its rate of change equals the power of the
    /// applied action.
    pub fn energy(&self, x: &[f64]) -> f64 {
        let (m, l, g) = (self.mass, self.length, GRAVITY);
        match self.kind {
            EnvKind::Pendulum => 0.5 * m * l * l / 3.0 * x[1] * x[1] + m * g * 0.5 * l * x[0].cos(),
            EnvKind::CartPole => {
                let half = 0.5 * l;
                let (xd, td) = (x[2], x[3]);
                0.5 * (1.0 + m) * xd * xd
                    + m * half * x[1].cos() * xd * td
                    + 0.5 * (4.0 / 3.0) * m * half * half * td * td
                    + m * g * half * x[1].cos()
            }
            EnvKind::Acrobot => {
                let (m11, m12, m22) = self.acrobot_mass_matrix(x[1]);
                let (w1, w2) = (x[2], x[3]);
                let kinetic = 0.5 * (m11 * w1 * w1 + 2.0 * m12 * w1 * w2 + m22 * w2 * w2);
                let lc = 0.5 * l;
                kinetic + (m * lc + m * l) * g * x[0].cos() + m * lc * g * (x[0] + x[1]).cos()
            }
        }
    }

    /// Power delivered by action `a` at physical state `x`.
    pub fn action_power(&self, x: &[f64], a: &[f64]) -> f64 {
        let clamp = |v: f64| v.clamp(-self.a_max, self.a_max);
        match self.kind {
            EnvKind::Pendulum => clamp(a[0]) * x[1],
            EnvKind::CartPole => clamp(a[0]) * x[2],
            EnvKind::Acrobot => clamp(a[0]) * x[2] + clamp(a[1]) * x[3],
        }
    }

    fn goal_q<'a>(&self, obs: &'a [f64]) -> &'a [f64] {
        &obs[self.goal_offset..self.goal_offset + self.goal.len()]
    }

    /// `‖q − goal‖` on the goal coordinates of an observation.
    pub fn goal_distance(&self, obs: &[f64]) -> f64 {
        self.goal_q(obs)
            .iter()
            .zip(&self.goal)
            .map(|(q, g)| (q - g).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `exp(−‖q − goal‖² − c_p‖p‖²) − c_a‖a‖²` for an observation `(q, p)`.
    pub fn reward(&self, obs: &[f64], a: &[f64]) -> f64 {
        let dq = self.goal_distance(obs).powi(2);
        let dp: f64 = obs[self.q_dim..].iter().map(|v| v * v).sum();
        let da: f64 = a.iter().map(|v| v * v).sum();
        (-dq - self.c_p * dp).exp() - self.c_a * da
    }

    /// Batched reward on the tape: `obs` is n×d, `act` is n×m, result n×1.
    pub fn reward_taped(&self, tape: &mut Tape, obs: Var, act: Var) -> Var {
        let q = tape.slice_cols(obs, self.goal_offset, self.goal_offset + self.goal.len());
        let neg_goal = tape.constant(Matrix::row_vector(&self.goal.iter().map(|g| -g).collect::<Vec<_>>()));
        let dq = tape.add_row(q, neg_goal);
        let dq = tape.square(dq);
        let dq = tape.row_sum(dq);
        let p = tape.slice_cols(obs, self.q_dim, self.obs_dim());
        let dp = tape.square(p);
        let dp = tape.row_sum(dp);
        let exponent = tape.lin_comb(&[(dq, -1.0), (dp, -self.c_p)]);
        let shaped = tape.exp(exponent);
        let da = tape.square(act);
        let da = tape.row_sum(da);
        tape.lin_comb(&[(shaped, 1.0), (da, -self.c_a)])
    }
}

/// Produces an action from time and the current observation.
pub trait Controller {
    fn act(&self, t: f64, obs: &[f64], out: &mut [f64]);
}

impl<F: Fn(f64, &[f64], &mut [f64])> Controller for F {
    fn act(&self, t: f64, obs: &[f64], out: &mut [f64]) {
        self(t, obs, out)
    }
}

/// The environment's physical field closed with a controller.
pub struct ClosedLoop<'a, C: ?Sized> {
    pub env: &'a EnvSpec,
    pub controller: &'a C,
}

impl<C: Controller + ?Sized> ClosedLoop<'_, C> {
    pub fn action(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.env.act_dim];
        self.controller.act(t, &self.env.observe(x), &mut a);
        self.env.clamp_action(&mut a);
        a
    }
}

impl<C: Controller + ?Sized> VectorField for ClosedLoop<'_, C> {
    fn dim(&self) -> usize {
        self.env.phys_dim
    }

    fn eval(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        let a = self.action(t, x);
        self.env.derivative(x, &a, dx);
    }
}

/// A real-world rollout: the recorded trajectory plus the physical states
/// reached (noise-free), which stop early on failure.
#[derive(Debug)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub physical: Vec<Vec<f64>>,
    pub failure: Option<Error>,
}

/// Integrates the closed loop with the reference RK78 solver, recording
/// observations (plus Gaussian noise of std `noise_std`) and the applied
/// actions at `eval_times`.
pub fn rollout_true(
    env: &EnvSpec,
    controller: &(impl Controller + ?Sized),
    x0: &[f64],
    eval_times: &[f64],
    noise_std: f64,
    rng: &mut impl Rng,
) -> Result<Rollout> {
    if !(noise_std >= 0.0) {
        return Err(Error::Config(format!("noise std must be non-negative, got {noise_std}")));
    }
    let field = ClosedLoop { env, controller };
    let (dense, failure) = integrate_partial(&field, x0, eval_times, &SolverConfig::reference())?;
    let failure = failure.map(|e| {
        let t = *dense.times.last().unwrap_or(&eval_times[0]);
        log::warn!("{} rollout failed after t = {t}: {e}", env.kind);
        Error::Environment { t, reason: e.to_string() }
    });
    let normal = (noise_std > 0.0).then(|| Normal::new(0.0, noise_std).expect("positive std"));
    let mut states = Vec::with_capacity(dense.states.len());
    let mut actions = Vec::with_capacity(dense.states.len());
    for (t, x) in dense.times.iter().zip(&dense.states) {
        actions.push(field.action(*t, x));
        let mut obs = env.observe(x);
        if let Some(normal) = &normal {
            for v in &mut obs {
                *v += normal.sample(rng);
            }
        }
        states.push(obs);
    }
    Ok(Rollout {
        trajectory: Trajectory::new(dense.times, states, actions)?,
        physical: dense.states,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all() -> [EnvSpec; 3] {
        [EnvSpec::pendulum(), EnvSpec::cartpole(), EnvSpec::acrobot()]
    }

    #[test]
    fn specs_are_valid() {
        for env in all() {
            env.validate().unwrap();
            assert_eq!(env.observe(&env.hanging_state()).len(), env.obs_dim());
        }
    }

    #[test]
    fn hanging_rest_is_a_fixed_point() {
        for env in all() {
            let x = env.hanging_state();
            let mut dx = vec![1.0; env.phys_dim];
            env.derivative(&x, &vec![0.0; env.act_dim], &mut dx);
            for v in dx {
                assert!(v.abs() < 1e-14, "{}: {v}", env.kind);
            }
        }
    }

    #[test]
    fn upright_observations_hit_the_goal() {
        let p = EnvSpec::pendulum();
        assert_eq!(p.observe(&p.upright_state()), vec![0.0, 1.0, 0.0]);
        let c = EnvSpec::cartpole();
        assert_eq!(&c.observe(&c.upright_state())[..3], &[0.0, 0.0, 1.0]);
        let a = EnvSpec::acrobot();
        assert_eq!(&a.observe(&a.upright_state())[2..4], &[0.0, 2.0]);
        for env in all() {
            assert_eq!(env.goal_distance(&env.observe(&env.upright_state())), 0.0);
        }
    }

    #[test]
    fn reward_at_goal() {
        let env = EnvSpec::pendulum();
        let goal_obs = [0.0, 1.0, 0.0];
        assert_eq!(env.reward(&goal_obs, &[0.0]), 1.0);
        assert!((env.reward(&goal_obs, &[1.0]) - 0.99).abs() < 1e-15);
    }

    #[test]
    fn actions_are_clamped_in_the_field() {
        let env = EnvSpec::pendulum();
        let x = [0.3, 0.1];
        let (mut d1, mut d2) = ([0.0; 2], [0.0; 2]);
        env.derivative(&x, &[2.0], &mut d1);
        env.derivative(&x, &[50.0], &mut d2);
        assert_eq!(d1, d2);
    }

    #[test]
    fn parse_env_names() {
        assert_eq!("CartPole".parse::<EnvKind>().unwrap(), EnvKind::CartPole);
        assert!("hopper".parse::<EnvKind>().is_err());
    }
}
