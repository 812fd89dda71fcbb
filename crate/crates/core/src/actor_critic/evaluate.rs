//! Closed-loop evaluation of a policy on the true environment.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{rollout_true, Controller, EnvSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub duration: f64,
    pub trials: usize,
    /// Spacing of the recording grid.
    pub dt: f64,
    pub eta: f64,
    /// The goal must hold over this final stretch of each trial.
    pub hold: f64,
    /// Allowed goal distance as a fraction of the link length.
    pub tolerance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            duration: 30.0,
            trials: 10,
            dt: 0.01,
            eta: 0.9,
            hold: 5.0,
            tolerance: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub values: Vec<f64>,
    pub success: Vec<bool>,
}

impl EvalReport {
    pub fn mean_value(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn success_count(&self) -> usize {
        self.success.iter().filter(|s| **s).count()
    }

    /// Every trial succeeded.
    pub fn solved(&self) -> bool {
        !self.success.is_empty() && self.success.iter().all(|s| *s)
    }
}

/// Trapezoidal `∫ e^{-t/η} r(t) dt` over samples at `times`.
pub fn discounted_return(times: &[f64], rewards: &[f64], eta: f64) -> f64 {
    times
        .windows(2)
        .zip(rewards.windows(2))
        .map(|(t, r)| 0.5 * (t[1] - t[0]) * ((-t[0] / eta).exp() * r[0] + (-t[1] / eta).exp() * r[1]))
        .sum()
}

/// Evenly spaced recording times `0, dt, ..., duration`.
pub fn eval_times(duration: f64, dt: f64) -> Vec<f64> {
    let n = (duration / dt).round() as usize;
    (0..=n).map(|k| k as f64 * dt).collect()
}

/// Rolls `controller` out from `cfg.trials` fresh initial states with the
/// reference solver. A trial succeeds when the goal distance stays below
/// `tolerance · length` over the final `hold` seconds.
pub fn evaluate_policy(
    env: &EnvSpec,
    controller: &(impl Controller + ?Sized),
    cfg: &EvalConfig,
    rng: &mut impl Rng,
) -> Result<EvalReport> {
    if cfg.trials == 0 || !(cfg.duration > 0.0) || !(cfg.dt > 0.0) || !(cfg.hold >= 0.0) || cfg.hold > cfg.duration {
        return Err(Error::Config(format!("invalid evaluation settings: {cfg:?}")));
    }
    let times = eval_times(cfg.duration, cfg.dt);
    let mut report = EvalReport {
        values: Vec::with_capacity(cfg.trials),
        success: Vec::with_capacity(cfg.trials),
    };
    for _ in 0..cfg.trials {
        let x0 = env.sample_initial_state(rng);
        let run = rollout_true(env, controller, &x0, &times, 0.0, rng)?;
        let tr = &run.trajectory;
        let rewards: Vec<f64> = tr.states.iter().zip(&tr.actions).map(|(s, a)| env.reward(s, a)).collect();
        report.values.push(discounted_return(&tr.times, &rewards, cfg.eta));
        let ok = run.failure.is_none()
            && tr
                .times
                .iter()
                .zip(&tr.states)
                .filter(|(t, _)| **t >= cfg.duration - cfg.hold - 1e-9)
                .all(|(_, s)| env.goal_distance(s) < cfg.tolerance * env.length);
        report.success.push(ok);
    }
    Ok(report)
}
