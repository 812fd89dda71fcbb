//! Run configuration and observation-time sampling.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::actor_critic::{AcConfig, EvalConfig};
use crate::dynamics::{DynamicsConfig, TrainConfig};
use crate::envs::EnvKind;
use crate::error::{Error, Result};

/// Distribution of the gaps between consecutive observations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    /// Every gap equals κ.
    Fixed,
    /// Gaps uniform on `(0, 2κ]`.
    Uniform,
    /// Gaps exponential with mean κ.
    Exp,
}

impl std::str::FromStr for Spacing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(Spacing::Fixed),
            "uniform" => Ok(Spacing::Uniform),
            "exp" => Ok(Spacing::Exp),
            _ => Err(format!("unknown spacing `{s}` (expected fixed, uniform or exp)")),
        }
    }
}

impl std::fmt::Display for Spacing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Spacing::Fixed => "fixed",
            Spacing::Uniform => "uniform",
            Spacing::Exp => "exp",
        })
    }
}

/// `n` observation times starting at 0 whose gaps follow `spacing` with
/// mean `kappa`.
pub fn sample_observation_times(spacing: Spacing, kappa: f64, n: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Config(format!("a trajectory needs at least 2 observations, got {n}")));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Config(format!("mean gap must be positive, got {kappa}")));
    }
    if spacing == Spacing::Fixed {
        return Ok((0..n).map(|k| k as f64 * kappa).collect());
    }
    let exp = Exp::new(1.0 / kappa).expect("positive rate");
    let mut times = Vec::with_capacity(n);
    let mut t = 0.0;
    times.push(t);
    while times.len() < n {
        let gap = match spacing {
            Spacing::Uniform => 2.0 * kappa * (1.0 - rng.random::<f64>()),
            _ => exp.sample(rng),
        };
        if gap > 0.0 && t + gap > t {
            t += gap;
            times.push(t);
        }
    }
    Ok(times)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvKind,
    pub seed: u64,
    pub spacing: Spacing,
    /// Mean observation gap in seconds.
    pub kappa: f64,
    /// Standard deviation of the observation noise.
    pub noise: f64,
    /// Observations per collected trajectory.
    pub traj_len: usize,
    /// Round budget.
    pub rounds: usize,
    /// Non-exploration trajectories that seed imagined rollouts.
    pub recent_trajs: usize,
    /// Held-out random-policy trajectories for the predictive error.
    pub test_trajs: usize,
    pub mse_lookahead: f64,
    /// Every `mse_stride`-th window start of the test set is scored.
    pub mse_stride: usize,
    /// Fill the wall-clock column of the round report. Off by default so
    /// that reports are byte-reproducible.
    pub record_wall_clock: bool,
    pub dynamics: DynamicsConfig,
    pub dyn_train: TrainConfig,
    pub ac: AcConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Network sizes and iteration counts of the original experiments.
    pub fn full(env: EnvKind) -> Self {
        RunConfig {
            env,
            seed: 0,
            spacing: Spacing::Fixed,
            kappa: 0.1,
            noise: 0.0,
            traj_len: 50,
            rounds: if env == EnvKind::Pendulum { 15 } else { 25 },
            recent_trajs: 10,
            test_trajs: 5,
            mse_lookahead: 2.0,
            mse_stride: 1,
            record_wall_clock: false,
            dynamics: DynamicsConfig::default(),
            dyn_train: TrainConfig::default(),
            ac: AcConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    /// Narrower networks, one RK4 substep per imagination interval, and
    /// half the imagined batch, sized for a single CPU core.
    pub fn desk(env: EnvKind) -> Self {
        let full = Self::full(env);
        RunConfig {
            mse_stride: 5,
            dynamics: DynamicsConfig {
                hidden: vec![100, 100],
                ..full.dynamics.clone()
            },
            ac: AcConfig {
                substeps: 1,
                n_p: 50,
                actor_lr: 1e-3,
                critic_lr: 1e-3,
                policy_hidden: vec![64, 64],
                critic_hidden: vec![64, 64],
                ..full.ac.clone()
            },
            ..full
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise std must be non-negative, got {}", self.noise)));
        }
        if self.rounds == 0 {
            return Err(Error::Config("round budget must be at least 1".into()));
        }
        if self.traj_len < self.dyn_train.subseq_len.max(2) {
            return Err(Error::Config(format!(
                "trajectories of {} observations are shorter than a training subsequence",
                self.traj_len
            )));
        }
        if self.recent_trajs == 0 || self.mse_stride == 0 || !(self.mse_lookahead > 0.0) {
            return Err(Error::Config("recent_trajs, mse_stride and mse_lookahead must be positive".into()));
        }
        self.dyn_train.validate()?;
        self.ac.validate()?;
        Ok(())
    }
}
