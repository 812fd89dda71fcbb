//! The actor-critic phase: one imagined rollout per iteration feeds one
//! actor step and one critic step.

use log::debug;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::imagine::{
    actor_loss, critic_loss, critic_targets, imagine, sample_horizons, HorizonSampling, HorizonSpec, RewardModel,
};
use super::nets::{ActorCriticCheckpoint, Critic, Policy};
use crate::dynamics::EnsembleDynamics;
use crate::error::{Error, Result};
use crate::math::{Adam, Matrix, ParamStore, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcConfig {
    pub horizon: f64,
    pub grid_step: f64,
    pub substeps: usize,
    pub eta: f64,
    /// Horizons sampled per state for the critic target.
    pub n_h: usize,
    pub iters: usize,
    /// Initial states per iteration.
    pub n_p: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub target_every: usize,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
}

impl Default for AcConfig {
    fn default() -> Self {
        AcConfig {
            horizon: 2.0,
            grid_step: 0.1,
            substeps: 2,
            eta: 0.9,
            n_h: 5,
            iters: 250,
            n_p: 100,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            target_every: 100,
            policy_hidden: vec![200, 200],
            critic_hidden: vec![200, 200],
        }
    }
}

impl AcConfig {
    pub fn horizon_spec(&self) -> Result<HorizonSpec> {
        HorizonSpec::new(self.horizon, self.grid_step, self.substeps, self.eta)
    }

    pub fn validate(&self) -> Result<()> {
        self.horizon_spec()?;
        if self.substeps == 0 || self.n_p == 0 || self.n_h == 0 || self.target_every == 0 || !(self.eta > 0.0) {
            return Err(Error::Config(format!("invalid actor-critic settings: {self:?}")));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Policy, critic, and their optimizers.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorCritic {
    pub policy: Policy,
    pub critic: Critic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
}

impl ActorCritic {
    pub fn new(obs_dim: usize, act_dim: usize, a_max: f64, cfg: &AcConfig, policy_seed: u64, critic_seed: u64) -> Result<Self> {
        let policy = Policy::new(obs_dim, act_dim, a_max, &cfg.policy_hidden, policy_seed)?;
        let critic = Critic::new(obs_dim, &cfg.critic_hidden, critic_seed)?;
        Ok(Self::from_parts(policy, critic, cfg))
    }

    pub fn from_parts(policy: Policy, critic: Critic, cfg: &AcConfig) -> Self {
        ActorCritic {
            actor_opt: Adam::new(&policy.params, cfg.actor_lr),
            critic_opt: Adam::new(&critic.params, cfg.critic_lr),
            policy,
            critic,
        }
    }

    pub fn checkpoint(&self) -> ActorCriticCheckpoint {
        ActorCriticCheckpoint {
            policy_spec: self.policy.spec.clone(),
            policy: self.policy.params.snapshot(),
            critic_spec: self.critic.spec.clone(),
            critic: self.critic.params.snapshot(),
            critic_target: self.critic.target.snapshot(),
            target_copies: self.critic.copies,
            actor_opt: self.actor_opt.clone(),
            critic_opt: self.critic_opt.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: &ActorCriticCheckpoint) -> Result<Self> {
        let policy = ParamStore::from_snapshot(&ckpt.policy)?;
        ckpt.policy_spec.check_params(&policy)?;
        let critic = ParamStore::from_snapshot(&ckpt.critic)?;
        let target = ParamStore::from_snapshot(&ckpt.critic_target)?;
        ckpt.critic_spec.check_params(&critic)?;
        ckpt.critic_spec.check_params(&target)?;
        Ok(ActorCritic {
            policy: Policy {
                spec: ckpt.policy_spec.clone(),
                params: policy,
            },
            critic: Critic {
                spec: ckpt.critic_spec.clone(),
                params: critic,
                target,
                copies: ckpt.target_copies,
            },
            actor_opt: ckpt.actor_opt.clone(),
            critic_opt: ckpt.critic_opt.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AcReport {
    pub first_actor_loss: f64,
    pub last_actor_loss: f64,
    pub first_critic_loss: f64,
    pub last_critic_loss: f64,
    pub target_copies: usize,
    /// Member rollouts excluded over the phase.
    pub excluded: usize,
}

/// `n` initial states drawn uniformly from `pool`.
pub fn sample_initial_states(pool: &[Vec<f64>], n: usize, rng: &mut impl Rng) -> Result<Matrix> {
    if pool.is_empty() {
        return Err(Error::Usage("no states to start imagined rollouts from".into()));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect();
    Matrix::from_rows(&rows)
}

/// `cfg.iters` iterations of: imagine from fresh initial states, step the
/// actor on [`actor_loss`], step the critic on [`critic_loss`], and refresh
/// the target every `cfg.target_every` iterations.
pub fn train_actor_critic(
    ac: &mut ActorCritic,
    dynamics: &EnsembleDynamics,
    reward: &(impl RewardModel + ?Sized),
    pool: &[Vec<f64>],
    cfg: &AcConfig,
    rng: &mut impl Rng,
) -> Result<AcReport> {
    cfg.validate()?;
    let spec = cfg.horizon_spec()?;
    ac.actor_opt.lr = cfg.actor_lr;
    ac.critic_opt.lr = cfg.critic_lr;
    let mut report = AcReport {
        first_actor_loss: f64::NAN,
        last_actor_loss: f64::NAN,
        first_critic_loss: f64::NAN,
        last_critic_loss: f64::NAN,
        target_copies: 0,
        excluded: 0,
    };
    for k in 0..cfg.iters {
        let s0 = sample_initial_states(pool, cfg.n_p, rng)?;
        let tape = &mut Tape::new();
        let pvars = ac.policy.params.bind(tape);
        let batch = imagine(tape, dynamics, &ac.policy, &pvars, reward, &s0, &spec)?;
        report.excluded += batch.excluded;

        let a_loss = actor_loss(tape, &batch, &ac.critic);
        let horizons = sample_horizons(spec.grid.len(), cfg.n_p, HorizonSampling::Uniform(cfg.n_h), rng);
        let targets = critic_targets(tape, &batch, &ac.critic, &horizons)?;
        let cvars = ac.critic.params.bind(tape);
        let c_loss = critic_loss(tape, &batch, &ac.critic, &cvars, &targets);

        let ga = tape.backward(a_loss)?;
        ac.policy.params.accumulate(&ga, &pvars);
        ac.actor_opt.step(&mut ac.policy.params);
        let gc = tape.backward(c_loss)?;
        ac.critic.params.accumulate(&gc, &cvars);
        ac.critic_opt.step(&mut ac.critic.params);

        let (av, cv) = (tape.value(a_loss).item(), tape.value(c_loss).item());
        if k == 0 {
            report.first_actor_loss = av;
            report.first_critic_loss = cv;
        }
        report.last_actor_loss = av;
        report.last_critic_loss = cv;
        if (k + 1) % cfg.target_every == 0 {
            ac.critic.update_target();
            report.target_copies += 1;
        }
        if k % 50 == 0 {
            debug!("actor-critic iteration {k}: actor {av:.4}, critic {cv:.4}");
        }
    }
    Ok(report)
}
