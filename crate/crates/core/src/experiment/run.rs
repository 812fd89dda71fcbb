//! The outer loop: bootstrap data, then rounds of model learning, policy
//! learning, data collection, and evaluation.

use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{sample_observation_times, RunConfig};
use super::report::{emit_reports, save_checkpoint};
use super::store::{ExperienceStore, Provenance, StoredTrajectory};
use crate::actor_critic::{evaluate_policy, train_actor_critic, ActorCritic};
use crate::dynamics::{clip_for_report, predictive_mse_strided, train_dynamics, Dataset, EnsembleDynamics};
use crate::envs::{rollout_true, Controller, EnvSpec};
use crate::error::Result;
use crate::gp::{random_initial_policy, ExploringPolicy};
use crate::math::Matrix;
use crate::seeds::{derive_seed, rng_from};
use crate::trajectory::Trajectory;

const TAG_BOOTSTRAP: u64 = 1;
const TAG_TEST: u64 = 2;
const TAG_DYNAMICS_INIT: u64 = 3;
const TAG_POLICY_INIT: u64 = 4;
const TAG_CRITIC_INIT: u64 = 5;
const TAG_DYNAMICS_TRAIN: u64 = 6;
const TAG_AC_TRAIN: u64 = 7;
const TAG_POLICY_ROLLOUT: u64 = 8;
const TAG_EXPLORATION: u64 = 9;
const TAG_EVALUATION: u64 = 10;

/// Spacing of the grid on which time-indexed GP actions are drawn.
const ACTION_GRID_STEP: f64 = 0.1;

/// Outcome of one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Stored trajectories after collection.
    pub dataset_size: usize,
    pub dyn_loss: f64,
    /// Predictive error at the lookahead, clipped for reporting.
    pub dyn_mse_2s: f64,
    pub mean_value: f64,
    pub success: Vec<bool>,
    pub solved: bool,
    pub dyn_skipped_updates: usize,
    pub imagination_excluded: usize,
    pub wall_clock_s: Option<f64>,
}

impl RoundRecord {
    pub fn success_count(&self) -> usize {
        self.success.iter().filter(|s| **s).count()
    }
}

/// Everything the outer loop carries between rounds.
#[derive(Clone, Debug)]
pub struct RunState {
    pub cfg: RunConfig,
    pub env: EnvSpec,
    pub store: ExperienceStore,
    /// Held-out random-policy trajectories.
    pub test: Vec<Trajectory>,
    pub dynamics: EnsembleDynamics,
    pub ac: ActorCritic,
    pub records: Vec<RoundRecord>,
}

fn action_grid(end: f64) -> Vec<f64> {
    let n = (end / ACTION_GRID_STEP).ceil() as usize + 1;
    (0..=n).map(|k| k as f64 * ACTION_GRID_STEP).collect()
}

/// Rolls `controller` out on the true system at freshly sampled
/// observation times. A rollout that fails part-way is kept up to the
/// failure.
fn collect(
    env: &EnvSpec,
    controller: &(impl Controller + ?Sized),
    x0: &[f64],
    times: &[f64],
    cfg: &RunConfig,
    rng: &mut impl Rng,
) -> Result<(Trajectory, Vec<Vec<f64>>)> {
    let run = rollout_true(env, controller, x0, times, cfg.noise, rng)?;
    if let Some(e) = run.failure {
        if run.trajectory.len() < 2 {
            return Err(e);
        }
        warn!("keeping {} observations of a failed rollout: {e}", run.trajectory.len());
    }
    Ok((run.trajectory, run.physical))
}

fn random_policy_rollout(env: &EnvSpec, cfg: &RunConfig, rng: &mut impl Rng) -> Result<(Trajectory, Vec<Vec<f64>>)> {
    let times = sample_observation_times(cfg.spacing, cfg.kappa, cfg.traj_len, rng)?;
    let policy = random_initial_policy(env, &action_grid(times[times.len() - 1]), rng)?;
    let x0 = env.sample_initial_state(rng);
    collect(env, &policy, &x0, &times, cfg, rng)
}

/// `n0` trajectories of smooth random policies from the initial-state
/// distribution.
pub fn bootstrap_dataset(env: &EnvSpec, cfg: &RunConfig, rng: &mut impl Rng) -> Result<ExperienceStore> {
    let mut store = ExperienceStore::default();
    for _ in 0..env.n0 {
        let (trajectory, physical) = random_policy_rollout(env, cfg, rng)?;
        store.push(StoredTrajectory {
            provenance: Provenance::Initial,
            round: 0,
            trajectory,
            physical,
        })?;
    }
    Ok(store)
}

impl RunState {
    /// Bootstrap data, the held-out set, and freshly initialized networks.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let env = EnvSpec::new(cfg.env);
        let seed = |tag: u64| derive_seed(cfg.seed, &[tag]);
        let store = bootstrap_dataset(&env, &cfg, &mut rng_from(seed(TAG_BOOTSTRAP)))?;
        let mut rng = rng_from(seed(TAG_TEST));
        let test = (0..cfg.test_trajs)
            .map(|_| random_policy_rollout(&env, &cfg, &mut rng).map(|r| r.0))
            .collect::<Result<Vec<_>>>()?;
        let dynamics = EnsembleDynamics::new(cfg.dynamics.clone(), env.obs_dim(), env.act_dim, seed(TAG_DYNAMICS_INIT))?;
        let ac = ActorCritic::new(
            env.obs_dim(),
            env.act_dim,
            env.a_max,
            &cfg.ac,
            seed(TAG_POLICY_INIT),
            seed(TAG_CRITIC_INIT),
        )?;
        Ok(RunState {
            cfg,
            env,
            store,
            test,
            dynamics,
            ac,
            records: Vec::new(),
        })
    }

    pub fn solved(&self) -> bool {
        self.records.last().is_some_and(|r| r.solved)
    }

    fn round_rng(&self, tag: u64, round: usize, index: u64) -> rand_chacha::ChaCha8Rng {
        rng_from(derive_seed(self.cfg.seed, &[tag, round as u64, index]))
    }

    /// Physical start of an exploration rollout: a stored state drawn with
    /// probability proportional to the ensemble disagreement there.
    fn exploration_start(&self, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let mut obs = Vec::new();
        let mut act = Vec::new();
        let mut phys = Vec::new();
        for e in &self.store.entries {
            obs.extend(e.trajectory.states.iter().cloned());
            act.extend(e.trajectory.actions.iter().cloned());
            phys.extend(e.physical.iter());
        }
        let weights = self.dynamics.disagreement(&Matrix::from_rows(&obs)?, &Matrix::from_rows(&act)?)?;
        let weights: Vec<f64> = weights.into_iter().map(|w| if w.is_finite() { w } else { 0.0 }).collect();
        let index = match WeightedIndex::new(&weights) {
            Ok(dist) => dist.sample(rng),
            Err(_) => rng.random_range(0..phys.len()),
        };
        Ok(phys[index].clone())
    }

    fn round(&mut self) -> Result<RoundRecord> {
        let start = Instant::now();
        let k = self.records.len() + 1;
        let cfg = self.cfg.clone();

        let data = Dataset::new(self.store.trajectories())?;
        let mut rng = self.round_rng(TAG_DYNAMICS_TRAIN, k, 0);
        let dyn_report = train_dynamics(&mut self.dynamics, &data, &cfg.dyn_train, &mut rng)?;
        let mse = if self.test.is_empty() {
            f64::NAN
        } else {
            let test = Dataset::new(self.test.clone())?;
            clip_for_report(predictive_mse_strided(&self.dynamics, &test, cfg.mse_lookahead, cfg.mse_stride)?)
        };
        info!("round {k}: dynamics loss {:.4}, {:.0}s predictive error {mse:.4}", dyn_report.final_loss, cfg.mse_lookahead);

        let pool: Vec<Vec<f64>> = self
            .store
            .recent_non_exploration(cfg.recent_trajs)
            .iter()
            .flat_map(|e| e.trajectory.states.iter().cloned())
            .collect();
        let mut rng = self.round_rng(TAG_AC_TRAIN, k, 0);
        let ac_report = train_actor_critic(&mut self.ac, &self.dynamics, &self.env, &pool, &cfg.ac, &mut rng)?;
        info!("round {k}: actor loss {:.4}, critic loss {:.4}", ac_report.last_actor_loss, ac_report.last_critic_loss);

        let mut rng = self.round_rng(TAG_POLICY_ROLLOUT, k, 0);
        let times = sample_observation_times(cfg.spacing, cfg.kappa, cfg.traj_len, &mut rng)?;
        let x0 = self.env.sample_initial_state(&mut rng);
        let (trajectory, physical) = collect(&self.env, &self.ac.policy, &x0, &times, &cfg, &mut rng)?;
        let mut collected = vec![StoredTrajectory {
            provenance: Provenance::Policy,
            round: k,
            trajectory,
            physical,
        }];
        for i in 0..self.env.n_exp {
            let mut rng = self.round_rng(TAG_EXPLORATION, k, i as u64);
            let x0 = self.exploration_start(&mut rng)?;
            let times = sample_observation_times(cfg.spacing, cfg.kappa, cfg.traj_len, &mut rng)?;
            let policy = ExploringPolicy::new(
                self.ac.policy.clone(),
                &action_grid(times[times.len() - 1]),
                self.env.act_dim,
                self.env.a_max,
                &mut rng,
            )?;
            let (trajectory, physical) = collect(&self.env, &policy, &x0, &times, &cfg, &mut rng)?;
            collected.push(StoredTrajectory {
                provenance: Provenance::Exploration,
                round: k,
                trajectory,
                physical,
            });
        }
        for entry in collected {
            self.store.push(entry)?;
        }

        let eval = evaluate_policy(&self.env, &self.ac.policy, &cfg.eval, &mut self.round_rng(TAG_EVALUATION, k, 0))?;
        let record = RoundRecord {
            round: k,
            dataset_size: self.store.len(),
            dyn_loss: dyn_report.final_loss,
            dyn_mse_2s: mse,
            mean_value: eval.mean_value(),
            solved: eval.solved(),
            success: eval.success,
            dyn_skipped_updates: dyn_report.skipped_updates,
            imagination_excluded: ac_report.excluded,
            wall_clock_s: cfg.record_wall_clock.then(|| start.elapsed().as_secs_f64()),
        };
        info!(
            "round {k}: value {:.3}, {}/{} trials upright",
            record.mean_value,
            record.success_count(),
            record.success.len()
        );
        self.records.push(record.clone());
        Ok(record)
    }
}

/// Runs one round on `state`. On error `state` is left as it was.
pub fn run_round(state: &mut RunState) -> Result<RoundRecord> {
    let mut work = state.clone();
    let record = work.round()?;
    *state = work;
    Ok(record)
}

/// Bootstraps and runs rounds until every evaluation trial succeeds or the
/// budget is spent, persisting after each round when `out` is given.
pub fn run_experiment(cfg: RunConfig, out: Option<&Path>) -> Result<RunState> {
    let mut state = RunState::new(cfg)?;
    if let Some(dir) = out {
        emit_reports(dir, &state)?;
    }
    while state.records.len() < state.cfg.rounds && !state.solved() {
        run_round(&mut state)?;
        if let Some(dir) = out {
            save_checkpoint(dir, &state)?;
            emit_reports(dir, &state)?;
        }
    }
    if !state.solved() {
        info!("round budget of {} spent without solving {}", state.cfg.rounds, state.env.kind);
    }
    Ok(state)
}
