//! Closed-loop rollouts under the learned ensemble, discounted value
//! estimates on the rollout grid, and the actor and critic objectives.

use rand::seq::index::sample;
use rand::Rng;

use super::nets::{Critic, Policy};
use crate::dynamics::EnsembleDynamics;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::math::{Matrix, RowScalar, Tape, Var};
use crate::ode::{taped_step, Method};

/// Instantaneous reward recorded on the tape: `obs` n×d, `act` n×m, result n×1.
pub trait RewardModel {
    fn reward_taped(&self, tape: &mut Tape, obs: Var, act: Var) -> Var;
}

impl RewardModel for EnvSpec {
    fn reward_taped(&self, tape: &mut Tape, obs: Var, act: Var) -> Var {
        EnvSpec::reward_taped(self, tape, obs, act)
    }
}

impl<F: Fn(&mut Tape, Var, Var) -> Var> RewardModel for F {
    fn reward_taped(&self, tape: &mut Tape, obs: Var, act: Var) -> Var {
        self(tape, obs, act)
    }
}

/// Rule for integrating `e^{-τ/η} r(τ)` over the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quadrature {
    Trapezoid,
    /// `Σ_{k<j} e^{-τ_k/η} r_k Δ_k`.
    LeftEndpoint,
}

/// Evenly spaced nodes `0, step, ..., horizon`; a zero horizon gives `[0]`.
pub fn horizon_grid(horizon: f64, step: f64) -> Result<Vec<f64>> {
    if !(horizon >= 0.0) || !(step > 0.0) {
        return Err(Error::Config(format!("horizon {horizon} and grid step {step} must be non-negative and positive")));
    }
    let n = (horizon / step).round() as usize;
    if (n as f64 * step - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::Config(format!("horizon {horizon} is not a multiple of the grid step {step}")));
    }
    Ok((0..=n).map(|k| if k == n { horizon } else { k as f64 * step }).collect())
}

/// Coefficients `c_k` with `∫_0^{τ_j} e^{-τ/η} r dτ ≈ Σ_k c_k r_k`.
pub fn quadrature_weights(grid: &[f64], eta: f64, upto: usize, rule: Quadrature) -> Vec<f64> {
    let mut c = vec![0.0; upto + 1];
    for k in 0..upto {
        let dt = grid[k + 1] - grid[k];
        match rule {
            Quadrature::Trapezoid => {
                c[k] += 0.5 * dt * (-grid[k] / eta).exp();
                c[k + 1] += 0.5 * dt * (-grid[k + 1] / eta).exp();
            }
            Quadrature::LeftEndpoint => c[k] += dt * (-grid[k] / eta).exp(),
        }
    }
    c
}

/// Imagination grid, RK4 substeps per grid interval, and discount `η`.
#[derive(Clone, Debug, PartialEq)]
pub struct HorizonSpec {
    pub grid: Vec<f64>,
    pub substeps: usize,
    pub eta: f64,
}

impl HorizonSpec {
    pub fn new(horizon: f64, step: f64, substeps: usize, eta: f64) -> Result<Self> {
        Ok(HorizonSpec {
            grid: horizon_grid(horizon, step)?,
            substeps,
            eta,
        })
    }
}

/// One member's imagined path: nodes of the grid, each an n-row node.
#[derive(Clone, Debug)]
pub struct MemberPath {
    pub member: usize,
    pub states: Vec<Var>,
    pub actions: Vec<Var>,
    pub rewards: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct ImaginedBatch {
    pub grid: Vec<f64>,
    pub eta: f64,
    pub s0: Var,
    pub paths: Vec<MemberPath>,
    /// Members dropped because their rollout blew up.
    pub excluded: usize,
}

impl ImaginedBatch {
    pub fn rows(&self, tape: &Tape) -> usize {
        tape.value(self.s0).rows()
    }

    /// Grid index of `h`, which must be a node.
    pub fn node(&self, h: f64) -> Result<usize> {
        self.grid
            .iter()
            .position(|t| (t - h).abs() <= 1e-9 * h.abs().max(1.0))
            .ok_or_else(|| Error::Usage(format!("horizon {h} is not on the imagination grid")))
    }
}

/// Rolls every member forward from `s0` (n×d) with `substeps` RK4 steps
/// per grid interval. The action at every stage is the policy applied to
/// the stage state. Policy weights enter through `policy_vars`; dynamics
/// weights are constants.
pub fn imagine(
    tape: &mut Tape,
    dynamics: &EnsembleDynamics,
    policy: &Policy,
    policy_vars: &[Var],
    reward: &(impl RewardModel + ?Sized),
    s0: &Matrix,
    spec: &HorizonSpec,
) -> Result<ImaginedBatch> {
    let (grid, substeps, eta) = (&spec.grid[..], spec.substeps, spec.eta);
    if s0.rows() == 0 || s0.cols() != dynamics.state_dim {
        return Err(Error::Shape(format!("initial states {:?} for a {}-dimensional model", s0.shape(), dynamics.state_dim)));
    }
    if grid.first() != Some(&0.0) || grid.windows(2).any(|w| w[1] <= w[0]) || substeps == 0 {
        return Err(Error::Config("grid must start at 0, increase strictly, and have substeps >= 1".into()));
    }
    if !(eta > 0.0) {
        return Err(Error::Config(format!("discount {eta} must be positive")));
    }
    let s0v = tape.constant(s0.clone());
    let tab = Method::Rk4.tableau();
    let mut paths = Vec::with_capacity(dynamics.n_ens());
    let mut excluded = 0;
    for l in 0..dynamics.n_ens() {
        let dyn_vars = dynamics.bind_member(tape, l, false);
        let field = |tape: &mut Tape, _t: &RowScalar, s: Var| -> Result<Var> {
            let a = policy.forward_taped(tape, policy_vars, s);
            Ok(dynamics.field_taped(tape, &dyn_vars, s, a))
        };
        let node = |tape: &mut Tape, s: Var| {
            let a = policy.forward_taped(tape, policy_vars, s);
            let r = reward.reward_taped(tape, s, a);
            (a, r)
        };
        let (a0, r0) = node(tape, s0v);
        let mut path = MemberPath {
            member: l,
            states: vec![s0v],
            actions: vec![a0],
            rewards: vec![r0],
        };
        let mut s = s0v;
        let mut failed = false;
        'grid: for k in 0..grid.len() - 1 {
            let h = (grid[k + 1] - grid[k]) / substeps as f64;
            for j in 0..substeps {
                let t = RowScalar::Uniform(grid[k] + j as f64 * h);
                match taped_step(tab, &field, tape, &t, s, &RowScalar::Uniform(h)) {
                    Ok(next) => s = next,
                    Err(Error::Instability { t, what }) => {
                        log::warn!("imagination member {l} excluded at t={t}: {what}");
                        failed = true;
                        break 'grid;
                    }
                    Err(e) => return Err(e),
                }
            }
            let (a, r) = node(tape, s);
            path.states.push(s);
            path.actions.push(a);
            path.rewards.push(r);
        }
        if failed || path.rewards.iter().any(|r| !tape.value(*r).is_finite()) {
            excluded += 1;
        } else {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::Instability {
            t: grid[grid.len() - 1],
            what: "every imagined rollout diverged".into(),
        });
    }
    Ok(ImaginedBatch {
        grid: grid.to_vec(),
        eta,
        s0: s0v,
        paths,
        excluded,
    })
}

/// Member-averaged `∫_0^h e^{-τ/η} r dτ + e^{-h/η} ν_target(ŝ_h)` per
/// initial state, from recorded values.
pub fn value_estimate(
    tape: &Tape,
    batch: &ImaginedBatch,
    h: f64,
    critic: &Critic,
    rule: Quadrature,
) -> Result<Vec<f64>> {
    let j = batch.node(h)?;
    let c = quadrature_weights(&batch.grid, batch.eta, j, rule);
    let n = batch.rows(tape);
    let mut v = vec![0.0; n];
    for path in &batch.paths {
        let terminal = critic.target_value(tape.value(path.states[j]))?;
        let decay = (-batch.grid[j] / batch.eta).exp();
        for (i, vi) in v.iter_mut().enumerate() {
            let mut acc = decay * terminal[i];
            for (k, ck) in c.iter().enumerate() {
                acc += ck * tape.value(path.rewards[k])[(i, 0)];
            }
            *vi += acc / batch.paths.len() as f64;
        }
    }
    Ok(v)
}

/// `-mean_i V̂ᴴ(s0_i)` on the tape, with trapezoidal quadrature and the
/// target critic's terminal value.
pub fn actor_loss(tape: &mut Tape, batch: &ImaginedBatch, critic: &Critic) -> Var {
    let last = batch.grid.len() - 1;
    let c = quadrature_weights(&batch.grid, batch.eta, last, Quadrature::Trapezoid);
    let decay = (-batch.grid[last] / batch.eta).exp();
    let p = batch.paths.len() as f64;
    let mut per_path = Vec::with_capacity(batch.paths.len());
    for path in &batch.paths {
        let terminal = critic.target_taped(tape, path.states[last]);
        let mut terms: Vec<(Var, f64)> = path.rewards.iter().zip(&c).map(|(r, ck)| (*r, *ck)).collect();
        terms.push((terminal, decay));
        per_path.push((tape.lin_comb(&terms), 1.0 / p));
    }
    let value = tape.lin_comb(&per_path);
    let total = tape.sum(value);
    tape.scale(total, -1.0 / batch.rows(tape) as f64)
}

/// Distribution of the horizon inside the critic target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HorizonSampling {
    /// `n` distinct nodes in `(0, H]` per state, uniformly.
    Uniform(usize),
    /// Always the given node.
    Fixed(usize),
}

/// Per-state nodes drawn according to `sampling`.
pub fn sample_horizons(grid_len: usize, rows: usize, sampling: HorizonSampling, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let last = grid_len - 1;
    (0..rows)
        .map(|_| match sampling {
            HorizonSampling::Fixed(j) => vec![j.min(last)],
            HorizonSampling::Uniform(_) if last == 0 => vec![0],
            HorizonSampling::Uniform(n) => sample(rng, last, n.min(last)).into_iter().map(|k| k + 1).collect(),
        })
        .collect()
}

/// Marginalized regression targets: for each state, the mean of `V̂ʰ` over
/// its sampled nodes, from detached rollout values.
pub fn critic_targets(tape: &Tape, batch: &ImaginedBatch, critic: &Critic, horizons: &[Vec<usize>]) -> Result<Vec<f64>> {
    let n = batch.rows(tape);
    if horizons.len() != n {
        return Err(Error::Shape(format!("{} horizon sets for {n} states", horizons.len())));
    }
    let mut needed: Vec<usize> = horizons.iter().flatten().copied().collect();
    needed.sort_unstable();
    needed.dedup();
    let mut table = vec![Vec::new(); batch.grid.len()];
    for &j in &needed {
        table[j] = value_estimate(tape, batch, batch.grid[j], critic, Quadrature::Trapezoid)?;
    }
    Ok(horizons
        .iter()
        .enumerate()
        .map(|(i, hs)| hs.iter().map(|&j| table[j][i]).sum::<f64>() / hs.len() as f64)
        .collect())
}

/// `mean_i (ν(s0_i) - target_i)²` with the live critic bound as `critic_vars`.
pub fn critic_loss(tape: &mut Tape, batch: &ImaginedBatch, critic: &Critic, critic_vars: &[Var], targets: &[f64]) -> Var {
    let v = critic.spec.forward_taped(tape, critic_vars, batch.s0);
    let y = tape.constant(Matrix::column_vector(targets));
    let diff = tape.sub(v, y);
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    tape.scale(total, 1.0 / targets.len() as f64)
}
