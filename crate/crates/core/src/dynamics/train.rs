//! Likelihood training of the ensemble on observed subsequences, plus the
//! finite-difference gradient-matching warm start.

use log::{debug, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::EnsembleDynamics;
use crate::error::{Error, Result};
use crate::gp::{ActionKnots, Interpolant, KernelConfig};
use crate::math::{Adam, Matrix, ParamId, ParamStore, RowScalar, Tape, Var};
use crate::ode::{taped_step, Method};
use crate::trajectory::Trajectory;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Iterations at the full learning rate, after warmup.
    pub iters: usize,
    pub warmup_iters: usize,
    pub lr_start: f64,
    pub lr: f64,
    pub subseqs_per_traj: usize,
    pub subseq_len: usize,
    /// Largest RK4 substep used when integrating between observations.
    pub max_substep: f64,
    pub grad_match_steps: usize,
    pub grad_match_pairs: usize,
    pub grad_match_lr: f64,
    /// When false, `log Σ` stays at its current value.
    pub learn_noise: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 1250,
            warmup_iters: 100,
            lr_start: 1e-4,
            lr: 1e-3,
            subseqs_per_traj: 5,
            subseq_len: 5,
            max_substep: 0.05,
            grad_match_steps: 200,
            grad_match_pairs: 256,
            grad_match_lr: 1e-3,
            learn_noise: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subseq_len < 2 || self.subseqs_per_traj == 0 || !(self.max_substep > 0.0) {
            return Err(Error::Config(format!(
                "subsequences need length >= 2, a positive count and a positive substep: {self:?}"
            )));
        }
        if !(self.lr > 0.0 && self.lr_start > 0.0 && self.grad_match_lr > 0.0) || self.grad_match_pairs == 0 {
            return Err(Error::Config("learning rates and pair count must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate at iteration `k`: linear warmup from `lr_start` to `lr`.
    pub fn lr_at(&self, k: usize) -> f64 {
        if k < self.warmup_iters {
            self.lr_start + (self.lr - self.lr_start) * k as f64 / self.warmup_iters as f64
        } else {
            self.lr
        }
    }
}

/// Trajectories together with the kernel interpolants of their actions.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    interpolants: Vec<Interpolant>,
}

impl Dataset {
    /// Each trajectory's actions are interpolated with length scale twice its
    /// mean observation gap.
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let interpolants = trajectories
            .iter()
            .map(|tr| {
                tr.validate()?;
                if tr.len() < 2 {
                    return Err(Error::Domain("trajectories need at least two observations".into()));
                }
                let kappa = (tr.times[tr.len() - 1] - tr.times[0]) / (tr.len() - 1) as f64;
                let knots = ActionKnots::new(tr.times.clone(), tr.actions.clone())?;
                Interpolant::new(&knots, &KernelConfig::interpolation(kappa))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            trajectories,
            interpolants,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn interpolant(&self, i: usize) -> &Interpolant {
        &self.interpolants[i]
    }
}

/// Contiguous observation windows, one per row.
#[derive(Clone, Debug)]
pub struct SubsequenceBatch<'a> {
    data: &'a Dataset,
    /// `(trajectory, first index)` per row.
    pub windows: Vec<(usize, usize)>,
    pub len: usize,
}

impl<'a> SubsequenceBatch<'a> {
    pub fn new(data: &'a Dataset, windows: Vec<(usize, usize)>, len: usize) -> Result<Self> {
        if windows.is_empty() || len < 2 {
            return Err(Error::Usage("a batch needs at least one window of two observations".into()));
        }
        for &(tr, start) in &windows {
            let n = data.trajectories.get(tr).map_or(0, Trajectory::len);
            if start + len > n {
                return Err(Error::Usage(format!("window {start}..{} exceeds trajectory {tr}", start + len)));
            }
        }
        Ok(SubsequenceBatch { data, windows, len })
    }

    /// `per_traj` uniformly placed windows from every long-enough trajectory.
    pub fn sample(data: &'a Dataset, per_traj: usize, len: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut windows = Vec::new();
        for (i, tr) in data.trajectories.iter().enumerate() {
            if tr.len() < len {
                continue;
            }
            for _ in 0..per_traj {
                windows.push((i, rng.random_range(0..=tr.len() - len)));
            }
        }
        Self::new(data, windows, len)
    }

    pub fn rows(&self) -> usize {
        self.windows.len()
    }

    pub fn time(&self, row: usize, k: usize) -> f64 {
        let (tr, start) = self.windows[row];
        self.data.trajectories[tr].times[start + k]
    }

    pub fn state(&self, row: usize, k: usize) -> &[f64] {
        let (tr, start) = self.windows[row];
        &self.data.trajectories[tr].states[start + k]
    }

    pub fn action(&self, row: usize, k: usize) -> &[f64] {
        let (tr, start) = self.windows[row];
        &self.data.trajectories[tr].actions[start + k]
    }

    fn states_at(&self, k: usize) -> Matrix {
        let rows: Vec<Vec<f64>> = (0..self.rows()).map(|r| self.state(r, k).to_vec()).collect();
        Matrix::from_rows(&rows).expect("validated trajectories")
    }

    /// Interpolated actions at per-row times.
    fn actions_at(&self, t: &RowScalar, m: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows(), m);
        for (r, &(tr, _)) in self.windows.iter().enumerate() {
            self.data.interpolants[tr].eval_into(t.at(r), out.row_mut(r));
        }
        out
    }

    /// Observation count entering the likelihood (the first point of each
    /// window is the initial condition and is excluded).
    pub fn count(&self) -> usize {
        self.rows() * (self.len - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElboEval {
    /// Mean of the member objectives.
    pub loss: f64,
    pub member_losses: Vec<f64>,
}

struct MemberPass {
    loss: f64,
    grads: Option<(Vec<Matrix>, Matrix)>,
}

/// Substep count shared by all rows for one observation interval.
fn substeps(max_gap: f64, max_substep: f64) -> usize {
    ((max_gap / max_substep) - 1e-9).ceil().max(1.0) as usize
}

/// Member `l`'s objective: negative Gaussian log-likelihood of the window
/// observations per observation, plus `λ‖θ_l‖²`.
fn member_pass(
    model: &EnsembleDynamics,
    batch: &SubsequenceBatch,
    l: usize,
    max_substep: f64,
    with_grad: bool,
) -> Result<MemberPass> {
    let (d, m) = (model.state_dim, model.action_dim);
    if batch.state(0, 0).len() != d || batch.action(0, 0).len() != m {
        return Err(Error::Shape(format!("batch does not match a model with d={d}, m={m}")));
    }
    let tape = &mut Tape::new();
    let vars = model.bind_member(tape, l, with_grad);
    let lv = model.log_var.value(ParamId(0)).clone();
    let lv = if with_grad { tape.leaf(lv) } else { tape.constant(lv) };
    let neg = tape.scale(lv, -1.0);
    let inv_var = tape.exp(neg);

    let field = |tape: &mut Tape, t: &RowScalar, s: Var| -> Result<Var> {
        let a = tape.constant(batch.actions_at(t, m));
        Ok(model.field_taped(tape, &vars, s, a))
    };
    let tab = Method::Rk4.tableau();
    let rows = batch.rows();
    let mut s = tape.constant(batch.states_at(0));
    let mut weighted = Vec::with_capacity(batch.len - 1);
    for k in 1..batch.len {
        let t0: Vec<f64> = (0..rows).map(|r| batch.time(r, k - 1)).collect();
        let gaps: Vec<f64> = (0..rows).map(|r| batch.time(r, k) - t0[r]).collect();
        let n = substeps(gaps.iter().copied().fold(0.0, f64::max), max_substep);
        let h = RowScalar::PerRow(gaps.iter().map(|g| g / n as f64).collect());
        for j in 0..n {
            let t = RowScalar::PerRow((0..rows).map(|r| t0[r] + j as f64 * h.at(r)).collect());
            s = taped_step(tab, &field, tape, &t, s, &h).map_err(|e| match e {
                Error::Instability { t, what } => Error::Instability {
                    t,
                    what: format!("member {l}: {what}"),
                },
                other => other,
            })?;
        }
        let y = tape.constant(batch.states_at(k));
        let diff = tape.sub(s, y);
        let sq = tape.square(diff);
        let w = tape.mul_row(sq, inv_var);
        weighted.push(tape.sum(w));
    }
    let count = batch.count() as f64;
    let terms: Vec<(Var, f64)> = weighted.iter().map(|v| (*v, 0.5 / count)).collect();
    let data_term = tape.lin_comb(&terms);
    let lv_sum = tape.sum(lv);
    let nll = tape.lin_comb(&[(data_term, 1.0), (lv_sum, 0.5)]);
    let nll = tape.offset(nll, 0.5 * d as f64 * LN_2PI);

    let params = &model.members[l];
    let lambda = model.config.weight_decay;
    let loss = tape.value(nll).item() + lambda * params.sum_squares();
    if !loss.is_finite() {
        return Err(Error::Instability {
            t: batch.time(0, batch.len - 1),
            what: format!("member {l}: non-finite likelihood"),
        });
    }
    let grads = if with_grad {
        let g = tape.backward(nll)?;
        let member: Vec<Matrix> = params
            .ids()
            .zip(&vars)
            .map(|(id, v)| {
                let theta = params.value(id);
                let mut gm = g.get(*v).cloned().unwrap_or_else(|| Matrix::zeros(theta.rows(), theta.cols()));
                gm.add_assign(&theta.map(|x| 2.0 * lambda * x));
                gm
            })
            .collect();
        let glv = g.get(lv).cloned().unwrap_or_else(|| Matrix::zeros(1, d));
        Some((member, glv))
    } else {
        None
    };
    Ok(MemberPass { loss, grads })
}

/// Ensemble objective on `batch`: the mean over members of the
/// per-observation negative log-likelihood plus each member's penalty.
pub fn elbo_loss(model: &EnsembleDynamics, batch: &SubsequenceBatch) -> Result<ElboEval> {
    elbo_loss_with(model, batch, TrainConfig::default().max_substep)
}

pub fn elbo_loss_with(model: &EnsembleDynamics, batch: &SubsequenceBatch, max_substep: f64) -> Result<ElboEval> {
    let member_losses = (0..model.n_ens())
        .map(|l| member_pass(model, batch, l, max_substep, false).map(|p| p.loss))
        .collect::<Result<Vec<_>>>()?;
    Ok(ElboEval {
        loss: member_losses.iter().sum::<f64>() / member_losses.len() as f64,
        member_losses,
    })
}

/// Like [`elbo_loss`], and fills gradient accumulators: member `l` receives
/// the gradient of its own objective, `log Σ` the gradient of the mean.
pub fn elbo_gradients(model: &mut EnsembleDynamics, batch: &SubsequenceBatch, max_substep: f64) -> Result<ElboEval> {
    let passes = (0..model.n_ens())
        .map(|l| member_pass(model, batch, l, max_substep, true))
        .collect::<Result<Vec<_>>>()?;
    let n = passes.len() as f64;
    let mut glv = Matrix::zeros(1, model.state_dim);
    let mut member_losses = Vec::with_capacity(passes.len());
    for (l, pass) in passes.into_iter().enumerate() {
        let (gm, gl) = pass.grads.expect("requested gradients");
        write_grads(&mut model.members[l], gm);
        glv.add_assign(&gl.map(|x| x / n));
        member_losses.push(pass.loss);
    }
    model.log_var.grad_mut(ParamId(0)).add_assign(&glv);
    Ok(ElboEval {
        loss: member_losses.iter().sum::<f64>() / n,
        member_losses,
    })
}

fn write_grads(store: &mut ParamStore, grads: Vec<Matrix>) {
    let ids: Vec<ParamId> = store.ids().collect();
    for (id, g) in ids.into_iter().zip(grads) {
        store.grad_mut(id).add_assign(&g);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean member objective on the first and last training batches.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
    /// Member updates skipped because the member's integration blew up.
    pub skipped_updates: usize,
    /// Final gradient-matching error, when the warm start ran.
    pub grad_match_mse: Option<f64>,
}

/// Warmup followed by `cfg.iters` Adam steps on fresh random batches. A model
/// that has never been trained is first warm-started by gradient matching.
pub fn train_dynamics(
    model: &mut EnsembleDynamics,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<TrainReport> {
    cfg.validate()?;
    if !data.trajectories.iter().any(|t| t.len() >= cfg.subseq_len) {
        return Err(Error::Usage(format!(
            "no trajectory has the {} observations a subsequence needs",
            cfg.subseq_len
        )));
    }
    let grad_match_mse = if model.iterations == 0 && cfg.grad_match_steps > 0 {
        Some(gradient_match_init(model, data, cfg, rng)?)
    } else {
        None
    };
    let mut member_opts: Vec<Adam> = model.members.iter().map(|p| Adam::new(p, cfg.lr_start)).collect();
    let mut noise_opt = Adam::new(&model.log_var, cfg.lr_start);
    let total = cfg.warmup_iters + cfg.iters;
    let (mut initial_loss, mut final_loss, mut skipped) = (f64::NAN, f64::NAN, 0);
    for k in 0..total {
        let lr = cfg.lr_at(k);
        let batch = SubsequenceBatch::sample(data, cfg.subseqs_per_traj, cfg.subseq_len, rng)?;
        let mut losses = Vec::with_capacity(model.n_ens());
        let mut glv = Matrix::zeros(1, model.state_dim);
        let mut ok = 0usize;
        for l in 0..model.n_ens() {
            match member_pass(model, &batch, l, cfg.max_substep, true) {
                Ok(pass) => {
                    let (gm, gl) = pass.grads.expect("requested gradients");
                    write_grads(&mut model.members[l], gm);
                    member_opts[l].lr = lr;
                    member_opts[l].step(&mut model.members[l]);
                    glv.add_assign(&gl);
                    losses.push(pass.loss);
                    ok += 1;
                }
                Err(Error::Instability { t, what }) => {
                    warn!("dynamics iteration {k}: skipping update at t={t}: {what}");
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if ok == 0 {
            return Err(Error::Instability {
                t: 0.0,
                what: format!("every ensemble member diverged at dynamics iteration {k}"),
            });
        }
        if cfg.learn_noise {
            model.log_var.grad_mut(ParamId(0)).add_assign(&glv.map(|x| x / ok as f64));
            noise_opt.lr = lr;
            noise_opt.step(&mut model.log_var);
        }
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        if k == 0 {
            initial_loss = mean;
        }
        final_loss = mean;
        if k % 100 == 0 {
            debug!("dynamics iteration {k}: loss {mean:.5}");
        }
    }
    model.iterations += total as u64;
    Ok(TrainReport {
        initial_loss,
        final_loss,
        iterations: total,
        skipped_updates: skipped,
        grad_match_mse,
    })
}

/// Regresses every member's derivative onto `(s_{i+1} - s_i) / (t_{i+1} - t_i)`
/// at `(s_i, a_i)`, with independent optimizers and minibatches per member.
/// Returns the mean over members of the last minibatch error.
pub fn gradient_match_init(
    model: &mut EnsembleDynamics,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    let (inputs_s, inputs_a, targets) = finite_difference_pairs(data);
    if targets.is_empty() {
        return Err(Error::Usage("gradient matching needs trajectories with two or more points".into()));
    }
    let (d, m) = (model.state_dim, model.action_dim);
    let n_pairs = targets.len();
    let batch = cfg.grad_match_pairs.min(n_pairs);
    let mut last = Vec::with_capacity(model.n_ens());
    for l in 0..model.n_ens() {
        let mut opt = Adam::new(&model.members[l], cfg.grad_match_lr);
        let mut mse = f64::NAN;
        for _ in 0..cfg.grad_match_steps {
            let idx: Vec<usize> = if batch == n_pairs {
                (0..n_pairs).collect()
            } else {
                (0..batch).map(|_| rng.random_range(0..n_pairs)).collect()
            };
            let pick = |rows: &Vec<Vec<f64>>, w: usize| {
                let flat: Vec<f64> = idx.iter().flat_map(|&i| rows[i].iter().copied()).collect();
                Matrix::from_vec(idx.len(), w, flat).expect("consistent widths")
            };
            let tape = &mut Tape::new();
            let vars = model.bind_member(tape, l, true);
            let s = tape.constant(pick(&inputs_s, d));
            let a = tape.constant(pick(&inputs_a, m));
            let y = tape.constant(pick(&targets, d));
            let f = model.field_taped(tape, &vars, s, a);
            let diff = tape.sub(f, y);
            let sq = tape.square(diff);
            let total = tape.sum(sq);
            let loss = tape.scale(total, 1.0 / (idx.len() * d) as f64);
            mse = tape.value(loss).item();
            let g = tape.backward(loss)?;
            model.members[l].accumulate(&g, &vars);
            opt.step(&mut model.members[l]);
        }
        last.push(mse);
    }
    Ok(last.iter().sum::<f64>() / last.len() as f64)
}

/// `(s_i, a_i, (s_{i+1} - s_i) / Δt_i)` over every consecutive pair.
pub fn finite_difference_pairs(data: &Dataset) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (mut s, mut a, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for tr in &data.trajectories {
        for i in 0..tr.len().saturating_sub(1) {
            let dt = tr.times[i + 1] - tr.times[i];
            s.push(tr.states[i].clone());
            a.push(tr.actions[i].clone());
            y.push(tr.states[i + 1].iter().zip(&tr.states[i]).map(|(n, c)| (n - c) / dt).collect());
        }
    }
    (s, a, y)
}
