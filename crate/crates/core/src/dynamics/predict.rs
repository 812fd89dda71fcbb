//! Forward simulation of ensemble members and multi-step prediction error.

use super::model::EnsembleDynamics;
use super::train::Dataset;
use crate::envs::Controller;
use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::ode::{integrate, DenseTrajectory, SolverConfig, VectorField};

/// Largest predictive error reported.
pub const MSE_REPORT_CAP: f64 = 100.0;

/// Step budget for one batched prediction; exceeding it counts as failure.
const PREDICTION_MAX_STEPS: usize = 20_000;

/// Vector field of one member driven by a controller `a = c(t, s)`.
pub struct MemberField<'a, C: ?Sized> {
    pub model: &'a EnsembleDynamics,
    pub member: usize,
    pub controller: &'a C,
}

impl<C: Controller + ?Sized> VectorField for MemberField<'_, C> {
    fn dim(&self) -> usize {
        self.model.state_dim
    }

    fn eval(&self, t: f64, s: &[f64], ds: &mut [f64]) {
        let mut a = vec![0.0; self.model.action_dim];
        self.controller.act(t, s, &mut a);
        match self.model.field_eval(self.member, s, &a) {
            Ok(v) => ds.copy_from_slice(&v),
            Err(_) => ds.fill(f64::NAN),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledTrajectories {
    /// `(member, trajectory)` for every member that integrated cleanly.
    pub trajectories: Vec<(usize, DenseTrajectory)>,
    /// Members whose integration failed.
    pub failed: Vec<usize>,
}

/// One trajectory per member `0..count`, each integrated with `solver`.
pub fn sample_trajectories(
    model: &EnsembleDynamics,
    s0: &[f64],
    controller: &(impl Controller + ?Sized),
    eval_times: &[f64],
    count: usize,
    solver: &SolverConfig,
) -> Result<SampledTrajectories> {
    if count == 0 || count > model.n_ens() {
        return Err(Error::Usage(format!(
            "requested {count} samples from an ensemble of {}",
            model.n_ens()
        )));
    }
    if s0.len() != model.state_dim {
        return Err(Error::Shape(format!("initial state has {} entries, model expects {}", s0.len(), model.state_dim)));
    }
    let mut out = SampledTrajectories {
        trajectories: Vec::with_capacity(count),
        failed: Vec::new(),
    };
    for member in 0..count {
        let field = MemberField {
            model,
            member,
            controller,
        };
        match integrate(&field, s0, eval_times, solver) {
            Ok(tr) => out.trajectories.push((member, tr)),
            Err(e @ (Error::Instability { .. } | Error::Divergence { .. })) => {
                log::warn!("member {member} excluded from sampling: {e}");
                out.failed.push(member);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// One prediction window: trajectory index and start/end observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub traj: usize,
    pub start: usize,
    pub end: usize,
}

/// Windows from every `stride`-th start index to the first observation at
/// least `lookahead` seconds later.
pub fn prediction_windows(data: &Dataset, lookahead: f64, stride: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for (traj, tr) in data.trajectories.iter().enumerate() {
        for start in (0..tr.len()).step_by(stride.max(1)) {
            let target = tr.times[start] + lookahead - 1e-9;
            if let Some(end) = (start + 1..tr.len()).find(|&j| tr.times[j] >= target) {
                out.push(Window { traj, start, end });
            }
        }
    }
    out
}

/// All windows of one member integrated together, each on its own clock
/// rescaled to `u ∈ [0, 1]`.
struct WindowField<'a> {
    model: &'a EnsembleDynamics,
    member: usize,
    data: &'a Dataset,
    windows: &'a [Window],
}

impl WindowField<'_> {
    fn span(&self, w: &Window) -> (f64, f64) {
        let tr = &self.data.trajectories[w.traj];
        (tr.times[w.start], tr.times[w.end] - tr.times[w.start])
    }
}

impl VectorField for WindowField<'_> {
    fn dim(&self) -> usize {
        self.windows.len() * self.model.state_dim
    }

    fn eval(&self, u: f64, x: &[f64], dx: &mut [f64]) {
        let (d, m) = (self.model.state_dim, self.model.action_dim);
        let s = Matrix::from_vec(self.windows.len(), d, x.to_vec()).expect("state length");
        let mut a = Matrix::zeros(self.windows.len(), m);
        for (r, w) in self.windows.iter().enumerate() {
            let (t0, span) = self.span(w);
            self.data.interpolant(w.traj).eval_into(t0 + u * span, a.row_mut(r));
        }
        match self.model.field_batch(self.member, &s, &a) {
            Ok(f) => {
                for (r, w) in self.windows.iter().enumerate() {
                    let span = self.span(w).1;
                    for (o, v) in dx[r * d..(r + 1) * d].iter_mut().zip(f.row(r)) {
                        *o = span * v;
                    }
                }
            }
            Err(_) => dx.fill(f64::NAN),
        }
    }
}

/// Mean over members and windows of `‖ŝ(t_i + lookahead) - s_j‖²`, where each
/// window starts from an observed state and ends at the first observation
/// `lookahead` seconds later. Any member failing to integrate makes the
/// error infinite.
pub fn predictive_mse(model: &EnsembleDynamics, test: &Dataset, lookahead: f64) -> Result<f64> {
    predictive_mse_strided(model, test, lookahead, 1)
}

/// [`predictive_mse`] over windows starting at every `stride`-th observation.
pub fn predictive_mse_strided(model: &EnsembleDynamics, test: &Dataset, lookahead: f64, stride: usize) -> Result<f64> {
    let windows = prediction_windows(test, lookahead, stride);
    if windows.is_empty() {
        return Err(Error::Usage(format!("no test trajectory spans {lookahead} s")));
    }
    let d = model.state_dim;
    let x0: Vec<f64> = windows
        .iter()
        .flat_map(|w| test.trajectories[w.traj].states[w.start].iter().copied())
        .collect();
    let mut total = 0.0;
    for member in 0..model.n_ens() {
        let field = WindowField {
            model,
            member,
            data: test,
            windows: &windows,
        };
        let solver = SolverConfig {
            max_steps: PREDICTION_MAX_STEPS,
            ..SolverConfig::model_evaluation()
        };
        let end = match integrate(&field, &x0, &[0.0, 1.0], &solver) {
            Ok(tr) => tr.final_state().to_vec(),
            Err(Error::Instability { .. } | Error::Divergence { .. }) => return Ok(f64::INFINITY),
            Err(e) => return Err(e),
        };
        for (r, w) in windows.iter().enumerate() {
            let obs = &test.trajectories[w.traj].states[w.end];
            total += end[r * d..(r + 1) * d]
                .iter()
                .zip(obs)
                .map(|(p, o)| (p - o).powi(2))
                .sum::<f64>();
        }
    }
    Ok(total / (windows.len() * model.n_ens()) as f64)
}

/// Value written to reports: capped at [`MSE_REPORT_CAP`], with non-finite
/// errors mapped to the cap.
pub fn clip_for_report(mse: f64) -> f64 {
    if mse.is_finite() {
        mse.min(MSE_REPORT_CAP)
    } else {
        MSE_REPORT_CAP
    }
}
