//! Plain (non-recording) Runge-Kutta integration with dense output at
//! requested times.
//!
//! Adaptive methods clamp their step endpoints onto the requested
//! evaluation times, so every returned state is a step endpoint and no
//! interpolation is ever performed.

use serde::{Deserialize, Serialize};

use super::tableau::{Method, Tableau};
use crate::error::{Error, Result};
use crate::math::tape::{rk_combine_into, RowScalar};

/// `ds/dt = f(t, s)` on a fixed dimension.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, s: &[f64], ds: &mut [f64]);
}

impl<T: VectorField + ?Sized> VectorField for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, t: f64, s: &[f64], ds: &mut [f64]) {
        (**self).eval(t, s, ds)
    }
}

/// A [`VectorField`] backed by a closure.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

pub fn field_fn<F: Fn(f64, &[f64], &mut [f64])>(dim: usize, f: F) -> FnField<F> {
    FnField { dim, f }
}

impl<F: Fn(f64, &[f64], &mut [f64])> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, s: &[f64], ds: &mut [f64]) {
        (self.f)(t, s, ds)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    /// Equal substeps per evaluation interval (fixed-step methods).
    pub substeps: usize,
    /// Upper bound on attempted steps (accepted plus rejected).
    pub max_steps: usize,
}

impl SolverConfig {
    pub const DEFAULT_MAX_STEPS: usize = 1_000_000;

    pub fn fixed(method: Method, substeps: usize) -> Self {
        SolverConfig {
            method,
            rtol: 0.0,
            atol: 0.0,
            substeps,
            max_steps: Self::DEFAULT_MAX_STEPS,
        }
    }

    pub fn adaptive(method: Method, rtol: f64, atol: f64) -> Self {
        SolverConfig {
            method,
            rtol,
            atol,
            substeps: 1,
            max_steps: Self::DEFAULT_MAX_STEPS,
        }
    }

    /// DOPRI5 at `rtol = atol = 1e-7`, used for model evaluation.
    pub fn model_evaluation() -> Self {
        Self::adaptive(Method::Dopri5, 1e-7, 1e-7)
    }

    /// RK78 at `rtol = atol = 1e-10`, the ground-truth integrator.
    pub fn reference() -> Self {
        Self::adaptive(Method::Rk78, 1e-10, 1e-10)
    }

    pub fn validate(&self) -> Result<()> {
        if self.method.is_adaptive() {
            if !(self.rtol > 0.0 && self.atol > 0.0) {
                return Err(Error::Config(format!(
                    "{} needs positive tolerances (rtol {}, atol {})",
                    self.method, self.rtol, self.atol
                )));
            }
        } else if self.substeps == 0 {
            return Err(Error::Config(format!("{} needs at least one substep", self.method)));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub accepted: usize,
    pub rejected: usize,
}

impl DenseTrajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least the initial state")
    }
}

/// Scratch buffers for one explicit Runge-Kutta step.
pub(crate) struct StepWork {
    k: Vec<Vec<f64>>,
    stage: Vec<f64>,
    pub(crate) next: Vec<f64>,
    pub(crate) err: Vec<f64>,
}

impl StepWork {
    pub(crate) fn new(tab: &Tableau, dim: usize) -> Self {
        StepWork {
            k: vec![vec![0.0; dim]; tab.stages()],
            stage: vec![0.0; dim],
            next: vec![0.0; dim],
            err: vec![0.0; dim],
        }
    }
}

/// One step of size `h` from `(t, s)`; fills `work.next` and, for embedded
/// pairs, the local error estimate `work.err`.
pub(crate) fn rk_step(
    tab: &Tableau,
    field: &(impl VectorField + ?Sized),
    t: f64,
    s: &[f64],
    h: f64,
    work: &mut StepWork,
) -> Result<()> {
    let dim = s.len();
    let step = RowScalar::Uniform(h);
    for i in 0..tab.stages() {
        let ti = t + tab.c[i] * h;
        let (done, rest) = work.k.split_at_mut(i);
        let ki = &mut rest[0];
        if i == 0 {
            field.eval(ti, s, ki);
        } else {
            let terms: Vec<(&[f64], f64)> = tab.a[i]
                .iter()
                .zip(done.iter())
                .map(|(c, k)| (k.as_slice(), *c))
                .collect();
            rk_combine_into(s, &terms, &step, dim, &mut work.stage);
            field.eval(ti, &work.stage, ki);
        }
        if ki.iter().any(|v| !v.is_finite()) {
            return Err(Error::Instability {
                t: ti,
                what: "non-finite vector field output".into(),
            });
        }
    }
    let terms: Vec<(&[f64], f64)> = tab
        .b
        .iter()
        .zip(work.k.iter())
        .map(|(c, k)| (k.as_slice(), *c))
        .collect();
    rk_combine_into(s, &terms, &step, dim, &mut work.next);
    if let Some(b_hat) = tab.b_hat {
        for (j, e) in work.err.iter_mut().enumerate() {
            let mut acc = 0.0;
            for ((b, bh), k) in tab.b.iter().zip(b_hat).zip(&work.k) {
                acc += (b - bh) * k[j];
            }
            *e = h * acc;
        }
    }
    Ok(())
}

fn check_times(eval_times: &[f64]) -> Result<()> {
    if eval_times.is_empty() {
        return Err(Error::Usage("no evaluation times".into()));
    }
    if eval_times.iter().any(|t| !t.is_finite()) {
        return Err(Error::Usage("non-finite evaluation time".into()));
    }
    if eval_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Usage("evaluation times must be strictly increasing".into()));
    }
    Ok(())
}

/// Integrates `field` from `s0` at `eval_times[0]`, returning the state at
/// every evaluation time.
pub fn integrate(
    field: &(impl VectorField + ?Sized),
    s0: &[f64],
    eval_times: &[f64],
    config: &SolverConfig,
) -> Result<DenseTrajectory> {
    let (traj, failure) = integrate_partial(field, s0, eval_times, config)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(traj),
    }
}

/// Like [`integrate`], but a failure part-way keeps the states reached so
/// far: the trajectory holds every evaluation time passed before the error.
/// Invalid arguments are still reported as an outer error.
pub fn integrate_partial(
    field: &(impl VectorField + ?Sized),
    s0: &[f64],
    eval_times: &[f64],
    config: &SolverConfig,
) -> Result<(DenseTrajectory, Option<Error>)> {
    config.validate()?;
    check_times(eval_times)?;
    if s0.len() != field.dim() {
        return Err(Error::Shape(format!(
            "initial state has {} entries, field dimension is {}",
            s0.len(),
            field.dim()
        )));
    }
    let mut out = DenseTrajectory {
        times: vec![eval_times[0]],
        states: vec![s0.to_vec()],
        accepted: 0,
        rejected: 0,
    };
    let result = if config.method.is_adaptive() {
        integrate_adaptive(field, eval_times, config, &mut out)
    } else {
        integrate_fixed(field, eval_times, config, &mut out)
    };
    Ok((out, result.err()))
}

fn integrate_fixed(
    field: &(impl VectorField + ?Sized),
    eval_times: &[f64],
    config: &SolverConfig,
    out: &mut DenseTrajectory,
) -> Result<()> {
    let tab = config.method.tableau();
    let n = config.substeps;
    let mut s = out.states[0].clone();
    let mut work = StepWork::new(tab, s.len());
    for w in eval_times.windows(2) {
        let h = (w[1] - w[0]) / n as f64;
        for k in 0..n {
            if out.accepted >= config.max_steps {
                return Err(Error::Divergence {
                    t: w[0] + k as f64 * h,
                    max_steps: config.max_steps,
                });
            }
            rk_step(tab, field, w[0] + k as f64 * h, &s, h, &mut work)?;
            std::mem::swap(&mut s, &mut work.next);
            out.accepted += 1;
        }
        out.times.push(w[1]);
        out.states.push(s.clone());
    }
    Ok(())
}

fn error_norm(s: &[f64], next: &[f64], err: &[f64], rtol: f64, atol: f64) -> f64 {
    s.iter()
        .zip(next)
        .zip(err)
        .map(|((a, b), e)| e.abs() / (atol + rtol * a.abs().max(b.abs())))
        .fold(0.0, f64::max)
}

fn integrate_adaptive(
    field: &(impl VectorField + ?Sized),
    eval_times: &[f64],
    config: &SolverConfig,
    out: &mut DenseTrajectory,
) -> Result<()> {
    let tab = config.method.tableau();
    let exponent = 1.0 / (tab.error_order as f64 + 1.0);
    let t_start = eval_times[0];
    let span = eval_times[eval_times.len() - 1] - t_start;
    let mut s = out.states[0].clone();
    let mut work = StepWork::new(tab, s.len());
    let mut t = t_start;
    let mut h = 1e-2 * span;

    for &target in &eval_times[1..] {
        while t < target {
            if out.accepted + out.rejected >= config.max_steps {
                return Err(Error::Divergence {
                    t,
                    max_steps: config.max_steps,
                });
            }
            let remaining = target - t;
            // land exactly on the evaluation time when the step reaches it
            let lands = h >= remaining * (1.0 - 1e-12);
            let h_try = if lands { remaining } else { h };
            rk_step(tab, field, t, &s, h_try, &mut work)?;
            let err = error_norm(&s, &work.next, &work.err, config.rtol, config.atol);
            if !err.is_finite() {
                return Err(Error::Instability {
                    t,
                    what: "non-finite error estimate".into(),
                });
            }
            if err <= 1.0 {
                out.accepted += 1;
                t = if lands { target } else { t + h_try };
                std::mem::swap(&mut s, &mut work.next);
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-exponent)).clamp(0.2, 5.0)
                };
                let proposal = h_try * factor;
                // a step shortened only to hit an evaluation time keeps the
                // previously proposed size
                h = if lands && h_try < h { proposal.max(h) } else { proposal };
            } else {
                out.rejected += 1;
                h = h_try * (0.9 * err.powf(-exponent)).clamp(0.2, 1.0);
                if h <= 1e-14 * t.abs().max(1.0) {
                    return Err(Error::Instability {
                        t,
                        what: format!("step size underflow (h = {h:e})"),
                    });
                }
            }
        }
        out.times.push(target);
        out.states.push(s.clone());
    }
    Ok(())
}

/// Integrates with `n` equal steps of any tableau's propagated solution,
/// ignoring its embedded estimate. Returns the state at `t1`.
pub fn fixed_step_solve(
    method: Method,
    field: &(impl VectorField + ?Sized),
    s0: &[f64],
    t0: f64,
    t1: f64,
    n: usize,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Config("need at least one step".into()));
    }
    let tab = method.tableau();
    let h = (t1 - t0) / n as f64;
    let mut work = StepWork::new(tab, s0.len());
    let mut s = s0.to_vec();
    for k in 0..n {
        rk_step(tab, field, t0 + k as f64 * h, &s, h, &mut work)?;
        std::mem::swap(&mut s, &mut work.next);
    }
    Ok(s)
}
