//! Empirical convergence checks against problems with known solutions.

use super::solver::{fixed_step_solve, integrate, SolverConfig, VectorField};
use super::tableau::Method;
use crate::error::{Error, Result};

fn max_abs_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Global error at `t_end` for each step size using equal fixed steps of
/// `method`'s propagated solution, and the fitted log-log slope.
///
/// Step sizes must number at least four and span at least a decade.
pub fn convergence_order(
    method: Method,
    field: &(impl VectorField + ?Sized),
    s0: &[f64],
    t_end: f64,
    exact: &[f64],
    step_sizes: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if step_sizes.len() < 4 {
        return Err(Error::Config("need at least four step sizes".into()));
    }
    let lo = step_sizes.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = step_sizes.iter().cloned().fold(0.0, f64::max);
    if !(lo > 0.0) || hi / lo < 10.0 * (1.0 - 1e-9) {
        return Err(Error::Config("step sizes must be positive and span a decade".into()));
    }
    let mut errors = Vec::with_capacity(step_sizes.len());
    for &h in step_sizes {
        let n = (t_end / h).round().max(1.0) as usize;
        let s = fixed_step_solve(method, field, s0, 0.0, t_end, n)?;
        errors.push(max_abs_error(&s, exact));
    }
    Ok((log_log_slope(step_sizes, &errors), errors))
}

/// Global error at `t_end` of an adaptive method for each relative
/// tolerance (with `atol = rtol`).
pub fn tolerance_sweep(
    method: Method,
    field: &(impl VectorField + ?Sized),
    s0: &[f64],
    t_end: f64,
    exact: &[f64],
    rtols: &[f64],
) -> Result<Vec<f64>> {
    rtols
        .iter()
        .map(|&tol| {
            let traj = integrate(field, s0, &[0.0, t_end], &SolverConfig::adaptive(method, tol, tol))?;
            Ok(max_abs_error(traj.final_state(), exact))
        })
        .collect()
}
