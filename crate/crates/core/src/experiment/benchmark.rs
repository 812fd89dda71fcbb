//! Error of approximate integrators against the reference solver along
//! closed-loop trajectories of the true system.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::report::write_atomic;
use crate::actor_critic::Policy;
use crate::envs::{ClosedLoop, Controller, EnvSpec};
use crate::error::{Error, Result};
use crate::gp::random_initial_policy;
use crate::ode::{integrate_partial, Method, SolverConfig, VectorField};

/// Errors beyond this, and non-finite ones, are recorded as this value.
pub const BENCH_ERROR_CAP: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BenchSolver {
    /// Fixed-step method with the given step.
    Fixed { method: Method, step: f64 },
    /// Adaptive method with `rtol = atol = tol`.
    Adaptive { method: Method, tol: f64 },
    /// Discrete transitions `s' = s + h·f(s, a)` with the action held.
    Discrete { step: f64 },
}

impl std::fmt::Display for BenchSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BenchSolver::Fixed { method, step } => write!(f, "{method}:{step}"),
            BenchSolver::Adaptive { method, tol } => write!(f, "{method}:{tol:e}"),
            BenchSolver::Discrete { step } => write!(f, "discrete:{step}"),
        }
    }
}

impl std::str::FromStr for BenchSolver {
    type Err = String;

    /// `name[:param]`: a step for `euler`, `rk4` and `discrete` (default
    /// 0.1), a tolerance for adaptive methods (default 1e-7).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p.parse::<f64>().map_err(|e| format!("bad parameter in `{s}`: {e}"))?)),
            None => (s, None),
        };
        if param.is_some_and(|p| !(p > 0.0)) {
            return Err(format!("parameter in `{s}` must be positive"));
        }
        if name.eq_ignore_ascii_case("discrete") {
            return Ok(BenchSolver::Discrete { step: param.unwrap_or(0.1) });
        }
        let method: Method = name.parse()?;
        Ok(if method.is_adaptive() {
            BenchSolver::Adaptive {
                method,
                tol: param.unwrap_or(1e-7),
            }
        } else {
            BenchSolver::Fixed {
                method,
                step: param.unwrap_or(0.1),
            }
        })
    }
}

/// Per-solver errors, indexed `[policy][time]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub solver: String,
    pub errors: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub times: Vec<f64>,
    pub rows: Vec<BenchRow>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

impl BenchRow {
    /// Median error over policies at every time.
    pub fn median_curve(&self) -> Vec<f64> {
        (0..self.errors[0].len())
            .map(|j| median(self.errors.iter().map(|e| e[j]).collect()))
            .collect()
    }

    pub fn max_error(&self) -> f64 {
        self.errors.iter().flatten().copied().fold(0.0, f64::max)
    }
}

impl BenchmarkTable {
    pub fn row(&self, solver: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.solver == solver)
    }

    /// `solver,time,median_error,max_error`, one line per solver and time.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let csv_err = |e: csv::Error| Error::Usage(format!("csv: {e}"));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["solver", "time", "median_error", "max_error"]).map_err(csv_err)?;
        for row in &self.rows {
            let med = row.median_curve();
            for (j, t) in self.times.iter().enumerate() {
                let max = row.errors.iter().map(|e| e[j]).fold(0.0, f64::max);
                w.write_record([row.solver.clone(), t.to_string(), med[j].to_string(), max.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.into_inner().map_err(|e| Error::Usage(format!("csv: {e}")))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv()?)
    }
}

/// Discrete transitions between `times`, each gap split into steps of at
/// most `step`. Non-finite states end the rollout.
fn discrete_rollout(field: &impl VectorField, x0: &[f64], times: &[f64], step: f64) -> Vec<Vec<f64>> {
    let mut x = x0.to_vec();
    let mut dx = vec![0.0; x.len()];
    let mut out = vec![x.clone()];
    for w in times.windows(2) {
        let n = ((w[1] - w[0]) / step - 1e-9).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / n as f64;
        for j in 0..n {
            field.eval(w[0] + j as f64 * h, &x, &mut dx);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += h * di;
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            break;
        }
        out.push(x.clone());
    }
    out
}

fn solve(solver: &BenchSolver, field: &impl VectorField, x0: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
    let cfg = match *solver {
        BenchSolver::Discrete { step } => return Ok(discrete_rollout(field, x0, times, step)),
        BenchSolver::Adaptive { method, tol } => SolverConfig::adaptive(method, tol, tol),
        BenchSolver::Fixed { method, step } => {
            let gap = times[1] - times[0];
            if times.windows(2).any(|w| (w[1] - w[0] - gap).abs() > 1e-9) {
                return Err(Error::Usage("fixed-step benchmarks need an evenly spaced time grid".into()));
            }
            SolverConfig::fixed(method, ((gap / step) - 1e-9).ceil().max(1.0) as usize)
        }
    };
    Ok(integrate_partial(field, x0, times, &cfg)?.0.states)
}

/// For every solver, policy, and time, the observation-space distance
/// between the solver's closed-loop state and the reference solution.
pub fn solver_benchmark(
    env: &EnvSpec,
    policies: &[&dyn Controller],
    x0s: &[Vec<f64>],
    solvers: &[BenchSolver],
    times: &[f64],
) -> Result<BenchmarkTable> {
    if policies.is_empty() || policies.len() != x0s.len() {
        return Err(Error::Usage(format!("{} policies for {} initial states", policies.len(), x0s.len())));
    }
    if times.len() < 2 {
        return Err(Error::Usage("the benchmark needs at least two times".into()));
    }
    let mut rows: Vec<BenchRow> = solvers
        .iter()
        .map(|s| BenchRow {
            solver: s.to_string(),
            errors: Vec::new(),
        })
        .collect();
    for (policy, x0) in policies.iter().zip(x0s) {
        let field = ClosedLoop { env, controller: *policy };
        let (reference, failure) = integrate_partial(&field, x0, times, &SolverConfig::reference())?;
        if let Some(e) = failure {
            return Err(e);
        }
        let truth: Vec<Vec<f64>> = reference.states.iter().map(|x| env.observe(x)).collect();
        for (solver, row) in solvers.iter().zip(rows.iter_mut()) {
            let states = solve(solver, &field, x0, times)?;
            let errors = (0..times.len())
                .map(|j| match states.get(j) {
                    Some(x) => {
                        let d = env
                            .observe(x)
                            .iter()
                            .zip(&truth[j])
                            .map(|(a, b)| (a - b).powi(2))
                            .sum::<f64>()
                            .sqrt();
                        if d.is_finite() {
                            d.min(BENCH_ERROR_CAP)
                        } else {
                            BENCH_ERROR_CAP
                        }
                    }
                    None => BENCH_ERROR_CAP,
                })
                .collect();
            row.errors.push(errors);
        }
    }
    Ok(BenchmarkTable {
        times: times.to_vec(),
        rows,
    })
}

/// `n` policies for the benchmark, alternating smooth random open-loop
/// policies and randomly initialized feedback networks, each with an
/// initial state from the environment's distribution.
pub fn mixed_policies(env: &EnvSpec, n: usize, duration: f64, rng: &mut impl Rng) -> Result<(Vec<Box<dyn Controller>>, Vec<Vec<f64>>)> {
    let grid: Vec<f64> = (0..=((duration / 0.1).ceil() as usize + 1)).map(|k| k as f64 * 0.1).collect();
    let mut policies: Vec<Box<dyn Controller>> = Vec::with_capacity(n);
    let mut x0s = Vec::with_capacity(n);
    for i in 0..n {
        if i % 2 == 0 {
            policies.push(Box::new(random_initial_policy(env, &grid, rng)?));
        } else {
            policies.push(Box::new(Policy::new(env.obs_dim(), env.act_dim, env.a_max, &[32, 32], rng.random())?));
        }
        x0s.push(env.sample_initial_state(rng));
    }
    Ok((policies, x0s))
}
