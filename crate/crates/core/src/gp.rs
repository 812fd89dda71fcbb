//! Squared-exponential kernels: action interpolation between knots and
//! Gaussian-process draws for random and exploring policies.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envs::{Controller, EnvSpec};
use crate::error::{Error, Result};
use crate::math::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub sigma: f64,
    pub length_scale: f64,
    /// Diagonal regularizer added before factorization.
    pub jitter: f64,
}

impl KernelConfig {
    /// Jitter defaults to `1e-6·σ²`.
    pub fn new(sigma: f64, length_scale: f64) -> Self {
        KernelConfig {
            sigma,
            length_scale,
            jitter: 1e-6 * sigma * sigma,
        }
    }

    /// Random initial policies: σ = 0.5, ℓ = 0.5.
    pub fn initial_policy() -> Self {
        Self::new(0.5, 0.5)
    }

    /// Exploration noise: σ = 0.1, ℓ = 0.5.
    pub fn exploration() -> Self {
        Self::new(0.1, 0.5)
    }

    /// Action interpolation for observations `kappa` seconds apart on
    /// average: unit scale, ℓ = 2κ, jitter 1e-10 so that knots are
    /// reproduced closely despite the kernel matrix's conditioning.
    pub fn interpolation(kappa: f64) -> Self {
        KernelConfig {
            jitter: 1e-10,
            ..Self::new(1.0, 2.0 * kappa)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma > 0.0 && self.length_scale > 0.0 && self.jitter > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("kernel parameters must be positive: {self:?}")))
        }
    }

    #[inline]
    pub fn k(&self, t1: f64, t2: f64) -> f64 {
        let d = t1 - t2;
        self.sigma * self.sigma * (-d * d / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

pub fn kernel_matrix(t1: &[f64], t2: &[f64], cfg: &KernelConfig) -> Matrix {
    let mut k = Matrix::zeros(t1.len(), t2.len());
    for (i, a) in t1.iter().enumerate() {
        for (j, b) in t2.iter().enumerate() {
            k.row_mut(i)[j] = cfg.k(*a, *b);
        }
    }
    k
}

fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Cholesky factor of `K + jitter·I`, escalating the jitter by ×10 from
/// `cfg.jitter` up to `1e-2·σ²` until the factorization succeeds.
pub fn jittered_cholesky(times: &[f64], cfg: &KernelConfig) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    cfg.validate()?;
    let base = to_dmatrix(&kernel_matrix(times, times, cfg));
    let ceiling = 1e-2 * cfg.sigma * cfg.sigma;
    let mut jitter = cfg.jitter;
    loop {
        let mut k = base.clone();
        for i in 0..times.len() {
            k[(i, i)] += jitter;
        }
        if let Some(chol) = k.clone().cholesky() {
            if jitter > cfg.jitter {
                log::debug!("cholesky needed jitter {jitter:e} on {} points", times.len());
            }
            return Ok((chol, jitter));
        }
        if jitter * 10.0 > ceiling * (1.0 + 1e-12) {
            let diag = k.diagonal();
            return Err(Error::NotPositiveDefinite {
                n: times.len(),
                jitter,
                min_diag: diag.min(),
                max_diag: diag.max(),
            });
        }
        jitter *= 10.0;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionKnots {
    pub times: Vec<f64>,
    pub actions: Vec<Vec<f64>>,
}

impl ActionKnots {
    pub fn new(times: Vec<f64>, actions: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != actions.len() {
            return Err(Error::Shape(format!("{} knot times, {} actions", times.len(), actions.len())));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("knot times must be strictly increasing".into()));
        }
        let m = actions[0].len();
        if actions.iter().any(|a| a.len() != m) {
            return Err(Error::Shape("ragged knot actions".into()));
        }
        Ok(ActionKnots { times, actions })
    }
}

/// Kernel-ridge interpolant `a(t) = k(t, T) (K + jitter·I)⁻¹ A`.
#[derive(Clone, Debug)]
pub struct Interpolant {
    times: Vec<f64>,
    cfg: KernelConfig,
    /// n×m weights `(K + jitter·I)⁻¹ A`, row-major.
    weights: Vec<f64>,
    dim: usize,
}

impl Interpolant {
    pub fn new(knots: &ActionKnots, cfg: &KernelConfig) -> Result<Self> {
        let (chol, _) = jittered_cholesky(&knots.times, cfg)?;
        let n = knots.times.len();
        let dim = knots.actions[0].len();
        let rhs = DMatrix::from_fn(n, dim, |i, j| knots.actions[i][j]);
        let w = chol.solve(&rhs);
        let mut weights = vec![0.0; n * dim];
        for i in 0..n {
            for j in 0..dim {
                weights[i * dim + j] = w[(i, j)];
            }
        }
        Ok(Interpolant {
            times: knots.times.clone(),
            cfg: *cfg,
            weights,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        out.fill(0.0);
        for (i, ti) in self.times.iter().enumerate() {
            let k = self.cfg.k(t, *ti);
            if k == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(&self.weights[i * self.dim..(i + 1) * self.dim]) {
                *o += k * w;
            }
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }
}

/// Independent zero-mean GP draws at `times` for each of `dim` outputs:
/// `L z` with `L` the jittered Cholesky factor. Returns one vector per time.
pub fn sample_gp(times: &[f64], dim: usize, cfg: &KernelConfig, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    let (chol, _) = jittered_cholesky(times, cfg)?;
    let l = chol.l();
    let n = times.len();
    let mut out = vec![vec![0.0; dim]; n];
    for j in 0..dim {
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let draw = &l * z;
        for i in 0..n {
            out[i][j] = draw[i];
        }
    }
    Ok(out)
}

/// A time-only action `a_max·tanh(g(t))` where `g` interpolates a GP draw.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    draw: Interpolant,
    a_max: f64,
}

impl RandomPolicy {
    pub fn from_draws(times: Vec<f64>, draws: Vec<Vec<f64>>, cfg: &KernelConfig, a_max: f64) -> Result<Self> {
        Ok(RandomPolicy {
            draw: Interpolant::new(&ActionKnots::new(times, draws)?, cfg)?,
            a_max,
        })
    }

    pub fn action(&self, t: f64) -> Vec<f64> {
        self.draw.eval(t).into_iter().map(|g| self.a_max * g.tanh()).collect()
    }
}

impl Controller for RandomPolicy {
    fn act(&self, t: f64, _obs: &[f64], out: &mut [f64]) {
        self.draw.eval_into(t, out);
        for v in out {
            *v = self.a_max * v.tanh();
        }
    }
}

/// A smooth random policy for `env`, drawn at `times` and extended to
/// continuous time by the same kernel.
pub fn random_initial_policy(env: &EnvSpec, times: &[f64], rng: &mut impl Rng) -> Result<RandomPolicy> {
    let cfg = KernelConfig::initial_policy();
    let draws = sample_gp(times, env.act_dim, &cfg, rng)?;
    RandomPolicy::from_draws(times.to_vec(), draws, &cfg, env.a_max)
}

/// `clamp(π(s) + z(t), ±a_max)` for a base policy `π` and a time-indexed
/// noise interpolant `z`.
pub struct ExploringPolicy<P> {
    pub base: P,
    pub noise: Interpolant,
    pub a_max: f64,
}

impl<P> ExploringPolicy<P> {
    /// Draws the noise at `times` with the exploration kernel.
    pub fn new(base: P, times: &[f64], dim: usize, a_max: f64, rng: &mut impl Rng) -> Result<Self> {
        let cfg = KernelConfig::exploration();
        let draws = sample_gp(times, dim, &cfg, rng)?;
        let noise = Interpolant::new(&ActionKnots::new(times.to_vec(), draws)?, &cfg)?;
        Ok(ExploringPolicy { base, noise, a_max })
    }
}

pub fn exploring_action(base_action: &[f64], noise: &[f64], a_max: f64) -> Vec<f64> {
    base_action
        .iter()
        .zip(noise)
        .map(|(a, z)| (a + z).clamp(-a_max, a_max))
        .collect()
}

impl<P: Controller> Controller for ExploringPolicy<P> {
    fn act(&self, t: f64, obs: &[f64], out: &mut [f64]) {
        self.base.act(t, obs, out);
        let z = self.noise.eval(t);
        for (o, z) in out.iter_mut().zip(z) {
            *o = (*o + z).clamp(-self.a_max, self.a_max);
        }
    }
}
