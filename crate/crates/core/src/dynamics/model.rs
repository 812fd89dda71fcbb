//! Ensemble of neural vector fields with shared diagonal observation noise.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Activation, Matrix, MlpSpec, OutputTransform, ParamId, ParamSnapshot, ParamStore, Tape, Var};
use crate::seeds::{child_seed, rng_from};

/// How the network output is turned into a state derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsForm {
    /// `ds/dt = net(s, a)`.
    General,
    /// `ds/dt = f(s) + h(s) a` with `f` and `h` read from one network on `s`.
    LinearInAction,
    /// State is `[q, v]` with equal halves; `dq/dt = v`, `dv/dt = net(s, a)`.
    SecondOrder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub n_ens: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub form: DynamicsForm,
    /// Initial observation-noise variance per dimension.
    pub init_noise_var: f64,
    /// Weight of the `‖θ‖²` penalty per member.
    pub weight_decay: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            n_ens: 5,
            hidden: vec![200, 200, 200],
            activation: Activation::Elu,
            form: DynamicsForm::General,
            init_noise_var: 1e-2,
            weight_decay: 1e-4,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if self.n_ens == 0 {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(self.init_noise_var > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "noise variance {} must be positive and weight decay {} non-negative",
                self.init_noise_var, self.weight_decay
            )));
        }
        if state_dim == 0 {
            return Err(Error::Config("state dimension must be positive".into()));
        }
        if self.form == DynamicsForm::SecondOrder && state_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "second-order form needs an even state dimension, got {state_dim}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleDynamics {
    pub config: DynamicsConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub spec: MlpSpec,
    pub members: Vec<ParamStore>,
    /// Single `1 x d` block holding `log Σ`.
    pub log_var: ParamStore,
    /// Dynamics optimization steps taken so far.
    pub iterations: u64,
}

/// Serialized ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsCheckpoint {
    pub config: DynamicsConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub spec: MlpSpec,
    pub members: Vec<ParamSnapshot>,
    pub log_var: ParamSnapshot,
    pub iterations: u64,
}

fn io_dims(form: DynamicsForm, d: usize, m: usize) -> (usize, usize) {
    match form {
        DynamicsForm::General => (d + m, d),
        DynamicsForm::LinearInAction => (d, d * (1 + m)),
        DynamicsForm::SecondOrder => (d + m, d / 2),
    }
}

impl EnsembleDynamics {
    /// Member `l` is initialized from `child_seed(seed, l)`.
    pub fn new(config: DynamicsConfig, state_dim: usize, action_dim: usize, seed: u64) -> Result<Self> {
        config.validate(state_dim)?;
        let (n_in, n_out) = io_dims(config.form, state_dim, action_dim);
        let mut widths = vec![n_in];
        widths.extend(&config.hidden);
        widths.push(n_out);
        let spec = MlpSpec::new(widths, config.activation, OutputTransform::Identity)?;
        let members = (0..config.n_ens)
            .map(|l| spec.init_params(&mut rng_from(child_seed(seed, l as u64))))
            .collect::<Result<Vec<_>>>()?;
        let mut log_var = ParamStore::new();
        log_var.add("log_var", Matrix::filled(1, state_dim, config.init_noise_var.ln()))?;
        Ok(EnsembleDynamics {
            config,
            state_dim,
            action_dim,
            spec,
            members,
            log_var,
            iterations: 0,
        })
    }

    pub fn n_ens(&self) -> usize {
        self.members.len()
    }

    pub fn form(&self) -> DynamicsForm {
        self.config.form
    }

    /// Observation-noise variances `exp(log Σ)`.
    pub fn variances(&self) -> Vec<f64> {
        self.log_var.value(ParamId(0)).as_slice().iter().map(|v| v.exp()).collect()
    }

    fn check_batch(&self, s: &Matrix, a: &Matrix) -> Result<()> {
        if s.cols() != self.state_dim || a.cols() != self.action_dim || s.rows() != a.rows() {
            return Err(Error::Shape(format!(
                "states {:?} and actions {:?} for a model with d={}, m={}",
                s.shape(),
                a.shape(),
                self.state_dim,
                self.action_dim
            )));
        }
        Ok(())
    }

    fn net_input(&self, s: &Matrix, a: &Matrix) -> Matrix {
        match self.config.form {
            DynamicsForm::LinearInAction => s.clone(),
            _ => Matrix::concat_cols(&[s, a]).expect("row counts checked"),
        }
    }

    /// Derivatives for a batch of rows under member `l`.
    pub fn field_batch(&self, l: usize, s: &Matrix, a: &Matrix) -> Result<Matrix> {
        self.check_batch(s, a)?;
        let params = self.members.get(l).ok_or_else(|| Error::Usage(format!("no ensemble member {l}")))?;
        let out = self.spec.forward(params, &self.net_input(s, a))?;
        let (n, d, m) = (s.rows(), self.state_dim, self.action_dim);
        Ok(match self.config.form {
            DynamicsForm::General => out,
            DynamicsForm::LinearInAction => {
                let mut ds = out.slice_cols(0, d);
                for i in 0..n {
                    for k in 0..d {
                        let h = &out.row(i)[d + k * m..d + (k + 1) * m];
                        ds[(i, k)] += h.iter().zip(a.row(i)).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
                ds
            }
            DynamicsForm::SecondOrder => {
                let vel = s.slice_cols(d / 2, d);
                Matrix::concat_cols(&[&vel, &out]).expect("row counts match")
            }
        })
    }

    /// Single-state derivative under member `l`.
    pub fn field_eval(&self, l: usize, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        Ok(self.field_batch(l, &Matrix::row_vector(s), &Matrix::row_vector(a))?.into_vec())
    }

    /// Binds member `l` on `tape`, as leaves or as constants.
    pub fn bind_member(&self, tape: &mut Tape, l: usize, trainable: bool) -> Vec<Var> {
        if trainable {
            self.members[l].bind(tape)
        } else {
            self.members[l].bind_frozen(tape)
        }
    }

    /// Recorded derivative for rows `s` (n x d) and `a` (n x m) using a
    /// member bound with [`Self::bind_member`].
    pub fn field_taped(&self, tape: &mut Tape, vars: &[Var], s: Var, a: Var) -> Var {
        let (d, m) = (self.state_dim, self.action_dim);
        match self.config.form {
            DynamicsForm::General => {
                let x = tape.concat_cols(&[s, a]);
                self.spec.forward_taped(tape, vars, x)
            }
            DynamicsForm::LinearInAction => {
                let out = self.spec.forward_taped(tape, vars, s);
                let f = tape.slice_cols(out, 0, d);
                if m == 0 {
                    return f;
                }
                let cols: Vec<Var> = (0..d)
                    .map(|k| {
                        let h = tape.slice_cols(out, d + k * m, d + (k + 1) * m);
                        let ha = tape.mul(h, a);
                        tape.row_sum(ha)
                    })
                    .collect();
                let control = tape.concat_cols(&cols);
                tape.add(f, control)
            }
            DynamicsForm::SecondOrder => {
                let x = tape.concat_cols(&[s, a]);
                let acc = self.spec.forward_taped(tape, vars, x);
                let vel = tape.slice_cols(s, d / 2, d);
                tape.concat_cols(&[vel, acc])
            }
        }
    }

    /// Ensemble disagreement per row: member variance of the derivative,
    /// summed over dimensions.
    pub fn disagreement(&self, s: &Matrix, a: &Matrix) -> Result<Vec<f64>> {
        let outs = (0..self.n_ens())
            .map(|l| self.field_batch(l, s, a))
            .collect::<Result<Vec<_>>>()?;
        let n = self.n_ens() as f64;
        Ok((0..s.rows())
            .map(|i| {
                (0..self.state_dim)
                    .map(|k| {
                        let mean = outs.iter().map(|o| o[(i, k)]).sum::<f64>() / n;
                        outs.iter().map(|o| (o[(i, k)] - mean).powi(2)).sum::<f64>() / n
                    })
                    .sum()
            })
            .collect())
    }

    pub fn checkpoint(&self) -> DynamicsCheckpoint {
        DynamicsCheckpoint {
            config: self.config.clone(),
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            spec: self.spec.clone(),
            members: self.members.iter().map(ParamStore::snapshot).collect(),
            log_var: self.log_var.snapshot(),
            iterations: self.iterations,
        }
    }

    pub fn from_checkpoint(ckpt: &DynamicsCheckpoint) -> Result<Self> {
        ckpt.config.validate(ckpt.state_dim)?;
        let members = ckpt
            .members
            .iter()
            .map(ParamStore::from_snapshot)
            .collect::<Result<Vec<_>>>()?;
        for p in &members {
            ckpt.spec.check_params(p)?;
        }
        let log_var = ParamStore::from_snapshot(&ckpt.log_var)?;
        if log_var.len() != 1 || log_var.value(ParamId(0)).shape() != (1, ckpt.state_dim) {
            return Err(Error::Config("log-variance block does not match the state dimension".into()));
        }
        let (n_in, n_out) = io_dims(ckpt.config.form, ckpt.state_dim, ckpt.action_dim);
        if ckpt.spec.input_dim() != n_in || ckpt.spec.output_dim() != n_out || members.is_empty() {
            return Err(Error::Config("checkpoint network does not match its dimensions".into()));
        }
        Ok(EnsembleDynamics {
            config: ckpt.config.clone(),
            state_dim: ckpt.state_dim,
            action_dim: ckpt.action_dim,
            spec: ckpt.spec.clone(),
            members,
            log_var,
            iterations: ckpt.iterations,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.checkpoint())?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&serde_json::from_str(&json)?)
    }
}
