//! Discrete-time ensemble transition model `s' = s + g(s, a[, Δt])`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Activation, Adam, Matrix, MlpSpec, OutputTransform, ParamStore, Tape};
use crate::seeds::{child_seed, rng_from};
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpetsMode {
    /// Network input `[s, a]`.
    Vanilla,
    /// Network input `[s, a, Δt]`.
    Modified,
}

/// One observed transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub dt: f64,
    pub next: Vec<f64>,
}

/// Consecutive observation pairs of every trajectory.
pub fn transitions(trajs: &[Trajectory]) -> Vec<Transition> {
    trajs
        .iter()
        .flat_map(|tr| {
            (0..tr.len().saturating_sub(1)).map(move |i| Transition {
                s: tr.states[i].clone(),
                a: tr.actions[i].clone(),
                dt: tr.times[i + 1] - tr.times[i],
                next: tr.states[i + 1].clone(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpetsModel {
    pub mode: MpetsMode,
    pub state_dim: usize,
    pub action_dim: usize,
    pub spec: MlpSpec,
    pub members: Vec<ParamStore>,
}

impl MpetsModel {
    pub fn new(
        mode: MpetsMode,
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        n_ens: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_ens == 0 {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        let extra = usize::from(mode == MpetsMode::Modified);
        let mut widths = vec![state_dim + action_dim + extra];
        widths.extend(hidden);
        widths.push(state_dim);
        let spec = MlpSpec::new(widths, activation, OutputTransform::Identity)?;
        let members = (0..n_ens)
            .map(|l| spec.init_params(&mut rng_from(child_seed(seed, l as u64))))
            .collect::<Result<Vec<_>>>()?;
        Ok(MpetsModel {
            mode,
            state_dim,
            action_dim,
            spec,
            members,
        })
    }

    fn inputs(&self, data: &[&Transition]) -> Result<Matrix> {
        let width = self.spec.input_dim();
        let mut flat = Vec::with_capacity(data.len() * width);
        for tr in data {
            if tr.s.len() != self.state_dim || tr.a.len() != self.action_dim || tr.next.len() != self.state_dim {
                return Err(Error::Shape("transition does not match the model dimensions".into()));
            }
            if !(tr.dt > 0.0) {
                return Err(Error::Domain(format!("time increment {} must be positive", tr.dt)));
            }
            flat.extend(&tr.s);
            flat.extend(&tr.a);
            if self.mode == MpetsMode::Modified {
                flat.push(tr.dt);
            }
        }
        Matrix::from_vec(data.len(), width, flat)
    }

    /// Next state predicted by member `l`.
    pub fn step(&self, l: usize, s: &[f64], a: &[f64], dt: f64) -> Result<Vec<f64>> {
        let member = self.members.get(l).ok_or_else(|| Error::Usage(format!("no ensemble member {l}")))?;
        let probe = Transition {
            s: s.to_vec(),
            a: a.to_vec(),
            dt,
            next: s.to_vec(),
        };
        let inc = self.spec.forward(member, &self.inputs(&[&probe])?)?;
        Ok(s.iter().zip(inc.as_slice()).map(|(x, d)| x + d).collect())
    }

    /// Mean squared one-step error of member `l`, averaged over samples and
    /// dimensions.
    pub fn member_mse(&self, l: usize, data: &[Transition]) -> Result<f64> {
        let refs: Vec<&Transition> = data.iter().collect();
        let inc = self.spec.forward(&self.members[l], &self.inputs(&refs)?)?;
        let mut total = 0.0;
        for (i, tr) in data.iter().enumerate() {
            for k in 0..self.state_dim {
                total += (tr.s[k] + inc[(i, k)] - tr.next[k]).powi(2);
            }
        }
        Ok(total / (data.len() * self.state_dim) as f64)
    }

    /// [`Self::member_mse`] averaged over members.
    pub fn mse(&self, data: &[Transition]) -> Result<f64> {
        let mut total = 0.0;
        for l in 0..self.members.len() {
            total += self.member_mse(l, data)?;
        }
        Ok(total / self.members.len() as f64)
    }

    /// Adam on the one-step squared error, each member with its own
    /// minibatches of at most `batch` transitions. Returns the final
    /// full-data [`Self::mse`].
    pub fn fit(&mut self, data: &[Transition], steps: usize, lr: f64, batch: usize, rng: &mut impl Rng) -> Result<f64> {
        if data.is_empty() || batch == 0 {
            return Err(Error::Usage("fitting needs transitions and a positive batch size".into()));
        }
        let d = self.state_dim;
        for l in 0..self.members.len() {
            let mut opt = Adam::new(&self.members[l], lr);
            for _ in 0..steps {
                let picked: Vec<&Transition> = if batch >= data.len() {
                    data.iter().collect()
                } else {
                    (0..batch).map(|_| &data[rng.random_range(0..data.len())]).collect()
                };
                let x = self.inputs(&picked)?;
                let target: Vec<f64> = picked
                    .iter()
                    .flat_map(|tr| tr.next.iter().zip(&tr.s).map(|(n, s)| n - s))
                    .collect();
                let tape = &mut Tape::new();
                let vars = self.members[l].bind(tape);
                let xv = tape.constant(x);
                let y = tape.constant(Matrix::from_vec(picked.len(), d, target)?);
                let out = self.spec.forward_taped(tape, &vars, xv);
                let diff = tape.sub(out, y);
                let sq = tape.square(diff);
                let total = tape.sum(sq);
                let loss = tape.scale(total, 1.0 / (picked.len() * d) as f64);
                let g = tape.backward(loss)?;
                self.members[l].accumulate(&g, &vars);
                opt.step(&mut self.members[l]);
            }
        }
        self.mse(data)
    }
}
