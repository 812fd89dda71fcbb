//! Policy and critic networks.

use serde::{Deserialize, Serialize};

use crate::envs::Controller;
use crate::error::Result;
use crate::math::{Activation, Matrix, MlpSpec, OutputTransform, ParamSnapshot, ParamStore, Tape, Var};
use crate::seeds::rng_from;

/// Deterministic policy `a = π(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub spec: MlpSpec,
    pub params: ParamStore,
}

impl Policy {
    /// ReLU network with a `a_max · tanh` output.
    pub fn new(obs_dim: usize, act_dim: usize, a_max: f64, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut widths = vec![obs_dim];
        widths.extend(hidden);
        widths.push(act_dim);
        let spec = MlpSpec::new(widths, Activation::Relu, OutputTransform::TanhScaled(a_max))?;
        Self::from_spec(spec, seed)
    }

    pub fn from_spec(spec: MlpSpec, seed: u64) -> Result<Self> {
        let params = spec.init_params(&mut rng_from(seed))?;
        Ok(Policy { spec, params })
    }

    pub fn act_batch(&self, obs: &Matrix) -> Result<Matrix> {
        self.spec.forward(&self.params, obs)
    }

    pub fn forward_taped(&self, tape: &mut Tape, vars: &[Var], obs: Var) -> Var {
        self.spec.forward_taped(tape, vars, obs)
    }
}

impl Controller for Policy {
    fn act(&self, _t: f64, obs: &[f64], out: &mut [f64]) {
        let a = self.spec.forward_unchecked(&self.params, &Matrix::row_vector(obs));
        out.copy_from_slice(a.as_slice());
    }
}

/// State-value network with a frozen target copy.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub spec: MlpSpec,
    pub params: ParamStore,
    pub target: ParamStore,
    /// Number of target refreshes so far.
    pub copies: u64,
}

impl Critic {
    /// Tanh network with a scalar linear output.
    pub fn new(obs_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut widths = vec![obs_dim];
        widths.extend(hidden);
        widths.push(1);
        let spec = MlpSpec::new(widths, Activation::Tanh, OutputTransform::Identity)?;
        let params = spec.init_params(&mut rng_from(seed))?;
        Ok(Critic {
            spec,
            target: params.clone(),
            params,
            copies: 0,
        })
    }

    pub fn value(&self, obs: &Matrix) -> Result<Vec<f64>> {
        Ok(self.spec.forward(&self.params, obs)?.into_vec())
    }

    pub fn target_value(&self, obs: &Matrix) -> Result<Vec<f64>> {
        Ok(self.spec.forward(&self.target, obs)?.into_vec())
    }

    /// Recorded target-network output on `obs`; the target weights are constants.
    pub fn target_taped(&self, tape: &mut Tape, obs: Var) -> Var {
        let vars = self.target.bind_frozen(tape);
        self.spec.forward_taped(tape, &vars, obs)
    }

    /// Copies the live weights into the target.
    pub fn update_target(&mut self) {
        self.target = self.params.clone();
        self.target.zero_grad();
        self.copies += 1;
    }
}

/// Serialized policy and critic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorCriticCheckpoint {
    pub policy_spec: MlpSpec,
    pub policy: ParamSnapshot,
    pub critic_spec: MlpSpec,
    pub critic: ParamSnapshot,
    pub critic_target: ParamSnapshot,
    pub target_copies: u64,
    pub actor_opt: crate::math::Adam,
    pub critic_opt: crate::math::Adam,
}
