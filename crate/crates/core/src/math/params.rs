//! Named parameter blocks with matching gradient accumulators.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

/// Index of a block inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    grads: Vec<Matrix>,
}

/// Serialized form of a [`ParamStore`]: one entry per block, in insertion
/// order, with its shape and flat row-major values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub blocks: Vec<BlockSnapshot>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSnapshot {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        if !value.is_finite() {
            return Err(Error::Domain(format!("parameter `{name}` is not finite")));
        }
        self.grads.push(Matrix::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.names.push(name);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.grads[id.0]
    }

    pub(crate) fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&mut Matrix, &Matrix)> {
        self.values.iter_mut().zip(self.grads.iter())
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(Matrix::sum_squares).sum()
    }

    /// Records every block as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|v| tape.leaf(v.clone())).collect()
    }

    /// Records every block as a constant; no gradient flows back.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.values.iter().map(|v| tape.constant(v.clone())).collect()
    }

    /// Adds the gradients of the bound leaves into the accumulators.
    /// Blocks the loss did not touch are left unchanged.
    pub fn accumulate(&mut self, grads: &Gradients, vars: &[Var]) {
        assert_eq!(vars.len(), self.values.len(), "bound variables do not match store");
        for (acc, var) in self.grads.iter_mut().zip(vars) {
            if let Some(g) = grads.get(*var) {
                acc.add_assign(g);
            }
        }
    }

    /// Overwrites all values with those of `other`, which must have the
    /// same block layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names
            || self
                .values
                .iter()
                .zip(&other.values)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Shape("parameter layouts differ".into()));
        }
        self.values.clone_from(&other.values);
        Ok(())
    }

    pub fn snapshot(&self) -> ParamSnapshot {
        ParamSnapshot {
            blocks: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(name, v)| BlockSnapshot {
                    name: name.clone(),
                    shape: [v.rows(), v.cols()],
                    values: v.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_snapshot(snapshot: &ParamSnapshot) -> Result<Self> {
        let mut store = ParamStore::new();
        for block in &snapshot.blocks {
            let value = Matrix::from_vec(block.shape[0], block.shape[1], block.values.clone())?;
            store.add(block.name.clone(), value)?;
        }
        Ok(store)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.snapshot())?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Self::from_snapshot(&serde_json::from_str(json)?)
    }
}
