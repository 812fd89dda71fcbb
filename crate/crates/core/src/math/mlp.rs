//! Multilayer perceptrons over row batches.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::{ParamId, ParamStore};
use super::tape::{elu, relu, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Elu,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => elu(x),
            Activation::Relu => relu(x),
            Activation::Tanh => x.tanh(),
        }
    }

    fn record(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Elu => tape.elu(x),
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum OutputTransform {
    Identity,
    /// `bound * tanh(y)`.
    TanhScaled(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden: Vec<Activation>,
    pub output: OutputTransform,
}

impl MlpSpec {
    /// `widths` lists input, hidden, and output sizes; every hidden layer
    /// uses `activation`.
    pub fn new(widths: Vec<usize>, activation: Activation, output: OutputTransform) -> Result<Self> {
        let hidden = vec![activation; widths.len().saturating_sub(2)];
        let spec = MlpSpec {
            widths,
            hidden,
            output,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config("an MLP needs input and output widths".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config(format!("zero width in {:?}", self.widths)));
        }
        if self.hidden.len() != self.widths.len() - 2 {
            return Err(Error::Config(format!(
                "{} hidden activations for {} hidden layers",
                self.hidden.len(),
                self.widths.len() - 2
            )));
        }
        if let OutputTransform::TanhScaled(bound) = self.output {
            if !(bound > 0.0 && bound.is_finite()) {
                return Err(Error::Config(format!("output bound {bound} must be positive")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Fresh parameters: weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init_params(&self, rng: &mut impl Rng) -> Result<ParamStore> {
        self.validate()?;
        let mut store = ParamStore::new();
        for (l, pair) in self.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let b: Vec<f64> = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            store.add(format!("layer{l}.weight"), Matrix::from_vec(fan_in, fan_out, w)?)?;
            store.add(format!("layer{l}.bias"), Matrix::row_vector(&b))?;
        }
        Ok(store)
    }

    /// Checks that `params` holds weight/bias blocks of the right shapes.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        if params.len() != 2 * self.n_layers() {
            return Err(Error::Config(format!(
                "expected {} parameter blocks, found {}",
                2 * self.n_layers(),
                params.len()
            )));
        }
        for (l, pair) in self.widths.windows(2).enumerate() {
            let w = params.value(ParamId(2 * l));
            let b = params.value(ParamId(2 * l + 1));
            if w.shape() != (pair[0], pair[1]) || b.shape() != (1, pair[1]) {
                return Err(Error::Config(format!(
                    "layer {l}: weight {:?} / bias {:?} do not match widths {:?}",
                    w.shape(),
                    b.shape(),
                    pair
                )));
            }
        }
        Ok(())
    }

    /// Batch forward pass without recording. `x` is `batch x input_dim`.
    pub fn forward(&self, params: &ParamStore, x: &Matrix) -> Result<Matrix> {
        self.check_params(params)?;
        if x.cols() != self.input_dim() {
            return Err(Error::Config(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(self.forward_unchecked(params, x))
    }

    pub(crate) fn forward_unchecked(&self, params: &ParamStore, x: &Matrix) -> Matrix {
        let mut h = x.clone();
        for l in 0..self.n_layers() {
            let mut z = h.matmul(params.value(ParamId(2 * l))).expect("checked shapes");
            let bias = params.value(ParamId(2 * l + 1));
            for i in 0..z.rows() {
                for (o, b) in z.row_mut(i).iter_mut().zip(bias.as_slice()) {
                    *o += b;
                }
            }
            h = match self.hidden.get(l) {
                Some(act) => z.map(|v| act.apply(v)),
                None => z,
            };
        }
        match self.output {
            OutputTransform::Identity => h,
            OutputTransform::TanhScaled(bound) => h.map(f64::tanh).map(|v| bound * v),
        }
    }

    /// Recorded forward pass; `vars` come from binding `params` on `tape`.
    pub fn forward_taped(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        assert_eq!(vars.len(), 2 * self.n_layers(), "parameter binding does not match spec");
        let mut h = x;
        for l in 0..self.n_layers() {
            let z = tape.matmul(h, vars[2 * l]);
            let z = tape.add_row(z, vars[2 * l + 1]);
            h = match self.hidden.get(l) {
                Some(act) => act.record(tape, z),
                None => z,
            };
        }
        match self.output {
            OutputTransform::Identity => h,
            OutputTransform::TanhScaled(bound) => {
                let t = tape.tanh(h);
                tape.scale(t, bound)
            }
        }
    }
}

/// Single-input convenience wrapper around [`MlpSpec::forward`].
pub fn mlp_forward(spec: &MlpSpec, params: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
    Ok(spec.forward(params, &Matrix::row_vector(x))?.into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_params(spec: &MlpSpec) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = spec.init_params(&mut rng).unwrap();
        for id in p.ids().collect::<Vec<_>>() {
            p.value_mut(id).fill(0.0);
        }
        p
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = MlpSpec::new(vec![3, 8, 8, 2], Activation::Elu, OutputTransform::Identity).unwrap();
        let p = zero_params(&spec);
        assert_eq!(mlp_forward(&spec, &p, &[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer_returns_input() {
        let spec = MlpSpec::new(vec![3, 3], Activation::Elu, OutputTransform::Identity).unwrap();
        let mut p = zero_params(&spec);
        *p.value_mut(ParamId(0)) = Matrix::identity(3);
        let x = [0.3, -1.7, 2.5];
        assert_eq!(mlp_forward(&spec, &p, &x).unwrap(), x.to_vec());
    }

    #[test]
    fn one_two_one_elu_network_matches_hand_evaluation() {
        let spec = MlpSpec::new(vec![1, 2, 1], Activation::Elu, OutputTransform::Identity).unwrap();
        let mut p = zero_params(&spec);
        *p.value_mut(ParamId(0)) = Matrix::row_vector(&[0.5, -0.3]);
        *p.value_mut(ParamId(1)) = Matrix::row_vector(&[0.1, 0.2]);
        *p.value_mut(ParamId(2)) = Matrix::column_vector(&[0.7, -1.1]);
        *p.value_mut(ParamId(3)) = Matrix::row_vector(&[0.05]);
        let x = 1.5;
        // hidden pre-activations: 0.5*1.5+0.1 = 0.85 (positive), -0.3*1.5+0.2 = -0.25 (negative)
        let h1 = 0.85;
        let h2 = (-0.25f64).exp() - 1.0;
        let want = 0.7 * h1 - 1.1 * h2 + 0.05;
        let got = mlp_forward(&spec, &p, &[x]).unwrap()[0];
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn shape_mismatch_is_a_configuration_error() {
        let spec = MlpSpec::new(vec![2, 4, 1], Activation::Tanh, OutputTransform::Identity).unwrap();
        let p = zero_params(&spec);
        assert!(matches!(mlp_forward(&spec, &p, &[1.0]), Err(Error::Config(_))));
        let other = MlpSpec::new(vec![2, 5, 1], Activation::Tanh, OutputTransform::Identity).unwrap();
        assert!(matches!(other.forward(&p, &Matrix::zeros(1, 2)), Err(Error::Config(_))));
    }

    #[test]
    fn tanh_scaled_output_is_bounded() {
        let spec =
            MlpSpec::new(vec![1, 4, 1], Activation::Relu, OutputTransform::TanhScaled(2.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = spec.init_params(&mut rng).unwrap();
        p.value_mut(ParamId(2)).scale_assign(1e3);
        for x in [-100.0, -1.0, 0.0, 1.0, 100.0] {
            let y = mlp_forward(&spec, &p, &[x]).unwrap()[0];
            assert!(y.abs() <= 2.0);
        }
    }

    #[test]
    fn plain_and_recorded_passes_are_bit_identical() {
        let spec = MlpSpec::new(vec![3, 16, 16, 2], Activation::Elu, OutputTransform::TanhScaled(1.5))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = spec.init_params(&mut rng).unwrap();
        let x = Matrix::from_vec(2, 3, vec![0.1, -0.4, 2.0, 1.0, 0.0, -3.0]).unwrap();
        let plain = spec.forward(&p, &x).unwrap();
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let xv = tape.constant(x);
        let y = spec.forward_taped(&mut tape, &vars, xv);
        assert_eq!(tape.value(y), &plain);
    }
}
