mod common;

use common::{finite_difference_grads, max_relative_error, store_grads};
use odectrl::math::{Activation, Matrix, MlpSpec, OutputTransform, ParamStore, RowScalar, Tape};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn random_three_layer_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let spec = MlpSpec::new(vec![4, 10, 10, 10, 3], Activation::Elu, OutputTransform::Identity).unwrap();
    let mut params = spec.init_params(&mut rng).unwrap();
    let x = random_matrix(&mut rng, 5, 4);

    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let y = spec.forward_taped(&mut tape, &vars, xv);
    let loss = tape.sum(y);
    let grads = tape.backward(loss).unwrap();
    params.accumulate(&grads, &vars);

    let numeric = finite_difference_grads(&params, 1e-5, |p| spec.forward(p, &x).unwrap().sum());
    let err = max_relative_error(&store_grads(&params), &numeric);
    assert!(err < 1e-6, "relative error {err}");
}

/// Exercises every recorded operation in one scalar expression.
fn composite(tape: &mut Tape, vars: &[odectrl::math::Var]) -> odectrl::math::Var {
    let (a, b, row, col) = (vars[0], vars[1], vars[2], vars[3]);
    let ab = tape.matmul(a, b); // 3x3
    let t = tape.tanh(ab);
    let e = tape.elu(ab);
    let s = tape.sub(t, e);
    let m = tape.mul(s, ab);
    let r = tape.add_row(m, row);
    let mr = tape.mul_row(r, row);
    let mc = tape.mul_col(mr, col);
    let sq = tape.square(mc);
    let sc = tape.scale(sq, 0.3);
    let off = tape.offset(sc, -0.2);
    let ex = tape.exp(off);
    let left = tape.slice_cols(ex, 0, 1);
    let right = tape.slice_cols(ex, 1, 3);
    let cat = tape.concat_cols(&[right, left]);
    let lc = tape.lin_comb(&[(cat, 0.7), (ex, -1.3)]);
    let rk = tape.rk_combine(lc, &[(cat, 0.5), (mc, 2.0)], RowScalar::PerRow(vec![0.1, 0.2, 0.3]));
    let rs = tape.row_sum(rk);
    let add = tape.add(rs, col);
    let rl = tape.relu(add);
    tape.sum(rl)
}

fn composite_store(seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    p.add("a", random_matrix(&mut rng, 3, 2)).unwrap();
    p.add("b", random_matrix(&mut rng, 2, 3)).unwrap();
    p.add("row", random_matrix(&mut rng, 1, 3)).unwrap();
    // keep the relu argument away from its kink so differences are clean
    p.add("col", random_matrix(&mut rng, 3, 1).map(|v| v.abs() + 2.0)).unwrap();
    p
}

fn composite_value(p: &ParamStore) -> f64 {
    let mut tape = Tape::new();
    let vars = p.bind_frozen(&mut tape);
    let out = composite(&mut tape, &vars);
    tape.value(out).item()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_operation_matches_finite_differences(seed in 0u64..10_000) {
        let mut p = composite_store(seed);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let out = composite(&mut tape, &vars);
        let grads = tape.backward(out).unwrap();
        p.accumulate(&grads, &vars);
        let numeric = finite_difference_grads(&p, 1e-5, composite_value);
        let err = max_relative_error(&store_grads(&p), &numeric);
        prop_assert!(err < 1e-6, "relative error {}", err);
    }

    #[test]
    fn forward_is_deterministic(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = MlpSpec::new(vec![3, 8, 2], Activation::Tanh, OutputTransform::Identity).unwrap();
        let p = spec.init_params(&mut rng).unwrap();
        let x = random_matrix(&mut rng, 4, 3);
        prop_assert_eq!(spec.forward(&p, &x).unwrap(), spec.forward(&p, &x).unwrap());
    }
}

#[test]
fn gradient_flows_only_into_participating_blocks() {
    let mut p = ParamStore::new();
    p.add("used", Matrix::scalar(1.5)).unwrap();
    p.add("unused", Matrix::scalar(-2.0)).unwrap();
    let mut tape = Tape::new();
    let vars = p.bind(&mut tape);
    let y = tape.square(vars[0]);
    let grads = tape.backward(y).unwrap();
    p.accumulate(&grads, &vars);
    assert_eq!(p.grad(odectrl::math::ParamId(0)).item(), 3.0);
    assert_eq!(p.grad(odectrl::math::ParamId(1)).item(), 0.0);
}
