//! Runge-Kutta integration recorded on a [`Tape`], so gradients of any
//! loss on the states flow back to the initial state and every parameter
//! the vector field reads.

use super::tableau::{Method, Tableau};
use crate::error::{Error, Result};
use crate::math::{RowScalar, Tape, Var};

/// A batched vector field evaluated on the tape. `s` holds one state per
/// row and `t` gives the time of each row.
pub trait TapedField {
    fn eval(&self, tape: &mut Tape, t: &RowScalar, s: Var) -> Result<Var>;
}

impl<F: Fn(&mut Tape, &RowScalar, Var) -> Result<Var>> TapedField for F {
    fn eval(&self, tape: &mut Tape, t: &RowScalar, s: Var) -> Result<Var> {
        self(tape, t, s)
    }
}

fn stage_time(t: &RowScalar, c: f64, h: &RowScalar, rows: usize) -> RowScalar {
    match (t, h) {
        (RowScalar::Uniform(t), RowScalar::Uniform(h)) => RowScalar::Uniform(t + c * h),
        _ => RowScalar::PerRow((0..rows).map(|r| t.at(r) + c * h.at(r)).collect()),
    }
}

/// One recorded explicit step of `tab` with per-row times and step sizes.
pub fn taped_step(
    tab: &Tableau,
    field: &(impl TapedField + ?Sized),
    tape: &mut Tape,
    t: &RowScalar,
    s: Var,
    h: &RowScalar,
) -> Result<Var> {
    let rows = tape.value(s).rows();
    let mut k: Vec<Var> = Vec::with_capacity(tab.stages());
    for i in 0..tab.stages() {
        let ti = stage_time(t, tab.c[i], h, rows);
        let stage = if i == 0 {
            s
        } else {
            let terms: Vec<(Var, f64)> = k.iter().zip(tab.a[i]).map(|(v, c)| (*v, *c)).collect();
            tape.rk_combine(s, &terms, h.clone())
        };
        let ki = field.eval(tape, &ti, stage)?;
        if tape.value(ki).shape() != tape.value(s).shape() {
            return Err(Error::Shape(format!(
                "vector field returned {:?} for state {:?}",
                tape.value(ki).shape(),
                tape.value(s).shape()
            )));
        }
        if !tape.value(ki).is_finite() {
            return Err(Error::Instability {
                t: ti.at(0),
                what: "non-finite vector field output".into(),
            });
        }
        k.push(ki);
    }
    let terms: Vec<(Var, f64)> = k.iter().zip(tab.b).map(|(v, c)| (*v, *c)).collect();
    Ok(tape.rk_combine(s, &terms, h.clone()))
}

/// RK4 from `s0` at `grid[0]` with one step per grid interval, returning the
/// recorded state at every grid node (including the initial one).
pub fn integrate_differentiable(
    field: &(impl TapedField + ?Sized),
    tape: &mut Tape,
    s0: Var,
    grid: &[f64],
) -> Result<Vec<Var>> {
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Usage("grid must be non-empty and strictly increasing".into()));
    }
    let tab = Method::Rk4.tableau();
    let mut states = vec![s0];
    let mut s = s0;
    for w in grid.windows(2) {
        s = taped_step(
            tab,
            field,
            tape,
            &RowScalar::Uniform(w[0]),
            s,
            &RowScalar::Uniform(w[1] - w[0]),
        )?;
        states.push(s);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Matrix;
    use crate::ode::{field_fn, integrate, SolverConfig};

    #[test]
    fn single_rk4_step_of_decay() {
        let mut tape = Tape::new();
        let s0 = tape.leaf(Matrix::scalar(1.0));
        let field = |tape: &mut Tape, _: &RowScalar, s: Var| Ok(tape.scale(s, -1.0));
        let states = integrate_differentiable(&field, &mut tape, s0, &[0.0, 0.1]).unwrap();
        let v = tape.value(states[1]).item();
        // stages: -1, -0.95, -0.9525, -0.90475
        let factor = 1.0 - 0.1 * (1.0 + 2.0 * 0.95 + 2.0 * 0.9525 + 0.90475) / 6.0;
        assert!((v - 0.9048375).abs() < 1e-15, "{v}");
        assert_eq!(v, factor);
        let grads = tape.backward(states[1]).unwrap();
        assert!((grads.get(s0).unwrap().item() - factor).abs() < 1e-15);
    }

    #[test]
    fn matches_plain_solver_bit_for_bit() {
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
        let plain_field = field_fn(2, |t, s, ds| {
            ds[0] = s[1];
            ds[1] = -(s[0].sin()) - 0.1 * s[1] + t.cos();
        });
        let plain = integrate(&plain_field, &[0.3, -0.2], &grid, &SolverConfig::fixed(Method::Rk4, 1)).unwrap();

        let taped_field = |tape: &mut Tape, t: &RowScalar, s: Var| {
            let v = tape.value(s);
            let (x, y) = (v[(0, 0)], v[(0, 1)]);
            let out = Matrix::row_vector(&[y, -(x.sin()) - 0.1 * y + t.at(0).cos()]);
            Ok(tape.constant(out))
        };
        let mut tape = Tape::new();
        let s0 = tape.constant(Matrix::row_vector(&[0.3, -0.2]));
        let states = integrate_differentiable(&taped_field, &mut tape, s0, &grid).unwrap();
        for (p, v) in plain.states.iter().zip(&states) {
            assert_eq!(p.as_slice(), tape.value(*v).as_slice());
        }
    }

    #[test]
    fn per_row_steps_match_individual_steps() {
        let tab = Method::Rk4.tableau();
        let field = |tape: &mut Tape, _: &RowScalar, s: Var| {
            let sq = tape.square(s);
            Ok(tape.scale(sq, -0.5))
        };
        let mut tape = Tape::new();
        let s = tape.constant(Matrix::column_vector(&[1.0, 2.0]));
        let t = RowScalar::PerRow(vec![0.0, 1.0]);
        let h = RowScalar::PerRow(vec![0.1, 0.3]);
        let both = taped_step(tab, &field, &mut tape, &t, s, &h).unwrap();
        let both = tape.value(both).clone();
        for (row, (x, hh)) in [(1.0, 0.1), (2.0, 0.3)].into_iter().enumerate() {
            let si = tape.constant(Matrix::scalar(x));
            let one = taped_step(tab, &field, &mut tape, &RowScalar::Uniform(0.0), si, &RowScalar::Uniform(hh)).unwrap();
            assert_eq!(tape.value(one).item(), both[(row, 0)]);
        }
    }
}
