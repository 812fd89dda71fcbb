#![allow(dead_code)]

use odectrl::math::{Matrix, ParamStore};

/// Central finite differences of `f` with respect to every scalar in
/// `params`, one block per entry, same layout as the store.
pub fn finite_difference_grads(
    params: &ParamStore,
    step: f64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> Vec<Matrix> {
    let mut work = params.clone();
    let mut out = Vec::new();
    for id in params.ids().collect::<Vec<_>>() {
        let (r, c) = params.value(id).shape();
        let mut g = Matrix::zeros(r, c);
        for k in 0..r * c {
            let orig = params.value(id).as_slice()[k];
            work.value_mut(id).as_mut_slice()[k] = orig + step;
            let plus = f(&work);
            work.value_mut(id).as_mut_slice()[k] = orig - step;
            let minus = f(&work);
            work.value_mut(id).as_mut_slice()[k] = orig;
            g.as_mut_slice()[k] = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

/// `max |a - b| / max |b|` over all blocks.
pub fn max_relative_error(analytic: &[Matrix], numeric: &[Matrix]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.shape(), n.shape());
        for (x, y) in a.as_slice().iter().zip(n.as_slice()) {
            diff = diff.max((x - y).abs());
            scale = scale.max(y.abs());
        }
    }
    diff / scale.max(1e-300)
}

pub fn store_grads(params: &ParamStore) -> Vec<Matrix> {
    params.ids().map(|id| params.grad(id).clone()).collect()
}
