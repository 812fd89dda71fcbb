//! Matrix-valued reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s together with
//! the computed value. [`Tape::backward`] replays the record in reverse and
//! returns the gradient of a scalar node with respect to every node that
//! requires one. Leaves created with [`Tape::leaf`] require gradients;
//! [`Tape::constant`] leaves never do, and neither does anything computed
//! solely from constants.
//!
//! Shape mismatches inside a recorded expression are programming errors and
//! panic. Callers that accept external shapes validate them up front.

use std::sync::atomic::{AtomicU64, Ordering};

use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    tape: u64,
}

/// A scalar that is either shared by every row or given per row (step sizes, times).
#[derive(Clone, Debug, PartialEq)]
pub enum RowScalar {
    Uniform(f64),
    PerRow(Vec<f64>),
}

impl RowScalar {
    #[inline]
    pub fn at(&self, row: usize) -> f64 {
        match self {
            RowScalar::Uniform(h) => *h,
            RowScalar::PerRow(hs) => hs[row],
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Elu(usize),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Square(usize),
    Sum(usize),
    RowSum(usize),
    SliceCols { src: usize, start: usize },
    ConcatCols(Vec<usize>),
    LinComb(Vec<(usize, f64)>),
    RkCombine {
        base: usize,
        terms: Vec<(usize, f64)>,
        step: RowScalar,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient with respect to `var`, or `None` when the loss does not
    /// depend on it.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        assert_eq!(var.tape, self.tape, "variable from a different tape");
        self.grads.get(var.index).and_then(Option::as_ref)
    }
}

#[inline]
pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub(crate) fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `out[i, :] = base[i, :] + h_i * sum_j c_j * k_j[i, :]`.
///
/// Shared by the plain and the recorded Runge-Kutta paths so both produce
/// bit-identical states.
pub fn rk_combine_into(
    base: &[f64],
    terms: &[(&[f64], f64)],
    step: &RowScalar,
    cols: usize,
    out: &mut [f64],
) {
    for (idx, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, c) in terms {
            acc += c * k[idx];
        }
        *o = base[idx] + step.at(idx / cols) * acc;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node. Existing `Var`s become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.id = NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed);
    }

    pub fn value(&self, var: Var) -> &Matrix {
        self.check(var);
        &self.nodes[var.index].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.check(var);
        self.nodes[var.index].requires_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copies the current value of `var` into a fresh constant.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.value(var).clone();
        self.constant(value)
    }

    fn check(&self, var: Var) {
        assert!(
            var.tape == self.id && var.index < self.nodes.len(),
            "variable does not belong to this tape"
        );
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            index: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.index].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.check(a);
        self.check(b);
        let value = self.nodes[a.index]
            .value
            .matmul(&self.nodes[b.index].value)
            .expect("matmul shape");
        let rg = self.rg(&[a, b]);
        self.push(value, Op::MatMul(a.index, b.index), rg)
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Matrix {
        self.check(a);
        self.check(b);
        let (x, y) = (&self.nodes[a.index].value, &self.nodes[b.index].value);
        assert_eq!(x.shape(), y.shape(), "{name} shape");
        x.zip_map(y, f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, "add", |x, y| x + y);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Add(a.index, b.index), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, "sub", |x, y| x - y);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Sub(a.index, b.index), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.binary(a, b, "mul", |x, y| x * y);
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Mul(a.index, b.index), rg)
    }

    /// `x + row` with `row` (1 x c) broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        self.check(x);
        self.check(row);
        let (xv, rv) = (&self.nodes[x.index].value, &self.nodes[row.index].value);
        assert_eq!((1, xv.cols()), rv.shape(), "add_row shape");
        let mut value = xv.clone();
        for i in 0..value.rows() {
            for (o, r) in value.row_mut(i).iter_mut().zip(rv.as_slice()) {
                *o += r;
            }
        }
        let rg = self.rg(&[x, row]);
        self.push(value, Op::AddRow(x.index, row.index), rg)
    }

    /// `x * row` elementwise with `row` (1 x c) broadcast over rows.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        self.check(x);
        self.check(row);
        let (xv, rv) = (&self.nodes[x.index].value, &self.nodes[row.index].value);
        assert_eq!((1, xv.cols()), rv.shape(), "mul_row shape");
        let mut value = xv.clone();
        for i in 0..value.rows() {
            for (o, r) in value.row_mut(i).iter_mut().zip(rv.as_slice()) {
                *o *= r;
            }
        }
        let rg = self.rg(&[x, row]);
        self.push(value, Op::MulRow(x.index, row.index), rg)
    }

    /// `x * col` elementwise with `col` (r x 1) broadcast over columns.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Var {
        self.check(x);
        self.check(col);
        let (xv, cv) = (&self.nodes[x.index].value, &self.nodes[col.index].value);
        assert_eq!((xv.rows(), 1), cv.shape(), "mul_col shape");
        let mut value = xv.clone();
        for i in 0..value.rows() {
            let c = cv.as_slice()[i];
            for o in value.row_mut(i) {
                *o *= c;
            }
        }
        let rg = self.rg(&[x, col]);
        self.push(value, Op::MulCol(x.index, col.index), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| c * v);
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x.index, c), rg)
    }

    /// `x + c` for a constant scalar `c`.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v + c);
        let rg = self.rg(&[x]);
        self.push(value, Op::Offset(x.index), rg)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(elu);
        let rg = self.rg(&[x]);
        self.push(value, Op::Elu(x.index), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(relu);
        let rg = self.rg(&[x]);
        self.push(value, Op::Relu(x.index), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        let rg = self.rg(&[x]);
        self.push(value, Op::Tanh(x.index), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        let rg = self.rg(&[x]);
        self.push(value, Op::Exp(x.index), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        let rg = self.rg(&[x]);
        self.push(value, Op::Square(x.index), rg)
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum(x.index), rg)
    }

    /// Sum across columns: r x c to r x 1.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let sums: Vec<f64> = (0..xv.rows()).map(|i| xv.row(i).iter().sum()).collect();
        let value = Matrix::column_vector(&sums);
        let rg = self.rg(&[x]);
        self.push(value, Op::RowSum(x.index), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xv = self.value(x);
        assert!(start <= end && end <= xv.cols(), "slice_cols range");
        let value = xv.slice_cols(start, end);
        let rg = self.rg(&[x]);
        self.push(
            value,
            Op::SliceCols {
                src: x.index,
                start,
            },
            rg,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        for p in parts {
            self.check(*p);
        }
        let mats: Vec<&Matrix> = parts.iter().map(|p| &self.nodes[p.index].value).collect();
        let value = Matrix::concat_cols(&mats).expect("concat_cols shape");
        let rg = self.rg(parts);
        self.push(
            value,
            Op::ConcatCols(parts.iter().map(|p| p.index).collect()),
            rg,
        )
    }

    /// `sum_j c_j x_j` over equally shaped nodes.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty(), "lin_comb needs at least one term");
        for (v, _) in terms {
            self.check(*v);
        }
        let shape = self.nodes[terms[0].0.index].value.shape();
        let mut value = Matrix::zeros(shape.0, shape.1);
        for (idx, o) in value.as_mut_slice().iter_mut().enumerate() {
            let mut acc = 0.0;
            for (v, c) in terms {
                acc += c * self.nodes[v.index].value.as_slice()[idx];
            }
            *o = acc;
        }
        for (v, _) in terms {
            assert_eq!(self.nodes[v.index].value.shape(), shape, "lin_comb shape");
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.rg(&vars);
        self.push(
            value,
            Op::LinComb(terms.iter().map(|(v, c)| (v.index, *c)).collect()),
            rg,
        )
    }

    /// Runge-Kutta stage combination `base + h * sum_j c_j k_j`, with the
    /// step `h` either uniform or given per row.
    pub fn rk_combine(&mut self, base: Var, terms: &[(Var, f64)], step: RowScalar) -> Var {
        self.check(base);
        let bv = &self.nodes[base.index].value;
        if let RowScalar::PerRow(hs) = &step {
            assert_eq!(hs.len(), bv.rows(), "rk_combine per-row step length");
        }
        for (v, _) in terms {
            self.check(*v);
            assert_eq!(self.nodes[v.index].value.shape(), bv.shape(), "rk_combine shape");
        }
        let slices: Vec<(&[f64], f64)> = terms
            .iter()
            .map(|(v, c)| (self.nodes[v.index].value.as_slice(), *c))
            .collect();
        let mut value = Matrix::zeros(bv.rows(), bv.cols());
        rk_combine_into(bv.as_slice(), &slices, &step, bv.cols(), value.as_mut_slice());
        let mut vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        vars.push(base);
        let rg = self.rg(&vars);
        self.push(
            value,
            Op::RkCombine {
                base: base.index,
                terms: terms.iter().map(|(v, c)| (v.index, *c)).collect(),
                step,
            },
            rg,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.tape != self.id || loss.index >= self.nodes.len() {
            return Err(Error::Usage("loss is not recorded on this tape".into()));
        }
        if self.nodes[loss.index].value.shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "loss must be a scalar, got shape {:?}",
                self.nodes[loss.index].value.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.index].requires_grad {
            return Ok(Gradients {
                tape: self.id,
                grads,
            });
        }
        grads[loss.index] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |i: usize| &self.nodes[i].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    let (r, c) = val(*a).shape();
                    let mut da = Matrix::zeros(r, c);
                    gemm(1.0, g, false, val(*b), true, 0.0, &mut da);
                    accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let (r, c) = val(*b).shape();
                    let mut db = Matrix::zeros(r, c);
                    gemm(1.0, val(*a), true, g, false, 0.0, &mut db);
                    accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.zip_map(val(*b), |x, y| x * y));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::AddRow(x, row) => {
                if self.wants(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if self.wants(*row) {
                    accumulate(grads, *row, column_sums(g));
                }
            }
            Op::MulRow(x, row) => {
                let rv = val(*row);
                if self.wants(*x) {
                    let mut dx = g.clone();
                    for i in 0..dx.rows() {
                        for (o, r) in dx.row_mut(i).iter_mut().zip(rv.as_slice()) {
                            *o *= r;
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if self.wants(*row) {
                    accumulate(grads, *row, column_sums(&g.zip_map(val(*x), |a, b| a * b)));
                }
            }
            Op::MulCol(x, col) => {
                let cv = val(*col);
                if self.wants(*x) {
                    let mut dx = g.clone();
                    for i in 0..dx.rows() {
                        let c = cv.as_slice()[i];
                        for o in dx.row_mut(i) {
                            *o *= c;
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if self.wants(*col) {
                    let xv = val(*x);
                    let sums: Vec<f64> = (0..g.rows())
                        .map(|i| g.row(i).iter().zip(xv.row(i)).map(|(a, b)| a * b).sum())
                        .collect();
                    accumulate(grads, *col, Matrix::column_vector(&sums));
                }
            }
            Op::Scale(x, c) => {
                if self.wants(*x) {
                    accumulate(grads, *x, g.map(|v| c * v));
                }
            }
            Op::Offset(x) => {
                if self.wants(*x) {
                    accumulate(grads, *x, g.clone());
                }
            }
            Op::Elu(x) => {
                if self.wants(*x) {
                    // d/dx elu = 1 for x > 0, else exp(x) = elu(x) + 1
                    let d = g.zip_map(&node.value, |gv, y| if y > 0.0 { gv } else { gv * (y + 1.0) });
                    accumulate(grads, *x, d);
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let d = g.zip_map(&node.value, |gv, y| if y > 0.0 { gv } else { 0.0 });
                    accumulate(grads, *x, d);
                }
            }
            Op::Tanh(x) => {
                if self.wants(*x) {
                    let d = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y));
                    accumulate(grads, *x, d);
                }
            }
            Op::Exp(x) => {
                if self.wants(*x) {
                    accumulate(grads, *x, g.zip_map(&node.value, |gv, y| gv * y));
                }
            }
            Op::Square(x) => {
                if self.wants(*x) {
                    accumulate(grads, *x, g.zip_map(val(*x), |gv, v| 2.0 * gv * v));
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    let (r, c) = val(*x).shape();
                    accumulate(grads, *x, Matrix::filled(r, c, g.item()));
                }
            }
            Op::RowSum(x) => {
                if self.wants(*x) {
                    let (r, c) = val(*x).shape();
                    let mut d = Matrix::zeros(r, c);
                    for i in 0..r {
                        d.row_mut(i).fill(g.as_slice()[i]);
                    }
                    accumulate(grads, *x, d);
                }
            }
            Op::SliceCols { src, start } => {
                if self.wants(*src) {
                    let (r, c) = val(*src).shape();
                    let mut d = Matrix::zeros(r, c);
                    for i in 0..r {
                        d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(grads, *src, d);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let width = val(p).cols();
                    if self.wants(p) {
                        accumulate(grads, p, g.slice_cols(offset, offset + width));
                    }
                    offset += width;
                }
            }
            Op::LinComb(terms) => {
                for &(v, c) in terms {
                    if self.wants(v) {
                        accumulate(grads, v, g.map(|gv| c * gv));
                    }
                }
            }
            Op::RkCombine { base, terms, step } => {
                if self.wants(*base) {
                    accumulate(grads, *base, g.clone());
                }
                let cols = g.cols();
                for &(v, c) in terms {
                    if self.wants(v) {
                        let mut d = g.clone();
                        for (idx, o) in d.as_mut_slice().iter_mut().enumerate() {
                            *o *= c * step.at(idx / cols);
                        }
                        accumulate(grads, v, d);
                    }
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], i: usize, d: Matrix) {
    match &mut grads[i] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for i in 0..m.rows() {
        for (o, v) in out.as_mut_slice().iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    out
}
