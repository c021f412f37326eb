//! Reverse-mode differentiation over a recorded tape of matrix operations.
//!
//! A forward pass pushes one node per operation. Parameter leaves are
//! copied out of a [`ParamStore`] and remember their [`ParamId`], so
//! [`Tape::backward`] can add `d loss / d param` into the store's
//! accumulators. Nodes that depend only on constants carry no gradient.
//!
//! ```
//! use lragnn_core::numerics::{Matrix, ParamStore, Tape};
//!
//! let mut store = ParamStore::new();
//! let w = store.insert("w", Matrix::row_vector(vec![1.0, -2.0])).unwrap();
//! let mut tape = Tape::new();
//! let wv = tape.param(&store, w);
//! let sq = tape.mul(wv, wv).unwrap();
//! let loss = tape.sum_all(sq);
//! tape.backward(loss, &mut store).unwrap();
//! assert_eq!(store.grad(w).data(), &[2.0, -4.0]);
//! ```

use super::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `a (r x c) + row (1 x c)` broadcast down the rows.
    AddRow(Var, Var),
    /// `a (r x c) * col (r x 1)` broadcast across the columns.
    MulCol(Var, Var),
    /// `a * s` where `s` is 1 x 1.
    MulScalar(Var, Var),
    /// `scale * a + shift`.
    Affine(Var, f64),
    Transpose(Var),
    Relu(Var),
    Sigmoid(Var),
    Sqrt(Var),
    Ln(Var),
    Abs(Var),
    Powf(Var, f64),
    Clamp(Var, f64, f64),
    RowSoftmax(Var),
    /// Column sums, `1 x c`.
    SumRows(Var),
    /// Row sums, `r x 1`.
    SumCols(Var),
    SumAll(Var),
    ConcatCols(Var, Var),
    AddIdentity(Var),
    /// Picks `a[i][idx[i]]` into an `r x 1` column.
    Gather(Var, Vec<usize>),
    Huber(Var, f64),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.get(0, 0)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "div", |x, y| x / y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Div(a, b), ng))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (am, rm) = (self.value(a), self.value(row));
        if rm.rows() != 1 || rm.cols() != am.cols() {
            return Err(Error::dim("add_row", am.shape(), rm.shape()));
        }
        let mut value = am.clone();
        for r in 0..value.rows() {
            for (v, b) in value.row_mut(r).iter_mut().zip(rm.data()) {
                *v += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(value, Op::AddRow(a, row), ng))
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (am, cm) = (self.value(a), self.value(col));
        if cm.cols() != 1 || cm.rows() != am.rows() {
            return Err(Error::dim("mul_col", am.shape(), cm.shape()));
        }
        let mut value = am.clone();
        for r in 0..value.rows() {
            let s = cm.get(r, 0);
            value.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        let ng = self.ng(a) || self.ng(col);
        Ok(self.push(value, Op::MulCol(a, col), ng))
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let (am, sm) = (self.value(a), self.value(s));
        if sm.shape() != (1, 1) {
            return Err(Error::dim("mul_scalar", am.shape(), sm.shape()));
        }
        let value = am.scale(sm.get(0, 0));
        let ng = self.ng(a) || self.ng(s);
        Ok(self.push(value, Op::MulScalar(a, s), ng))
    }

    /// `scale * a + shift`, elementwise with constant coefficients.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(a).map(|v| scale * v + shift);
        let ng = self.ng(a);
        self.push(value, Op::Affine(a, scale), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 1.0)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let ng = self.ng(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&v| v < 0.0) {
            return Err(Error::Domain("sqrt of a negative entry".into()));
        }
        let value = self.value(a).map(f64::sqrt);
        let ng = self.ng(a);
        Ok(self.push(value, Op::Sqrt(a), ng))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain("log of a non-positive entry".into()));
        }
        let value = self.value(a).map(f64::ln);
        let ng = self.ng(a);
        Ok(self.push(value, Op::Ln(a), ng))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        let ng = self.ng(a);
        self.push(value, Op::Abs(a), ng)
    }

    pub fn powf(&mut self, a: Var, exponent: f64) -> Var {
        let value = self.value(a).map(|v| v.powf(exponent));
        let ng = self.ng(a);
        self.push(value, Op::Powf(a, exponent), ng)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|v| v.clamp(lo, hi));
        let ng = self.ng(a);
        self.push(value, Op::Clamp(a, lo, hi), ng)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let value = self.value(a).row_softmax();
        let ng = self.ng(a);
        self.push(value, Op::RowSoftmax(a), ng)
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut out = vec![0.0; m.cols()];
        for r in 0..m.rows() {
            for (o, v) in out.iter_mut().zip(m.row(r)) {
                *o += v;
            }
        }
        let ng = self.ng(a);
        self.push(Matrix::row_vector(out), Op::SumRows(a), ng)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let out = (0..m.rows()).map(|r| m.row(r).iter().sum()).collect();
        let ng = self.ng(a);
        self.push(Matrix::col_vector(out), Op::SumCols(a), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Column means as a `1 x c` row (mean over rows).
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.value(a).rows().max(1) as f64;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / n)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.rows() != bm.rows() {
            return Err(Error::dim("concat_cols", am.shape(), bm.shape()));
        }
        let cols = am.cols() + bm.cols();
        let mut data = Vec::with_capacity(am.rows() * cols);
        for r in 0..am.rows() {
            data.extend_from_slice(am.row(r));
            data.extend_from_slice(bm.row(r));
        }
        let value = Matrix::new(am.rows(), cols, data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::ConcatCols(a, b), ng))
    }

    pub fn add_identity(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.rows() != m.cols() {
            return Err(Error::dim("add_identity", m.shape(), m.shape()));
        }
        let mut value = m.clone();
        for i in 0..value.rows() {
            let v = value.get(i, i);
            value.set(i, i, v + 1.0);
        }
        let ng = self.ng(a);
        Ok(self.push(value, Op::AddIdentity(a), ng))
    }

    pub fn gather(&mut self, a: Var, indices: Vec<usize>) -> Result<Var> {
        let m = self.value(a);
        if indices.len() != m.rows() || indices.iter().any(|&i| i >= m.cols()) {
            return Err(Error::dim("gather", m.shape(), (indices.len(), 1)));
        }
        let out = indices.iter().enumerate().map(|(r, &c)| m.get(r, c)).collect();
        let ng = self.ng(a);
        Ok(self.push(Matrix::col_vector(out), Op::Gather(a, indices), ng))
    }

    pub fn huber(&mut self, a: Var, delta: f64) -> Var {
        let value = self.value(a).map(|x| {
            if x.abs() <= delta {
                0.5 * x * x
            } else {
                delta * (x.abs() - 0.5 * delta)
            }
        });
        let ng = self.ng(a);
        self.push(value, Op::Huber(a, delta), ng)
    }

    /// Propagates `d loss / d node` back through the tape and adds the
    /// parameter gradients into `store`. Accumulation is additive until
    /// [`ParamStore::zero_grad`].
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::State("backward called before a forward pass was recorded".into()));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => store.accumulate(*id, &g)?,
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        let ga = g.matmul(&self.value(*b).transpose())?;
                        acc(&mut grads, *a, ga)?;
                    }
                    if self.ng(*b) {
                        let gb = self.value(*a).transpose().matmul(&g)?;
                        acc(&mut grads, *b, gb)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.clone())?;
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, g)?;
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(*b) {
                        acc(&mut grads, *b, g.scale(-1.0))?;
                    }
                    if self.ng(*a) {
                        acc(&mut grads, *a, g)?;
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.hadamard(self.value(*b))?)?;
                    }
                    if self.ng(*b) {
                        acc(&mut grads, *b, g.hadamard(self.value(*a))?)?;
                    }
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.zip_map(bv, "div", |x, y| x / y)?)?;
                    }
                    if self.ng(*b) {
                        let mut gb = g.clone();
                        for ((o, x), y) in gb.data_mut().iter_mut().zip(av.data()).zip(bv.data()) {
                            *o = -*o * x / (y * y);
                        }
                        acc(&mut grads, *b, gb)?;
                    }
                }
                Op::AddRow(a, row) => {
                    if self.ng(*row) {
                        let mut gr = vec![0.0; g.cols()];
                        for r in 0..g.rows() {
                            for (o, v) in gr.iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                        acc(&mut grads, *row, Matrix::row_vector(gr))?;
                    }
                    if self.ng(*a) {
                        acc(&mut grads, *a, g)?;
                    }
                }
                Op::MulCol(a, col) => {
                    let (av, cv) = (self.value(*a), self.value(*col));
                    if self.ng(*col) {
                        let gc = (0..g.rows())
                            .map(|r| g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum())
                            .collect();
                        acc(&mut grads, *col, Matrix::col_vector(gc))?;
                    }
                    if self.ng(*a) {
                        let mut ga = g;
                        for r in 0..ga.rows() {
                            let s = cv.get(r, 0);
                            ga.row_mut(r).iter_mut().for_each(|v| *v *= s);
                        }
                        acc(&mut grads, *a, ga)?;
                    }
                }
                Op::MulScalar(a, s) => {
                    let sv = self.value(*s).get(0, 0);
                    if self.ng(*s) {
                        let gs = g.data().iter().zip(self.value(*a).data()).map(|(x, y)| x * y).sum();
                        acc(&mut grads, *s, Matrix::scalar(gs))?;
                    }
                    if self.ng(*a) {
                        acc(&mut grads, *a, g.scale(sv))?;
                    }
                }
                Op::Affine(a, scale) => acc(&mut grads, *a, g.scale(*scale))?,
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose())?,
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), "relu", |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    acc(&mut grads, *a, ga)?;
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, "sigmoid", |gv, y| gv * y * (1.0 - y))?;
                    acc(&mut grads, *a, ga)?;
                }
                Op::Sqrt(a) => {
                    let ga = g.zip_map(&node.value, "sqrt", |gv, y| gv / (2.0 * y))?;
                    acc(&mut grads, *a, ga)?;
                }
                Op::Ln(a) => {
                    let ga = g.zip_map(self.value(*a), "ln", |gv, x| gv / x)?;
                    acc(&mut grads, *a, ga)?;
                }
                Op::Abs(a) => {
                    let ga = g.zip_map(self.value(*a), "abs", |gv, x| {
                        if x > 0.0 {
                            gv
                        } else if x < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })?;
                    acc(&mut grads, *a, ga)?;
                }
                Op::Powf(a, e) => {
                    let e = *e;
                    let ga = g.zip_map(self.value(*a), "powf", |gv, x| gv * e * x.powf(e - 1.0))?;
                    acc(&mut grads, *a, ga)?;
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let ga = g.zip_map(self.value(*a), "clamp", |gv, x| {
                        if x >= lo && x <= hi {
                            gv
                        } else {
                            0.0
                        }
                    })?;
                    acc(&mut grads, *a, ga)?;
                }
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(x, p)| x * p).sum();
                        for (o, p) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                            *o = p * (*o - dot);
                        }
                    }
                    acc(&mut grads, *a, ga)?;
                }
                Op::SumRows(a) => {
                    let rows = self.value(*a).rows();
                    let mut ga = Matrix::zeros(rows, g.cols());
                    for r in 0..rows {
                        ga.row_mut(r).copy_from_slice(g.data());
                    }
                    acc(&mut grads, *a, ga)?;
                }
                Op::SumCols(a) => {
                    let cols = self.value(*a).cols();
                    let mut ga = Matrix::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        let v = g.get(r, 0);
                        ga.row_mut(r).iter_mut().for_each(|o| *o = v);
                    }
                    acc(&mut grads, *a, ga)?;
                }
                Op::SumAll(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, Matrix::filled(r, c, g.get(0, 0)))?;
                }
                Op::ConcatCols(a, b) => {
                    let ac = self.value(*a).cols();
                    let bc = self.value(*b).cols();
                    if self.ng(*a) {
                        let mut ga = Matrix::zeros(g.rows(), ac);
                        for r in 0..g.rows() {
                            ga.row_mut(r).copy_from_slice(&g.row(r)[..ac]);
                        }
                        acc(&mut grads, *a, ga)?;
                    }
                    if self.ng(*b) {
                        let mut gb = Matrix::zeros(g.rows(), bc);
                        for r in 0..g.rows() {
                            gb.row_mut(r).copy_from_slice(&g.row(r)[ac..]);
                        }
                        acc(&mut grads, *b, gb)?;
                    }
                }
                Op::AddIdentity(a) => acc(&mut grads, *a, g)?,
                Op::Gather(a, indices) => {
                    let (r, c) = self.value(*a).shape();
                    let mut ga = Matrix::zeros(r, c);
                    for (row, &col) in indices.iter().enumerate() {
                        ga.set(row, col, g.get(row, 0));
                    }
                    acc(&mut grads, *a, ga)?;
                }
                Op::Huber(a, delta) => {
                    let d = *delta;
                    let ga = g.zip_map(self.value(*a), "huber", |gv, x| gv * x.clamp(-d, d))?;
                    acc(&mut grads, *a, ga)?;
                }
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
