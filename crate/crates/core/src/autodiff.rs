//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves are either
//! parameters (gradients wanted) or constants. [`Tape::backward`] walks the
//! tape in reverse and accumulates adjoints for every node that depends on a
//! parameter.
//!
//! The operation set is deliberately small: exactly what the forecaster's
//! forward pass needs, each with a hand-written adjoint.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Matrix),
    Relu(Var),
    LeakyRelu(Var, f64),
    Transpose(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    GroupMax { input: Var, argmax: Vec<usize> },
    OuterSum(Var, Var),
    RowSum(Var),
    InvSqrt(Var),
    ScaleRows(Var, Var),
    ScaleCols(Var, Var),
    SoftmaxRows(Var),
    MeanAbs(Var),
    MeanSquare(Var),
    SumSquares(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of the given shape when `v` did not
    /// influence the differentiated output.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(rows, cols))
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Fails with a numeric error naming `stage` if `v` holds a non-finite value.
    pub fn check_finite(&self, v: Var, stage: &str) -> Result<()> {
        if self.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::numeric(stage))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// `a + 1·b` where `b` is a single row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut value = av.clone();
        for i in 0..value.rows() {
            for (x, y) in value.row_mut(i).iter_mut().zip(bv.as_slice()) {
                *x += y;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::AddRow(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// Elementwise product with a constant matrix (masks, fixed weights).
    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Result<Var> {
        check_same("mul_const", self.value(a), &c)?;
        let value = self.value(a).zip_map(&c, |x, y| x * y);
        let rg = self.rg(a);
        Ok(self.push(value, Op::MulConst(a, c), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(a);
        self.push(value, Op::LeakyRelu(a, slope), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hcat(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::ConcatCols(a, b), rg))
    }

    /// Output row `r` is input row `idx[r]`; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= av.rows()) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} of {} rows", av.rows()),
            ));
        }
        let value = av.select_rows(&idx);
        let rg = self.rg(a);
        Ok(self.push(value, Op::GatherRows(a, idx), rg))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(a).clone().reshaped(rows, cols)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Column-wise maximum over consecutive blocks of `group` rows: a
    /// `(K·group) × C` input yields `K × C`. Ties resolve to the earliest row.
    pub fn group_max_rows(&mut self, a: Var, group: usize) -> Result<Var> {
        let av = self.value(a);
        if group == 0 || av.rows() % group != 0 {
            return Err(Error::shape(
                "group_max_rows",
                format!("{} rows in groups of {group}", av.rows()),
            ));
        }
        let k = av.rows() / group;
        let c = av.cols();
        let mut value = Matrix::zeros(k, c);
        let mut argmax = vec![0usize; k * c];
        for g in 0..k {
            for j in 0..c {
                let mut best = g * group;
                for r in g * group + 1..(g + 1) * group {
                    if av[(r, j)] > av[(best, j)] {
                        best = r;
                    }
                }
                value[(g, j)] = av[(best, j)];
                argmax[g * c + j] = best;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::GroupMax { input: a, argmax }, rg))
    }

    /// `out[i][j] = p[i] + q[j]` for column vectors `p` (n×1) and `q` (m×1).
    pub fn outer_sum(&mut self, p: Var, q: Var) -> Result<Var> {
        let (pv, qv) = (self.value(p), self.value(q));
        if pv.cols() != 1 || qv.cols() != 1 {
            return Err(Error::shape(
                "outer_sum",
                format!("{:?} (+) {:?}", pv.shape(), qv.shape()),
            ));
        }
        let value = Matrix::from_fn(pv.rows(), qv.rows(), |i, j| {
            pv.as_slice()[i] + qv.as_slice()[j]
        });
        let rg = self.rg(p) || self.rg(q);
        Ok(self.push(value, Op::OuterSum(p, q), rg))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let sums: Vec<f64> = (0..av.rows()).map(|i| av.row(i).iter().sum()).collect();
        let value = Matrix::column(&sums);
        let rg = self.rg(a);
        self.push(value, Op::RowSum(a), rg)
    }

    /// `x^{-1/2}` for positive entries, `0` elsewhere.
    pub fn inv_sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x.sqrt().recip() } else { 0.0 });
        let rg = self.rg(a);
        self.push(value, Op::InvSqrt(a), rg)
    }

    /// `diag(v) · a` for a column vector `v`.
    pub fn scale_rows(&mut self, a: Var, v: Var) -> Result<Var> {
        let (av, vv) = (self.value(a), self.value(v));
        if vv.cols() != 1 || vv.rows() != av.rows() {
            return Err(Error::shape(
                "scale_rows",
                format!("{:?} by {:?}", av.shape(), vv.shape()),
            ));
        }
        let value = Matrix::from_fn(av.rows(), av.cols(), |i, j| av[(i, j)] * vv.as_slice()[i]);
        let rg = self.rg(a) || self.rg(v);
        Ok(self.push(value, Op::ScaleRows(a, v), rg))
    }

    /// `a · diag(v)` for a column vector `v`.
    pub fn scale_cols(&mut self, a: Var, v: Var) -> Result<Var> {
        let (av, vv) = (self.value(a), self.value(v));
        if vv.cols() != 1 || vv.rows() != av.cols() {
            return Err(Error::shape(
                "scale_cols",
                format!("{:?} by {:?}", av.shape(), vv.shape()),
            ));
        }
        let value = Matrix::from_fn(av.rows(), av.cols(), |i, j| av[(i, j)] * vv.as_slice()[j]);
        let rg = self.rg(a) || self.rg(v);
        Ok(self.push(value, Op::ScaleCols(a, v), rg))
    }

    /// Row-wise softmax. Entries where `mask` is zero get probability zero;
    /// a row with no admissible entry becomes a zero row.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Matrix>) -> Result<Var> {
        let av = self.value(a);
        if let Some(m) = mask {
            check_same("softmax_rows", av, m)?;
        }
        let mut value = Matrix::zeros(av.rows(), av.cols());
        for i in 0..av.rows() {
            let allowed = |j: usize| mask.is_none_or(|m| m[(i, j)] != 0.0);
            let max = (0..av.cols())
                .filter(|&j| allowed(j))
                .map(|j| av[(i, j)])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for j in 0..av.cols() {
                if allowed(j) {
                    let e = (av[(i, j)] - max).exp();
                    value[(i, j)] = e;
                    z += e;
                }
            }
            value.row_mut(i).iter_mut().for_each(|x| *x /= z);
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::SoftmaxRows(a), rg))
    }

    /// Mean of absolute values, as a 1×1 node.
    pub fn mean_abs(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let v = av.as_slice().iter().map(|x| x.abs()).sum::<f64>() / av.len() as f64;
        let rg = self.rg(a);
        self.push(Matrix::filled(1, 1, v), Op::MeanAbs(a), rg)
    }

    pub fn mean_square(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let v = av.sum_squares() / av.len() as f64;
        let rg = self.rg(a);
        self.push(Matrix::filled(1, 1, v), Op::MeanSquare(a), rg)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_squares();
        let rg = self.rg(a);
        self.push(Matrix::filled(1, 1, v), Op::SumSquares(a), rg)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        let n = output.0 + 1;
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        let (r, c) = self.shape(output);
        grads[output.0] = Some(Matrix::filled(r, c, 1.0));

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, delta: Matrix| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.matmul_t(self.value(*b)));
                }
                if self.rg(*b) {
                    acc(*b, self.value(*a).t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::AddRow(a, b) => {
                acc(*a, g.clone());
                if self.rg(*b) {
                    let mut row = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (s, x) in row.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *s += x;
                        }
                    }
                    acc(*b, row);
                }
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::MulConst(a, c) => acc(*a, g.zip_map(c, |x, y| x * y)),
            Op::Relu(a) => {
                let av = self.value(*a);
                acc(*a, g.zip_map(av, |x, y| if y > 0.0 { x } else { 0.0 }));
            }
            Op::LeakyRelu(a, slope) => {
                let av = self.value(*a);
                acc(*a, g.zip_map(av, |x, y| if y > 0.0 { x } else { slope * x }));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                if self.rg(*a) {
                    acc(*a, Matrix::from_fn(g.rows(), ca, |i, j| g[(i, j)]));
                }
                if self.rg(*b) {
                    acc(*b, Matrix::from_fn(g.rows(), cb, |i, j| g[(i, ca + j)]));
                }
            }
            Op::GatherRows(a, idx) => {
                let (rows, cols) = self.shape(*a);
                let mut out = Matrix::zeros(rows, cols);
                for (r, &src) in idx.iter().enumerate() {
                    for (o, x) in out.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                acc(*a, out);
            }
            Op::Reshape(a) => {
                let (rows, cols) = self.shape(*a);
                acc(*a, g.clone().reshaped(rows, cols).expect("reshape adjoint"));
            }
            Op::GroupMax { input, argmax } => {
                let (rows, cols) = self.shape(*input);
                let mut out = Matrix::zeros(rows, cols);
                for (flat, &src) in argmax.iter().enumerate() {
                    let j = flat % cols;
                    out[(src, j)] += g.as_slice()[flat];
                }
                acc(*input, out);
            }
            Op::OuterSum(p, q) => {
                let rows: Vec<f64> = (0..g.rows()).map(|i| g.row(i).iter().sum()).collect();
                let mut cols = vec![0.0; g.cols()];
                for i in 0..g.rows() {
                    for (s, x) in cols.iter_mut().zip(g.row(i)) {
                        *s += x;
                    }
                }
                acc(*p, Matrix::column(&rows));
                acc(*q, Matrix::column(&cols));
            }
            Op::RowSum(a) => {
                let (rows, cols) = self.shape(*a);
                acc(*a, Matrix::from_fn(rows, cols, |i, _| g.as_slice()[i]));
            }
            Op::InvSqrt(a) => {
                let av = self.value(*a);
                acc(
                    *a,
                    g.zip_map(av, |x, y| if y > 0.0 { -0.5 * x * y.powf(-1.5) } else { 0.0 }),
                );
            }
            Op::ScaleRows(a, v) => {
                let (av, vv) = (self.value(*a), self.value(*v));
                if self.rg(*a) {
                    acc(*a, Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * vv.as_slice()[i]));
                }
                if self.rg(*v) {
                    let d: Vec<f64> = (0..g.rows())
                        .map(|i| g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum())
                        .collect();
                    acc(*v, Matrix::column(&d));
                }
            }
            Op::ScaleCols(a, v) => {
                let (av, vv) = (self.value(*a), self.value(*v));
                if self.rg(*a) {
                    acc(*a, Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * vv.as_slice()[j]));
                }
                if self.rg(*v) {
                    let mut d = vec![0.0; g.cols()];
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            d[j] += g[(i, j)] * av[(i, j)];
                        }
                    }
                    acc(*v, Matrix::column(&d));
                }
            }
            Op::SoftmaxRows(a) => {
                let p = &node.value;
                let mut out = Matrix::zeros(p.rows(), p.cols());
                for i in 0..p.rows() {
                    let dot: f64 = p.row(i).iter().zip(g.row(i)).map(|(x, y)| x * y).sum();
                    for j in 0..p.cols() {
                        out[(i, j)] = p[(i, j)] * (g[(i, j)] - dot);
                    }
                }
                acc(*a, out);
            }
            Op::MeanAbs(a) => {
                let av = self.value(*a);
                let s = g.as_slice()[0] / av.len() as f64;
                acc(*a, av.map(|x| s * sign(x)));
            }
            Op::MeanSquare(a) => {
                let av = self.value(*a);
                let s = 2.0 * g.as_slice()[0] / av.len() as f64;
                acc(*a, av.map(|x| s * x));
            }
            Op::SumSquares(a) => {
                let s = 2.0 * g.as_slice()[0];
                acc(*a, self.value(*a).map(|x| s * x));
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of d(f)/d(x) where `f` builds a scalar from a
    /// single parameter leaf.
    fn check(x: Matrix, f: impl Fn(&mut Tape, Var) -> Var) {
        let mut tape = Tape::new();
        let xv = tape.param(x.clone());
        let out = f(&mut tape, xv);
        let grads = tape.backward(out);
        let analytic = grads.get_or_zeros(xv, x.rows(), x.cols());
        let h = 1e-6;
        for k in 0..x.len() {
            let eval = |delta: f64| {
                let mut xp = x.clone();
                xp.as_mut_slice()[k] += delta;
                let mut t = Tape::new();
                let v = t.param(xp);
                let o = f(&mut t, v);
                t.scalar(o)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.as_slice()[k];
            let err = (a - numeric).abs() / (1.0 + a.abs().max(numeric.abs()));
            assert!(err < 1e-6, "entry {k}: analytic {a} vs numeric {numeric}");
        }
    }

    #[test]
    fn matmul_and_transpose_adjoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random(3, 2, &mut rng);
        check(random(4, 3, &mut rng), |t, x| {
            let bc = t.constant(b.clone());
            let y = t.matmul(x, bc).unwrap();
            let yt = t.transpose(y);
            t.sum_squares(yt)
        });
    }

    #[test]
    fn normalisation_chain_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Matrix::from_fn(4, 4, |_, _| rng.random_range(0.1..1.0));
        check(x, |t, a| {
            let at = t.transpose(a);
            let s = t.add(a, at).unwrap();
            let d = t.row_sum(s);
            let inv = t.inv_sqrt(d);
            let l = t.scale_rows(s, inv).unwrap();
            let n = t.scale_cols(l, inv).unwrap();
            t.sum_squares(n)
        });
    }

    #[test]
    fn softmax_gather_groupmax_adjoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mask = Matrix::from_rows(&[[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]);
        check(random(3, 3, &mut rng), |t, x| {
            let p = t.softmax_rows(x, Some(&mask)).unwrap();
            let w = t.constant(Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0], [2.0, 1.0]]));
            let y = t.matmul(p, w).unwrap();
            t.sum_squares(y)
        });
        check(random(6, 2, &mut rng), |t, x| {
            let g = t.gather_rows(x, vec![0, 0, 5, 3]).unwrap();
            let m = t.group_max_rows(g, 2).unwrap();
            t.sum_squares(m)
        });
    }

    #[test]
    fn outer_sum_relu_concat_adjoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        check(random(5, 1, &mut rng), |t, x| {
            let q = t.scale(x, -0.7);
            let o = t.outer_sum(x, q).unwrap();
            let r = t.leaky_relu(o, 0.2);
            let c = t.concat_cols(r, o).unwrap();
            let bias = t.constant(Matrix::filled(1, 10, 0.3));
            let c = t.add_row(c, bias).unwrap();
            t.mean_square(c)
        });
    }

    #[test]
    fn softmax_rows_sum_to_one_and_masked_rows_vanish() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[[1.0, 2.0], [3.0, -1.0]]));
        let mask = Matrix::from_rows(&[[1.0, 1.0], [0.0, 0.0]]);
        let p = t.softmax_rows(x, Some(&mask)).unwrap();
        let p = t.value(p);
        assert!((p.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(p.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::filled(2, 2, 1.0));
        let p = t.param(Matrix::filled(2, 2, 2.0));
        let y = t.matmul(c, p).unwrap();
        let l = t.sum_squares(y);
        let g = t.backward(l);
        assert!(g.get(c).is_none());
        assert!(g.get(p).is_some());
    }
}
