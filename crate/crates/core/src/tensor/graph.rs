//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node holding its value and the ids of its
//! inputs. [`Graph::backward`] walks the tape in reverse and accumulates
//! adjoints. The tape is generic over [`Scalar`], so the same model code runs
//! in plain `f64` for gradients and in [`Dual`](super::Dual) arithmetic for
//! exact Hessian-vector products.

use super::matrix::Matrix;
use super::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + row`, row broadcast over rows of `a`.
    AddRow(Var, Var),
    /// `a ⊙ col`, column broadcast over columns of `a`.
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Sum(Var),
    MeanRows(Var),
    RowSums(Var),
    SoftmaxRows(Var),
}

struct Node<S> {
    value: Matrix<S>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Matrix<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Adjoint of `v`, or `None` when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Matrix<S>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(1024),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<S>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Matrix<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Matrix<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_f64(&mut self, value: &Matrix<f64>) -> Var {
        self.constant(value.lift())
    }

    pub fn scalar_constant(&mut self, v: f64) -> Var {
        self.constant(Matrix::filled(1, 1, S::from_f64(v)))
    }

    pub fn value(&self, v: Var) -> &Matrix<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> S {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.as_slice()[0]
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(S) -> S) -> Var {
        let value = self.value(a).map(f);
        let ng = self.needs(a);
        self.push(value, op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (n, m) = self.shape(a);
        assert_eq!(self.shape(row), (1, m), "add_row shape mismatch");
        let av = self.value(a);
        let rv = self.value(row).as_slice();
        let value = Matrix::from_fn(n, m, |i, j| av.get(i, j) + rv[j]);
        let ng = self.needs(a) || self.needs(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (n, m) = self.shape(a);
        assert_eq!(self.shape(col), (n, 1), "mul_col shape mismatch");
        let av = self.value(a);
        let cv = self.value(col).as_slice();
        let value = Matrix::from_fn(n, m, |i, j| av.get(i, j) * cv[i]);
        let ng = self.needs(a) || self.needs(col);
        self.push(value, Op::MulCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x.scale(c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let cs = S::from_f64(c);
        self.unary(a, Op::AddScalar(a), |x| x + cs)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), S::sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), S::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), S::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), S::ln)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), S::softplus)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Elementwise clamp; the adjoint is zero where the value was clipped.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (S::from_f64(lo), S::from_f64(hi));
        self.unary(a, Op::Clamp(a, lo, hi), move |x| {
            if x.re() < lo {
                l
            } else if x.re() > hi {
                h
            } else {
                x
            }
        })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.shape(parts[0]).0;
        let total: usize = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p).0, n, "concat_cols row mismatch");
                self.shape(p).1
            })
            .sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(
            Matrix::from_vec(n, total, data),
            Op::ConcatCols(parts.to_vec()),
            ng,
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (n, m) = self.shape(a);
        assert!(start + len <= m, "slice_cols out of range");
        let av = self.value(a);
        let value = Matrix::from_fn(n, len, |i, j| av.get(i, start + j));
        let ng = self.needs(a);
        self.push(value, Op::SliceCols(a, start), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (n, m) = self.shape(a);
        assert!(start + len <= n, "slice_rows out of range");
        let av = self.value(a);
        let value = Matrix::from_vec(len, m, av.as_slice()[start * m..(start + len) * m].to_vec());
        let ng = self.needs(a);
        self.push(value, Op::SliceRows(a, start), ng)
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.needs(a);
        self.push(Matrix::filled(1, 1, s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column-wise mean: n×m → 1×m.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (n, m) = self.shape(a);
        let av = self.value(a);
        let inv = 1.0 / n as f64;
        let value = Matrix::from_fn(1, m, |_, j| {
            let mut acc = S::zero();
            for i in 0..n {
                acc += av.get(i, j);
            }
            acc.scale(inv)
        });
        let ng = self.needs(a);
        self.push(value, Op::MeanRows(a), ng)
    }

    /// Row sums: n×m → n×1.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let (n, _) = self.shape(a);
        let av = self.value(a);
        let value = Matrix::from_fn(n, 1, |i, _| {
            let mut acc = S::zero();
            for &x in av.row(i) {
                acc += x;
            }
            acc
        });
        let ng = self.needs(a);
        self.push(value, Op::RowSums(a), ng)
    }

    /// Numerically stable softmax over each row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (n, m) = self.shape(a);
        let av = self.value(a);
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            let row = av.row(i);
            let mx = row.iter().map(|x| x.re()).fold(f64::NEG_INFINITY, f64::max);
            let shift = S::from_f64(mx);
            let exps: Vec<S> = row.iter().map(|&x| (x - shift).exp()).collect();
            let mut z = S::zero();
            for &e in &exps {
                z += e;
            }
            data.extend(exps.into_iter().map(|e| e / z));
        }
        let ng = self.needs(a);
        self.push(Matrix::from_vec(n, m, data), Op::SoftmaxRows(a), ng)
    }

    /// Reverse sweep from a 1×1 output.
    pub fn backward(&self, out: Var) -> Gradients<S> {
        assert_eq!(self.shape(out), (1, 1), "backward expects a scalar output");
        let mut grads: Vec<Option<Matrix<S>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Matrix::filled(1, 1, S::one()));

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accum(&self, grads: &mut [Option<Matrix<S>>], v: Var, contrib: Matrix<S>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, op: &Op, out: &Matrix<S>, g: &Matrix<S>, grads: &mut [Option<Matrix<S>>]) {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(a) {
                    self.accum(grads, a, g.matmul_nt(self.value(b)));
                }
                if self.needs(b) {
                    self.accum(grads, b, self.value(a).matmul_tn(g));
                }
            }
            Op::Add(a, b) => {
                self.accum(grads, a, g.clone());
                self.accum(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, a, g.clone());
                self.accum(grads, b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    self.accum(grads, a, g.zip_map(self.value(b), |x, y| x * y));
                }
                if self.needs(b) {
                    self.accum(grads, b, g.zip_map(self.value(a), |x, y| x * y));
                }
            }
            Op::AddRow(a, row) => {
                self.accum(grads, a, g.clone());
                if self.needs(row) {
                    let (n, m) = g.shape();
                    let r = Matrix::from_fn(1, m, |_, j| {
                        let mut acc = S::zero();
                        for i in 0..n {
                            acc += g.get(i, j);
                        }
                        acc
                    });
                    self.accum(grads, row, r);
                }
            }
            Op::MulCol(a, col) => {
                let (n, m) = g.shape();
                if self.needs(a) {
                    let cv = self.value(col);
                    self.accum(grads, a, Matrix::from_fn(n, m, |i, j| g.get(i, j) * cv.get(i, 0)));
                }
                if self.needs(col) {
                    let av = self.value(a);
                    let c = Matrix::from_fn(n, 1, |i, _| {
                        let mut acc = S::zero();
                        for j in 0..m {
                            acc += g.get(i, j) * av.get(i, j);
                        }
                        acc
                    });
                    self.accum(grads, col, c);
                }
            }
            Op::Scale(a, c) => self.accum(grads, a, g.map(|x| x.scale(c))),
            Op::AddScalar(a) => self.accum(grads, a, g.clone()),
            Op::Sigmoid(a) => {
                self.accum(grads, a, g.zip_map(out, |gx, y| gx * y * (S::one() - y)))
            }
            Op::Tanh(a) => self.accum(grads, a, g.zip_map(out, |gx, y| gx * (S::one() - y * y))),
            Op::Exp(a) => self.accum(grads, a, g.zip_map(out, |gx, y| gx * y)),
            Op::Ln(a) => self.accum(grads, a, g.zip_map(self.value(a), |gx, x| gx / x)),
            Op::Softplus(a) => {
                self.accum(grads, a, g.zip_map(self.value(a), |gx, x| gx * x.sigmoid()))
            }
            Op::Square(a) => {
                self.accum(grads, a, g.zip_map(self.value(a), |gx, x| gx * x.scale(2.0)))
            }
            Op::Clamp(a, lo, hi) => self.accum(
                grads,
                a,
                g.zip_map(self.value(a), |gx, x| {
                    if x.re() < lo || x.re() > hi {
                        S::zero()
                    } else {
                        gx
                    }
                }),
            ),
            Op::ConcatCols(ref parts) => {
                let n = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.needs(p) {
                        let piece = Matrix::from_fn(n, w, |i, j| g.get(i, offset + j));
                        self.accum(grads, p, piece);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let (n, m) = self.shape(a);
                let w = g.cols();
                let full = Matrix::from_fn(n, m, |i, j| {
                    if j >= start && j < start + w {
                        g.get(i, j - start)
                    } else {
                        S::zero()
                    }
                });
                self.accum(grads, a, full);
            }
            Op::SliceRows(a, start) => {
                let (n, m) = self.shape(a);
                let h = g.rows();
                let full = Matrix::from_fn(n, m, |i, j| {
                    if i >= start && i < start + h {
                        g.get(i - start, j)
                    } else {
                        S::zero()
                    }
                });
                self.accum(grads, a, full);
            }
            Op::Sum(a) => {
                let (n, m) = self.shape(a);
                self.accum(grads, a, Matrix::filled(n, m, g.get(0, 0)));
            }
            Op::MeanRows(a) => {
                let (n, m) = self.shape(a);
                let inv = 1.0 / n as f64;
                self.accum(grads, a, Matrix::from_fn(n, m, |_, j| g.get(0, j).scale(inv)));
            }
            Op::RowSums(a) => {
                let (n, m) = self.shape(a);
                self.accum(grads, a, Matrix::from_fn(n, m, |i, _| g.get(i, 0)));
            }
            Op::SoftmaxRows(a) => {
                let (n, m) = out.shape();
                let mut data = Vec::with_capacity(n * m);
                for i in 0..n {
                    let y = out.row(i);
                    let gy = g.row(i);
                    let mut dot = S::zero();
                    for (&yy, &gg) in y.iter().zip(gy) {
                        dot += yy * gg;
                    }
                    data.extend(y.iter().zip(gy).map(|(&yy, &gg)| yy * (gg - dot)));
                }
                self.accum(grads, a, Matrix::from_vec(n, m, data));
            }
        }
    }
}
