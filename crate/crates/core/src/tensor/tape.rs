//! Batched reverse-mode differentiation over row-batched matrices.
//!
//! Every node holds a `batch x features` matrix (parameters hold their own
//! shape). Operations are evaluated eagerly when recorded; [`Tape::backward`]
//! walks the record in reverse. Tangent and cotangent propagation through a
//! network are themselves recorded as ordinary operations, so losses that
//! contain Jacobian entries differentiate with the same machinery. The
//! [`Tape::tanh_tangent`] primitive carries the closed-form second derivative
//! of `tanh`.

use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param,
    /// `x * w^T + b`
    Linear { x: Var, w: Var, b: Option<Var> },
    /// `x * w`
    LinearT { x: Var, w: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    /// `(1 - t^2) * p`, elementwise, where `t` is a tanh output.
    TanhTangent { t: Var, p: Var },
    Sigmoid(Var),
    Exp(Var),
    Square(Var),
    RowSum(Var),
    RowNorm(Var),
    SumAll(Var),
    /// `x * s` with `s` a single column broadcast across `x`'s columns.
    ScaleRows { x: Var, s: Var },
    Columns { x: Var, start: usize },
    ConcatCols(Var, Var),
    /// Contiguous flat range of `x` reshaped to the node's shape.
    View { x: Var, offset: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_check(ctx: &'static str, a: &Matrix, b: &Matrix) {
    assert_eq!(a.shape(), b.shape(), "{ctx}: operand shapes differ");
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("shape preserved")
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param => true,
            Op::Constant => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on non-scalar node");
        m[(0, 0)]
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Constant, &[])
    }

    /// A leaf whose adjoint is reported by [`Tape::backward`].
    pub fn param(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Param, &[])
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(xv.cols(), wv.cols(), "linear: input width");
        let mut out = Matrix::zeros(xv.rows(), wv.rows());
        gemm(1.0, xv, false, wv, true, 0.0, &mut out);
        if let Some(b) = b {
            let bv = self.value(b);
            assert_eq!(bv.shape(), (1, wv.rows()), "linear: bias shape");
            let bias = bv.as_slice().to_vec();
            for r in 0..out.rows() {
                for (o, bb) in out.row_mut(r).iter_mut().zip(&bias) {
                    *o += bb;
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(out, Op::Linear { x, w, b }, &inputs)
    }

    pub fn linear_t(&mut self, x: Var, w: Var) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(xv.cols(), wv.rows(), "linear_t: input width");
        let mut out = Matrix::zeros(xv.rows(), wv.cols());
        gemm(1.0, xv, false, wv, false, 0.0, &mut out);
        self.push(out, Op::LinearT { x, w }, &[x, w])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        shape_check("add", self.value(a), self.value(b));
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        shape_check("sub", self.value(a), self.value(b));
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        shape_check("mul", self.value(a), self.value(b));
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn tanh_tangent(&mut self, t: Var, p: Var) -> Var {
        shape_check("tanh_tangent", self.value(t), self.value(p));
        let out = zip_map(self.value(t), self.value(p), |t, p| (1.0 - t * t) * p);
        self.push(out, Op::TanhTangent { t, p }, &[t, p])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a), &[a])
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let data = (0..v.rows()).map(|r| v.row(r).iter().sum()).collect();
        let out = Matrix::from_vec(v.rows(), 1, data).expect("column");
        self.push(out, Op::RowSum(a), &[a])
    }

    /// Euclidean norm of each row.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let data = (0..v.rows())
            .map(|r| v.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let out = Matrix::from_vec(v.rows(), 1, data).expect("column");
        self.push(out, Op::RowNorm(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).as_slice().iter().sum();
        self.push(Matrix::filled(1, 1, s), Op::SumAll(a), &[a])
    }

    /// Row-wise inner product of two equally shaped nodes.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let m = self.mul(a, b);
        self.row_sum(m)
    }

    pub fn scale_rows(&mut self, x: Var, s: Var) -> Var {
        let xv = self.value(x);
        let sv = self.value(s);
        assert_eq!(sv.shape(), (xv.rows(), 1), "scale_rows: scale shape");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let k = sv[(r, 0)];
            for o in out.row_mut(r) {
                *o *= k;
            }
        }
        self.push(out, Op::ScaleRows { x, s }, &[x, s])
    }

    pub fn columns(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols(), "columns: range out of bounds");
        let out = xv.columns(start, len);
        self.push(out, Op::Columns { x, start }, &[x])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.rows(), bv.rows(), "concat_cols: row counts");
        let mut out = Matrix::zeros(av.rows(), av.cols() + bv.cols());
        for r in 0..av.rows() {
            let row = out.row_mut(r);
            row[..av.cols()].copy_from_slice(av.row(r));
            row[av.cols()..].copy_from_slice(bv.row(r));
        }
        self.push(out, Op::ConcatCols(a, b), &[a, b])
    }

    /// Reshapes the flat range `offset..offset + rows * cols` of `x` (row-major).
    pub fn view(&mut self, x: Var, offset: usize, rows: usize, cols: usize) -> Var {
        let xv = self.value(x).as_slice();
        assert!(offset + rows * cols <= xv.len(), "view: range out of bounds");
        let out = Matrix::from_vec(rows, cols, xv[offset..offset + rows * cols].to_vec())
            .expect("view shape");
        self.push(out, Op::View { x, offset }, &[x])
    }

    /// Reverse sweep seeded with the given output adjoints.
    ///
    /// Returns adjoints for every node that depends on a parameter; nodes
    /// that do not are skipped. Fails if any adjoint is non-finite.
    pub fn backward(&self, seeds: &[(Var, Matrix)]) -> Result<Adjoints> {
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        let mut last = 0;
        for (v, seed) in seeds {
            assert_eq!(
                seed.shape(),
                self.value(*v).shape(),
                "backward: seed shape"
            );
            accumulate(&mut adj[v.0], seed);
            last = last.max(v.0 + 1);
        }

        for i in (0..last).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut adj);
            adj[i] = Some(g);
        }

        for (i, a) in adj.iter().enumerate() {
            if let Some(a) = a {
                if !a.is_finite() {
                    return Err(Error::NonFinite(format!("adjoint of tape node {i}")));
                }
            }
        }
        Ok(Adjoints { adj })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, op: &Op, y: &Matrix, g: &Matrix, adj: &mut [Option<Matrix>]) {
        match *op {
            Op::Constant | Op::Param => {}
            Op::Linear { x, w, b } => {
                let xv = self.value(x);
                let wv = self.value(w);
                if self.needs(x) {
                    let slot = adj[x.0].get_or_insert_with(|| Matrix::zeros(xv.rows(), xv.cols()));
                    gemm(1.0, g, false, wv, false, 1.0, slot);
                }
                if self.needs(w) {
                    let slot = adj[w.0].get_or_insert_with(|| Matrix::zeros(wv.rows(), wv.cols()));
                    gemm(1.0, g, true, xv, false, 1.0, slot);
                }
                if let Some(b) = b {
                    if self.needs(b) {
                        let slot = adj[b.0].get_or_insert_with(|| Matrix::zeros(1, g.cols()));
                        let s = slot.as_mut_slice();
                        for r in 0..g.rows() {
                            for (acc, v) in s.iter_mut().zip(g.row(r)) {
                                *acc += v;
                            }
                        }
                    }
                }
            }
            Op::LinearT { x, w } => {
                let xv = self.value(x);
                let wv = self.value(w);
                if self.needs(x) {
                    let slot = adj[x.0].get_or_insert_with(|| Matrix::zeros(xv.rows(), xv.cols()));
                    gemm(1.0, g, false, wv, true, 1.0, slot);
                }
                if self.needs(w) {
                    let slot = adj[w.0].get_or_insert_with(|| Matrix::zeros(wv.rows(), wv.cols()));
                    gemm(1.0, xv, true, g, false, 1.0, slot);
                }
            }
            Op::Add(a, b) => {
                if self.needs(a) {
                    accumulate(&mut adj[a.0], g);
                }
                if self.needs(b) {
                    accumulate(&mut adj[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if self.needs(a) {
                    accumulate(&mut adj[a.0], g);
                }
                if self.needs(b) {
                    accumulate_scaled(&mut adj[b.0], g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    accumulate(&mut adj[a.0], &zip_map(g, self.value(b), |g, v| g * v));
                }
                if self.needs(b) {
                    accumulate(&mut adj[b.0], &zip_map(g, self.value(a), |g, v| g * v));
                }
            }
            Op::Scale(a, c) => accumulate_scaled(&mut adj[a.0], g, c),
            Op::AddScalar(a) => accumulate(&mut adj[a.0], g),
            Op::Tanh(a) => {
                accumulate(&mut adj[a.0], &zip_map(g, y, |g, t| g * (1.0 - t * t)));
            }
            Op::TanhTangent { t, p } => {
                let tv = self.value(t);
                let pv = self.value(p);
                if self.needs(t) {
                    let d = zip_map(tv, pv, |t, p| -2.0 * t * p);
                    accumulate(&mut adj[t.0], &zip_map(&d, g, |d, g| d * g));
                }
                if self.needs(p) {
                    accumulate(&mut adj[p.0], &zip_map(tv, g, |t, g| (1.0 - t * t) * g));
                }
            }
            Op::Sigmoid(a) => {
                accumulate(&mut adj[a.0], &zip_map(g, y, |g, s| g * s * (1.0 - s)));
            }
            Op::Exp(a) => accumulate(&mut adj[a.0], &zip_map(g, y, |g, e| g * e)),
            Op::Square(a) => {
                accumulate(&mut adj[a.0], &zip_map(g, self.value(a), |g, x| 2.0 * g * x));
            }
            Op::RowSum(a) => {
                let av = self.value(a);
                let slot = adj[a.0].get_or_insert_with(|| Matrix::zeros(av.rows(), av.cols()));
                for r in 0..av.rows() {
                    let gr = g[(r, 0)];
                    for s in slot.row_mut(r) {
                        *s += gr;
                    }
                }
            }
            Op::RowNorm(a) => {
                // The norm is not differentiable at zero; use the zero subgradient there.
                let av = self.value(a);
                let slot = adj[a.0].get_or_insert_with(|| Matrix::zeros(av.rows(), av.cols()));
                for r in 0..av.rows() {
                    let n = y[(r, 0)];
                    if n > 0.0 {
                        let k = g[(r, 0)] / n;
                        for (s, x) in slot.row_mut(r).iter_mut().zip(av.row(r)) {
                            *s += k * x;
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                let av = self.value(a);
                let gv = g[(0, 0)];
                accumulate(&mut adj[a.0], &Matrix::filled(av.rows(), av.cols(), gv));
            }
            Op::ScaleRows { x, s } => {
                let xv = self.value(x);
                let sv = self.value(s);
                if self.needs(x) {
                    let slot = adj[x.0].get_or_insert_with(|| Matrix::zeros(xv.rows(), xv.cols()));
                    for r in 0..xv.rows() {
                        let k = sv[(r, 0)];
                        for (a, gg) in slot.row_mut(r).iter_mut().zip(g.row(r)) {
                            *a += k * gg;
                        }
                    }
                }
                if self.needs(s) {
                    let slot = adj[s.0].get_or_insert_with(|| Matrix::zeros(sv.rows(), 1));
                    for r in 0..xv.rows() {
                        let d: f64 = xv.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                        slot[(r, 0)] += d;
                    }
                }
            }
            Op::Columns { x, start } => {
                let xv = self.value(x);
                let slot = adj[x.0].get_or_insert_with(|| Matrix::zeros(xv.rows(), xv.cols()));
                for r in 0..xv.rows() {
                    for (s, gg) in slot.row_mut(r)[start..start + g.cols()]
                        .iter_mut()
                        .zip(g.row(r))
                    {
                        *s += gg;
                    }
                }
            }
            Op::View { x, offset } => {
                let xv = self.value(x);
                let slot = adj[x.0].get_or_insert_with(|| Matrix::zeros(xv.rows(), xv.cols()));
                for (s, gg) in slot.as_mut_slice()[offset..offset + g.as_slice().len()]
                    .iter_mut()
                    .zip(g.as_slice())
                {
                    *s += gg;
                }
            }
            Op::ConcatCols(a, b) => {
                let ac = self.value(a).cols();
                if self.needs(a) {
                    accumulate(&mut adj[a.0], &g.columns(0, ac));
                }
                if self.needs(b) {
                    accumulate(&mut adj[b.0], &g.columns(ac, g.cols() - ac));
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: &Matrix) {
    match slot {
        Some(s) => {
            for (a, b) in s.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += b;
            }
        }
        None => *slot = Some(g.clone()),
    }
}

fn accumulate_scaled(slot: &mut Option<Matrix>, g: &Matrix, c: f64) {
    match slot {
        Some(s) => {
            for (a, b) in s.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += c * b;
            }
        }
        None => *slot = Some(g.map(|v| c * v)),
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Adjoints {
    adj: Vec<Option<Matrix>>,
}

impl Adjoints {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.adj.get(v.0).and_then(|a| a.as_ref())
    }

    /// Adjoint of `v`, or zeros shaped like `like` when `v` was unreached.
    pub fn get_or_zeros(&self, v: Var, like: &Matrix) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(like.rows(), like.cols()))
    }
}
