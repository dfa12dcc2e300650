//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation applied to its nodes; [`Graph::backward`]
//! replays the record in reverse and accumulates adjoints. Every node is a 2D
//! `f64` matrix; scalars are `1x1`.

use ndarray::{concatenate, s, Array2, Axis, Zip};
use thiserror::Error;

pub type Mat = Array2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("non-finite value produced by `{0}`")]
    NonFinite(&'static str),
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward requires a 1x1 output, got {0}x{1}")]
    NotScalar(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    ScaleRows(Var, Vec<f64>),
    BroadcastRows(Var),
    SumCols(Var),
    Sum(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Square(..) => "square",
            Op::Clamp(..) => "clamp",
            Op::Minimum(..) => "minimum",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterAddRows(..) => "scatter_add_rows",
            Op::ScaleRows(..) => "scale_rows",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::SumCols(..) => "sum_cols",
            Op::Sum(..) => "sum",
        }
    }
}

struct Node {
    value: Mat,
    op: Op,
}

/// Recorded computation. Shape errors panic (they are programming errors in
/// the model code); non-finite values are latched and reported by
/// [`Graph::check`] and [`Graph::backward`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    n_params: usize,
    poisoned: Option<&'static str>,
}

/// Gradients indexed by parameter slot, in registration order.
pub type ParamGrads = Vec<Mat>;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn check(&self) -> Result<(), GradError> {
        match self.poisoned {
            Some(op) => Err(GradError::NonFinite(op)),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        if self.poisoned.is_none() && !value.iter().all(|x| x.is_finite()) {
            self.poisoned = Some(op.name());
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn scalar_constant(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Register a differentiable leaf. Slots are numbered in call order.
    pub fn param(&mut self, value: Mat) -> Var {
        let slot = self.n_params;
        self.n_params += 1;
        self.push(value, Op::Param(slot))
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa == sb, "{}", GradError::Shape { op, detail: format!("{sa:?} vs {sb:?}") });
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.1 == sb.0, "{}", GradError::Shape { op: "matmul", detail: format!("{sa:?} x {sb:?}") });
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a (n x d) + row (1 x d)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (sa, sr) = (self.shape(a), self.shape(row));
        assert!(sr.0 == 1 && sr.1 == sa.1, "{}", GradError::Shape { op: "add_row", detail: format!("{sa:?} + {sr:?}") });
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("add", a, b);
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("sub", a, b);
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("mul", a, b);
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        self.push(v, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Elementwise clamp; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("minimum", a, b);
        let mut v = self.value(a).clone();
        Zip::from(&mut v).and(self.value(b)).for_each(|x, &y| {
            if y < *x {
                *x = y
            }
        });
        self.push(v, Op::Minimum(a, b))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views).unwrap_or_else(|e| panic!("concat_cols: {e}"));
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views).unwrap_or_else(|e| panic!("concat_rows: {e}"));
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), idx);
        self.push(v, Op::GatherRows(a, idx.to_vec()))
    }

    /// `out[idx[k]] += a[k]` into a zero matrix with `n_rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], n_rows: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.nrows(), idx.len(), "scatter_add_rows: index length");
        let mut out = Array2::zeros((n_rows, src.ncols()));
        for (k, &r) in idx.iter().enumerate() {
            let mut row = out.row_mut(r);
            row += &src.row(k);
        }
        self.push(out, Op::ScatterAddRows(a, idx.to_vec()))
    }

    /// Multiply row `r` by the constant `k[r]`.
    pub fn scale_rows(&mut self, a: Var, k: &[f64]) -> Var {
        let mut v = self.value(a).clone();
        assert_eq!(v.nrows(), k.len(), "scale_rows: factor length");
        for (mut row, &f) in v.rows_mut().into_iter().zip(k) {
            row *= f;
        }
        self.push(v, Op::ScaleRows(a, k.to_vec()))
    }

    /// Repeat a `1 x d` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let row = self.value(a);
        assert_eq!(row.nrows(), 1, "broadcast_rows: expects a single row");
        let v = row.broadcast((n, row.ncols())).unwrap().to_owned();
        self.push(v, Op::BroadcastRows(a))
    }

    /// Row sums as an `n x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumCols(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Adjoints of a scalar output with respect to every registered param.
    pub fn backward(&self, out: Var) -> Result<ParamGrads, GradError> {
        self.check()?;
        let (r, c) = self.shape(out);
        if (r, c) != (1, 1) {
            return Err(GradError::NotScalar(r, c));
        }
        let mut adj: Vec<Option<Mat>> = (0..=out.0).map(|_| None).collect();
        adj[out.0] = Some(Array2::ones((1, 1)));
        let mut grads: Vec<Option<Mat>> = (0..self.n_params).map(|_| None).collect();

        fn acc(adj: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut adj[v.0] {
                Some(x) => *x += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=out.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param(slot) => grads[*slot] = Some(g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut adj, *row, gr);
                    acc(&mut adj, *a, g);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *b, g.clone());
                    acc(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *b, -&g);
                    acc(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Scale(a, k) => acc(&mut adj, *a, g * *k),
                Op::AddScalar(a) => acc(&mut adj, *a, g),
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(&mut adj, *a, ga);
                }
                Op::Exp(a) => acc(&mut adj, *a, g * &node.value),
                Op::Square(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|d, &x| *d *= 2.0 * x);
                    acc(&mut adj, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(self.value(*a)).for_each(|d, &x| {
                        if x < *lo || x > *hi {
                            *d = 0.0
                        }
                    });
                    acc(&mut adj, *a, ga);
                }
                Op::Minimum(a, b) => {
                    let mut ga = g.clone();
                    let mut gb = g;
                    Zip::from(&mut ga)
                        .and(&mut gb)
                        .and(self.value(*a))
                        .and(self.value(*b))
                        .for_each(|da, db, &x, &y| {
                            if y < x {
                                *da = 0.0
                            } else {
                                *db = 0.0
                            }
                        });
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut adj, *p, g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        acc(&mut adj, *p, g.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    let end = start + g.nrows();
                    ga.slice_mut(s![*start..end, ..]).assign(&g);
                    acc(&mut adj, *a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    for (k, &r) in idx.iter().enumerate() {
                        let mut row = ga.row_mut(r);
                        row += &g.row(k);
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::ScatterAddRows(a, idx) => {
                    let ga = g.select(Axis(0), idx);
                    acc(&mut adj, *a, ga);
                }
                Op::ScaleRows(a, k) => {
                    let mut ga = g;
                    for (mut row, &f) in ga.rows_mut().into_iter().zip(k) {
                        row *= f;
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::BroadcastRows(a) => {
                    acc(&mut adj, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::SumCols(a) => {
                    let cols = self.value(*a).ncols();
                    let ga = g.broadcast((g.nrows(), cols)).unwrap().to_owned();
                    acc(&mut adj, *a, ga);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    acc(&mut adj, *a, ga);
                }
            }
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(slot, g)| g.unwrap_or_else(|| Array2::zeros(self.param_shape(slot))))
            .collect();
        Ok(grads)
    }

    fn param_shape(&self, slot: usize) -> (usize, usize) {
        self.nodes
            .iter()
            .find(|n| matches!(n.op, Op::Param(s) if s == slot))
            .map(|n| n.value.dim())
            .unwrap_or((0, 0))
    }
}
