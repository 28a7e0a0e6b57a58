//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every primitive in execution order. Values live on the
//! tape and are addressed by [`Var`] handles. Vectors are `1 × len` rows, and
//! scalars are `1 × 1`. Calling [`Tape::backward`] once replays the record in
//! reverse and leaves `∂loss/∂v` for every leaf created with
//! `requires_grad = true`. A tape is single-use: a second `backward` fails.
//!
//! ```
//! use ndarray::array;
//! use polhin::autodiff::Tape;
//!
//! let mut tape = Tape::new();
//! let w = tape.param(array![[1.0, 2.0]]);
//! let sq = tape.hadamard(w, w).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(w).unwrap(), &array![[2.0, 4.0]]);
//! ```

mod gradcheck;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

/// Lower clamp applied to arguments of [`Tape::log`].
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constant sparse matrix with explicit rows, used for neighbourhood
/// aggregation (`Y = S · X`).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if let Some(&(j, _)) = row.iter().find(|(j, _)| *j >= ncols) {
                return Err(Error::Argument(format!(
                    "sparse row {i} references column {j} of {ncols}"
                )));
            }
        }
        Ok(Self { ncols, rows })
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// True when no row has any entry.
    pub fn rows_are_empty(&self) -> bool {
        self.rows.iter().all(Vec::is_empty)
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows.len(), x.ncols()));
        for (i, row) in self.rows.iter().enumerate() {
            let mut dst = out.row_mut(i);
            for &(j, w) in row {
                dst.scaled_add(w, &x.row(j));
            }
        }
        out
    }

    fn apply_transposed(&self, g: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.ncols, g.ncols()));
        for (i, row) in self.rows.iter().enumerate() {
            let src = g.row(i);
            for &(j, w) in row {
                out.row_mut(j).scaled_add(w, &src);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Linear(Var, Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatCols(Var, Var),
    StackRows(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    RowSum(Var),
    GatherRows(Var, Rc<Vec<usize>>),
    PairDots(Var, Rc<Vec<(usize, usize)>>),
    SpMM(Rc<SparseRows>, Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    Log(Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Record of executed primitives.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Array2<f64>>>>,
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

    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: &'static str, value: Array2<f64>, kind: Op, inputs: &[Var]) -> Result<Var> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("{op} produced a non-finite value")));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: kind,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Dimension {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::Dimension {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let v = self.value(a).dot(self.value(b));
        self.push("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`, the shape of a linear layer with weights stored `out × in`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(Error::Dimension {
                op: "matmul_bt",
                left: sa,
                right: sb,
            });
        }
        let v = self.value(a).dot(&self.value(b).t());
        self.push("matmul_bt", v, Op::MatMulBt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a) + self.value(b);
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    /// Adds the `1 × m` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.0 != 1 || sb.1 != sa.1 {
            return Err(Error::Dimension {
                op: "add_row",
                left: sa,
                right: sb,
            });
        }
        let v = self.value(a) + self.value(bias);
        self.push("add_row", v, Op::AddRow(a, bias), &[a, bias])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let v = self.value(a) * self.value(b);
        self.push("hadamard", v, Op::Hadamard(a, b), &[a, b])
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a) * c;
        self.push("scalar_mul", v, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a) + c;
        self.push("add_scalar", v, Op::AddScalar(a), &[a])
    }

    /// `1 − a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scalar_mul(a, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    /// Column-wise concatenation `[a, b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 {
            return Err(Error::Dimension {
                op: "concat",
                left: sa,
                right: sb,
            });
        }
        let mut v = Array2::zeros((sa.0, sa.1 + sb.1));
        v.slice_mut(s![.., ..sa.1]).assign(self.value(a));
        v.slice_mut(s![.., sa.1..]).assign(self.value(b));
        self.push("concat", v, Op::ConcatCols(a, b), &[a, b])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push("sum", v, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::Argument("mean of an empty tensor".into()));
        }
        let v = Array2::from_elem((1, 1), self.value(a).sum() / n as f64);
        self.push("mean", v, Op::Mean(a), &[a])
    }

    /// Full inner product of two same-shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let d = Zip::from(self.value(a))
            .and(self.value(b))
            .fold(0.0, |acc, x, y| acc + x * y);
        self.push("dot", Array2::from_elem((1, 1), d), Op::Dot(a, b), &[a, b])
    }

    /// `n × m → n × 1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push("row_sum", v, Op::RowSum(a), &[a])
    }

    /// Selects rows of `a` by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, a: Var, rows: Rc<Vec<usize>>) -> Result<Var> {
        let sa = self.shape(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= sa.0) {
            return Err(Error::Dimension {
                op: "gather_rows",
                left: sa,
                right: (bad, 0),
            });
        }
        let v = self.value(a).select(Axis(0), &rows);
        self.push("gather_rows", v, Op::GatherRows(a, rows), &[a])
    }

    /// Vertical concatenation; all parts need the same column count.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Argument("stack_rows needs at least one part".into()));
        };
        let cols = self.shape(first).1;
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).1 != cols) {
            return Err(Error::Dimension {
                op: "stack_rows",
                left: self.shape(first),
                right: self.shape(bad),
            });
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts checked");
        self.push("stack_rows", v, Op::StackRows(parts.to_vec()), parts)
    }

    /// Column of row inner products `a[i]·a[j]`, one per pair.
    pub fn pair_dots(&mut self, a: Var, pairs: Rc<Vec<(usize, usize)>>) -> Result<Var> {
        let sa = self.shape(a);
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= sa.0 || j >= sa.0) {
            return Err(Error::Dimension {
                op: "pair_dots",
                left: sa,
                right: (i.max(j), 0),
            });
        }
        let x = self.value(a);
        let v = Array2::from_shape_fn((pairs.len(), 1), |(k, _)| {
            let (i, j) = pairs[k];
            x.row(i).dot(&x.row(j))
        });
        self.push("pair_dots", v, Op::PairDots(a, pairs), &[a])
    }

    /// `S · a` for a constant sparse `S`.
    pub fn spmm(&mut self, s: Rc<SparseRows>, a: Var) -> Result<Var> {
        let sa = self.shape(a);
        if s.ncols() != sa.0 {
            return Err(Error::Dimension {
                op: "spmm",
                left: (s.nrows(), s.ncols()),
                right: sa,
            });
        }
        let v = s.apply(self.value(a));
        self.push("spmm", v, Op::SpMM(s, a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push("leaky_relu", v, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.leaky_relu(a, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).mapv(sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).mapv(f64::tanh);
        self.push("tanh", v, Op::Tanh(a), &[a])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = softmax_rows(self.value(a));
        self.push("softmax", v, Op::SoftmaxRows(a), &[a])
    }

    /// Natural log of `max(a, LOG_CLAMP)`.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.iter().any(|x| x.is_nan()) {
            return Err(Error::Numerical("log of NaN".into()));
        }
        let v = x.mapv(|x| x.max(LOG_CLAMP).ln());
        self.push("log", v, Op::Log(a), &[a])
    }

    /// Gradient of a node after [`Tape::backward`]; `None` for nodes that do
    /// not require gradients or before backward has run.
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.as_ref()?.get(v.0)?.as_ref()
    }

    /// Moves the gradient of `v` out of the tape.
    pub fn take_grad(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.as_mut()?.get_mut(v.0)?.take()
    }

    /// Replays the tape in reverse from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::Argument("backward already ran on this tape".into()));
        }
        let sl = self.shape(loss);
        if sl != (1, 1) {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got shape {sl:?}"
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Array2::ones((1, 1)));
        }

        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, g, &mut grads);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[i].is_none() {
                grads[i] = Some(Array2::zeros(node.value.dim()));
            }
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn propagate(&self, i: usize, g_owned: Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let g = &g_owned;
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &self.nodes[i].value;
        let mut acc = |v: Var, delta: Array2<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        let wants = |v: Var| self.nodes[v.0].requires_grad;

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    acc(*a, g.dot(&val(*b).t()));
                }
                if wants(*b) {
                    acc(*b, val(*a).t().dot(g));
                }
            }
            Op::MatMulBt(a, b) => {
                if wants(*a) {
                    acc(*a, g.dot(val(*b)));
                }
                if wants(*b) {
                    acc(*b, g.t().dot(val(*a)));
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    acc(*a, g.clone());
                }
                acc(*b, g_owned);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Linear(x, w, bias) => {
                if wants(*x) {
                    acc(*x, g.dot(val(*w)));
                }
                if wants(*w) {
                    acc(*w, g.t().dot(val(*x)));
                }
                if wants(*bias) {
                    acc(*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::AddRow(a, bias) => {
                acc(*a, g.clone());
                acc(*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Hadamard(a, b) => {
                if wants(*a) {
                    acc(*a, g * val(*b));
                }
                if wants(*b) {
                    acc(*b, g * val(*a));
                }
            }
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::ConcatCols(a, b) => {
                let p = val(*a).ncols();
                acc(*a, g.slice(s![.., ..p]).to_owned());
                acc(*b, g.slice(s![.., p..]).to_owned());
            }
            Op::Sum(a) => acc(*a, Array2::from_elem(val(*a).dim(), g[[0, 0]])),
            Op::Mean(a) => {
                let x = val(*a);
                acc(*a, Array2::from_elem(x.dim(), g[[0, 0]] / x.len() as f64));
            }
            Op::Dot(a, b) if a == b => {
                if wants(*a) {
                    let scale = 2.0 * g[[0, 0]];
                    match &mut grads[a.0] {
                        Some(existing) => existing.scaled_add(scale, val(*a)),
                        slot @ None => *slot = Some(val(*a) * scale),
                    }
                }
            }
            Op::Dot(a, b) => {
                let gs = g[[0, 0]];
                if wants(*a) {
                    acc(*a, val(*b) * gs);
                }
                if wants(*b) {
                    acc(*b, val(*a) * gs);
                }
            }
            Op::RowSum(a) => {
                let x = val(*a);
                let mut d = Array2::zeros(x.dim());
                d += g;
                acc(*a, d);
            }
            Op::GatherRows(a, rows) => {
                let mut d = Array2::zeros(val(*a).dim());
                for (k, &r) in rows.iter().enumerate() {
                    d.row_mut(r).scaled_add(1.0, &g.row(k));
                }
                acc(*a, d);
            }
            Op::StackRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = val(p).nrows();
                    if wants(p) {
                        acc(p, g.slice(s![start..start + n, ..]).to_owned());
                    }
                    start += n;
                }
            }
            Op::PairDots(a, pairs) => {
                let x = val(*a);
                let mut d = Array2::zeros(x.dim());
                for (k, &(i, j)) in pairs.iter().enumerate() {
                    let gk = g[[k, 0]];
                    d.row_mut(i).scaled_add(gk, &x.row(j));
                    d.row_mut(j).scaled_add(gk, &x.row(i));
                }
                acc(*a, d);
            }
            Op::SpMM(sp, a) => acc(*a, sp.apply_transposed(g)),
            Op::LeakyRelu(a, slope) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d *= slope;
                    }
                });
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(out).for_each(|d, &y| *d *= y * (1.0 - y));
                acc(*a, d);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(out).for_each(|d, &y| *d *= 1.0 - y * y);
                acc(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let inner = (g * out).sum_axis(Axis(1)).insert_axis(Axis(1));
                let d = out * &(g - &inner);
                acc(*a, d);
            }
            Op::Log(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                    if x >= LOG_CLAMP {
                        *d /= x;
                    } else {
                        *d = 0.0;
                    }
                });
                acc(*a, d);
            }
        }
    }

    /// `x · Wᵀ + b` with `W` stored `out × in` and `b` a `1 × out` row.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(weight), self.shape(bias));
        if sx.1 != sw.1 {
            return Err(Error::Dimension {
                op: "linear",
                left: sx,
                right: sw,
            });
        }
        if sb != (1, sw.0) {
            return Err(Error::Dimension {
                op: "linear",
                left: sw,
                right: sb,
            });
        }
        let mut v = self.value(x).dot(&self.value(weight).t());
        v += self.value(bias);
        self.push("linear", v, Op::Linear(x, weight, bias), &[x, weight, bias])
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

/// Row-wise softmax of a plain matrix.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}
