//! Minimal dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns every tensor of one differentiation graph as a flat
//! arena; a [`TensorId`] is an index into it. Ids grow monotonically and
//! every operation's inputs precede its output, so reverse-id order is a
//! valid reverse topological order and the backward sweep is a single
//! deterministic pass. All tensors are two-dimensional `f64` matrices;
//! scalars are `1x1`.
//!
//! Reductions run in fixed index order, so identical inputs produce
//! bit-identical values and gradients across runs.
//!
//! The intended use is one tape per training step: bind parameter values
//! as leaves, build the loss, call [`Tape::backward`], read gradients.

mod check;
mod optim;

pub use check::{grad_check, grad_check_masked};
pub use optim::{adam_step, AdamParams, OptimizerState};

use ndarray::{concatenate, Array2, Axis};

use crate::error::{Error, Result};

/// Handle to a tensor stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(TensorId, TensorId),
    /// Elementwise with broadcasting over rows, columns, or both.
    Add(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    Relu(TensorId),
    RowSoftmax(TensorId),
    RowLogSumExp(TensorId),
    Exp(TensorId),
    Log(TensorId),
    Neg(TensorId),
    SumAll(TensorId),
    MeanAll(TensorId),
    RowSum(TensorId),
    Transpose(TensorId),
    L2NormRows(TensorId),
    SquaredFrobenius(TensorId),
    ScalarMul(TensorId, f64),
    ConcatRows(Vec<TensorId>),
    GatherRows(TensorId, Vec<usize>),
    Rsqrt(TensorId),
    ClampMin(TensorId, f64),
    Diag(TensorId),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Arena of tensors forming one acyclic differentiation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, details: String) -> Error {
    Error::Shape { op, details }
}

/// Output shape of a broadcast binary op, or an error when incompatible.
/// A dimension broadcasts when either side is 1.
fn broadcast_shape(
    op: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(shape_err(op, format!("{a:?} vs {b:?}"))),
    }
}

fn broadcast_apply(
    a: &Array2<f64>,
    b: &Array2<f64>,
    out: (usize, usize),
    f: impl Fn(f64, f64) -> f64,
) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    Array2::from_shape_fn(out, |(i, j)| {
        let av = a[[if ar == 1 { 0 } else { i }, if ac == 1 { 0 } else { j }]];
        let bv = b[[if br == 1 { 0 } else { i }, if bc == 1 { 0 } else { j }]];
        f(av, bv)
    })
}

/// Sum `grad` over the axes that were broadcast to reach it from `shape`.
fn reduce_to_shape(grad: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = grad.clone();
    if shape.0 == 1 && g.nrows() > 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() > 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Number of tensors recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, requires_grad: bool, op: Op) -> TensorId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Array2<f64>) -> TensorId {
        self.push(value, false, Op::Leaf)
    }

    /// A leaf parameter that accumulates gradients on backward.
    pub fn parameter(&mut self, value: Array2<f64>) -> TensorId {
        self.push(value, true, Op::Leaf)
    }

    /// A `1x1` constant.
    pub fn scalar(&mut self, value: f64) -> TensorId {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, t: TensorId) -> &Array2<f64> {
        &self.nodes[t.0].value
    }

    /// Accumulated gradient, present only after [`Tape::backward`] for
    /// tensors on a path to a parameter.
    pub fn grad(&self, t: TensorId) -> Option<&Array2<f64>> {
        self.nodes[t.0].grad.as_ref()
    }

    pub fn requires_grad(&self, t: TensorId) -> bool {
        self.nodes[t.0].requires_grad
    }

    fn unary_requires(&self, x: TensorId) -> bool {
        self.nodes[x.0].requires_grad
    }

    fn binary_requires(&self, a: TensorId, b: TensorId) -> bool {
        self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ar, ac) = self.value(a).dim();
        let (br, bc) = self.value(b).dim();
        if ac != br {
            return Err(shape_err("matmul", format!("({ar}, {ac}) x ({br}, {bc})")));
        }
        let value = self.value(a).dot(self.value(b));
        let req = self.binary_requires(a, b);
        Ok(self.push(value, req, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let out = broadcast_shape("add", self.value(a).dim(), self.value(b).dim())?;
        let value = broadcast_apply(self.value(a), self.value(b), out, |x, y| x + y);
        let req = self.binary_requires(a, b);
        Ok(self.push(value, req, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let out = broadcast_shape("mul", self.value(a).dim(), self.value(b).dim())?;
        let value = broadcast_apply(self.value(a), self.value(b), out, |x, y| x * y);
        let req = self.binary_requires(a, b);
        Ok(self.push(value, req, Op::Mul(a, b)))
    }

    /// Elementwise division with broadcasting; dividing by a `1x1` tensor
    /// scales the whole matrix.
    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let out = broadcast_shape("div", self.value(a).dim(), self.value(b).dim())?;
        let value = broadcast_apply(self.value(a), self.value(b), out, |x, y| x / y);
        let req = self.binary_requires(a, b);
        Ok(self.push(value, req, Op::Div(a, b)))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let value = self.value(x).mapv(|v| v.max(0.0));
        let req = self.unary_requires(x);
        self.push(value, req, Op::Relu(x))
    }

    /// Softmax along each row, shifted by the row maximum for stability.
    pub fn row_softmax(&mut self, x: TensorId) -> TensorId {
        let mut value = self.value(x).clone();
        for mut row in value.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let sum: f64 = row.iter().sum();
            row.mapv_inplace(|v| v / sum);
        }
        let req = self.unary_requires(x);
        self.push(value, req, Op::RowSoftmax(x))
    }

    /// `log(sum(exp(row)))` per row, producing an `n x 1` column.
    pub fn row_logsumexp(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x);
        let n = v.nrows();
        let mut out = Array2::zeros((n, 1));
        for i in 0..n {
            let row = v.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&t| (t - max).exp()).sum();
            out[[i, 0]] = max + sum.ln();
        }
        let req = self.unary_requires(x);
        self.push(out, req, Op::RowLogSumExp(x))
    }

    pub fn exp(&mut self, x: TensorId) -> TensorId {
        let value = self.value(x).mapv(f64::exp);
        let req = self.unary_requires(x);
        self.push(value, req, Op::Exp(x))
    }

    pub fn log(&mut self, x: TensorId) -> TensorId {
        let value = self.value(x).mapv(f64::ln);
        let req = self.unary_requires(x);
        self.push(value, req, Op::Log(x))
    }

    pub fn neg(&mut self, x: TensorId) -> TensorId {
        let value = self.value(x).mapv(|v| -v);
        let req = self.unary_requires(x);
        self.push(value, req, Op::Neg(x))
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let value = Array2::from_elem((1, 1), self.value(x).iter().sum::<f64>());
        let req = self.unary_requires(x);
        self.push(value, req, Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x);
        let n = (v.nrows() * v.ncols()) as f64;
        let value = Array2::from_elem((1, 1), v.iter().sum::<f64>() / n);
        let req = self.unary_requires(x);
        self.push(value, req, Op::MeanAll(x))
    }

    /// Row sums as an `n x 1` column.
    pub fn row_sum(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x);
        let value = v.sum_axis(Axis(1)).insert_axis(Axis(1));
        let req = self.unary_requires(x);
        self.push(value, req, Op::RowSum(x))
    }

    pub fn transpose(&mut self, x: TensorId) -> TensorId {
        let value = self.value(x).t().to_owned();
        let req = self.unary_requires(x);
        self.push(value, req, Op::Transpose(x))
    }

    /// Euclidean norm of each row as an `n x 1` column.
    pub fn l2_norm_rows(&mut self, x: TensorId) -> TensorId {
        let v = self.value(x);
        let n = v.nrows();
        let mut out = Array2::zeros((n, 1));
        for i in 0..n {
            out[[i, 0]] = v.row(i).iter().map(|&t| t * t).sum::<f64>().sqrt();
        }
        let req = self.unary_requires(x);
        self.push(out, req, Op::L2NormRows(x))
    }

    /// Sum of squared entries as a `1x1` scalar.
    pub fn squared_frobenius(&mut self, x: TensorId) -> TensorId {
        let value = Array2::from_elem((1, 1), self.value(x).iter().map(|&t| t * t).sum());
        let req = self.unary_requires(x);
        self.push(value, req, Op::SquaredFrobenius(x))
    }

    pub fn scalar_mul(&mut self, x: TensorId, c: f64) -> TensorId {
        let value = self.value(x).mapv(|v| c * v);
        let req = self.unary_requires(x);
        self.push(value, req, Op::ScalarMul(x, c))
    }

    /// Stack tensors vertically; all inputs must share a column count.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(shape_err("concat-rows", "no inputs".into()));
        }
        let cols = self.value(parts[0]).ncols();
        for &p in parts {
            if self.value(p).ncols() != cols {
                return Err(shape_err(
                    "concat-rows",
                    format!("{} cols vs {}", self.value(p).ncols(), cols),
                ));
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("checked column counts");
        let req = parts.iter().any(|&p| self.nodes[p.0].requires_grad);
        Ok(self.push(value, req, Op::ConcatRows(parts.to_vec())))
    }

    /// Select rows by index; duplicate indices are allowed and gradients
    /// accumulate into the shared source row.
    pub fn gather_rows(&mut self, x: TensorId, indices: &[usize]) -> Result<TensorId> {
        let v = self.value(x);
        let (n, c) = v.dim();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(shape_err("gather-rows", format!("index {bad} for {n} rows")));
        }
        let mut out = Array2::zeros((indices.len(), c));
        for (dst, &src) in indices.iter().enumerate() {
            out.row_mut(dst).assign(&v.row(src));
        }
        let req = self.unary_requires(x);
        Ok(self.push(out, req, Op::GatherRows(x, indices.to_vec())))
    }

    /// Elementwise `x^(-1/2)`; inputs must be strictly positive.
    pub fn rsqrt(&mut self, x: TensorId) -> TensorId {
        let value = self.value(x).mapv(|v| 1.0 / v.sqrt());
        let req = self.unary_requires(x);
        self.push(value, req, Op::Rsqrt(x))
    }

    /// Elementwise `max(x, floor)`; gradient passes where `x >= floor`.
    pub fn clamp_min(&mut self, x: TensorId, floor: f64) -> TensorId {
        let value = self.value(x).mapv(|v| v.max(floor));
        let req = self.unary_requires(x);
        self.push(value, req, Op::ClampMin(x, floor))
    }

    /// Main diagonal of a square matrix as an `n x 1` column.
    pub fn diag(&mut self, x: TensorId) -> Result<TensorId> {
        let v = self.value(x);
        let (r, c) = v.dim();
        if r != c {
            return Err(shape_err("diag", format!("({r}, {c}) not square")));
        }
        let mut out = Array2::zeros((r, 1));
        for i in 0..r {
            out[[i, 0]] = v[[i, i]];
        }
        let req = self.unary_requires(x);
        Ok(self.push(out, req, Op::Diag(x)))
    }

    /// Zero every stored gradient.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Gradients accumulate additively into `grad` slots: a tensor feeding
    /// several consumers receives the sum of their contributions, and
    /// calling `backward` twice without [`Tape::zero_grads`] doubles every
    /// gradient.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a 1x1 loss, got {:?}",
                self.value(loss).dim()
            )));
        }
        let n = self.nodes.len();
        let mut adjoint: Vec<Option<Array2<f64>>> = vec![None; n];
        adjoint[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for id in (0..=loss.0).rev() {
            let g = match adjoint[id].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut adjoint);
            match &mut self.nodes[id].grad {
                Some(acc) => *acc += &g,
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn accumulate(adjoint: &mut [Option<Array2<f64>>], t: TensorId, g: Array2<f64>) {
        match &mut adjoint[t.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, id: usize, g: &Array2<f64>, adjoint: &mut [Option<Array2<f64>>]) {
        let needs = |t: TensorId| self.nodes[t.0].requires_grad;
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                if needs(*a) {
                    let ga = g.dot(&self.value(*b).t());
                    Self::accumulate(adjoint, *a, ga);
                }
                if needs(*b) {
                    let gb = self.value(*a).t().dot(g);
                    Self::accumulate(adjoint, *b, gb);
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    Self::accumulate(adjoint, *a, reduce_to_shape(g, self.value(*a).dim()));
                }
                if needs(*b) {
                    Self::accumulate(adjoint, *b, reduce_to_shape(g, self.value(*b).dim()));
                }
            }
            Op::Mul(a, b) => {
                let out = g.dim();
                if needs(*a) {
                    let gb = broadcast_apply(g, self.value(*b), out, |x, y| x * y);
                    Self::accumulate(adjoint, *a, reduce_to_shape(&gb, self.value(*a).dim()));
                }
                if needs(*b) {
                    let ga = broadcast_apply(g, self.value(*a), out, |x, y| x * y);
                    Self::accumulate(adjoint, *b, reduce_to_shape(&ga, self.value(*b).dim()));
                }
            }
            Op::Div(a, b) => {
                let out = g.dim();
                if needs(*a) {
                    let ga = broadcast_apply(g, self.value(*b), out, |x, y| x / y);
                    Self::accumulate(adjoint, *a, reduce_to_shape(&ga, self.value(*a).dim()));
                }
                if needs(*b) {
                    let num = broadcast_apply(g, self.value(*a), out, |x, y| x * y);
                    let gb = broadcast_apply(&num, self.value(*b), out, |x, y| -x / (y * y));
                    Self::accumulate(adjoint, *b, reduce_to_shape(&gb, self.value(*b).dim()));
                }
            }
            Op::Relu(x) => {
                if needs(*x) {
                    let mask = self.value(*x).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    Self::accumulate(adjoint, *x, g * &mask);
                }
            }
            Op::RowSoftmax(x) => {
                if needs(*x) {
                    // Jacobian-vector product per row: p * (g - <g, p>)
                    let p = &self.nodes[id].value;
                    let mut gx = Array2::zeros(p.dim());
                    for i in 0..p.nrows() {
                        let dot: f64 = g
                            .row(i)
                            .iter()
                            .zip(p.row(i).iter())
                            .map(|(&gi, &pi)| gi * pi)
                            .sum();
                        for j in 0..p.ncols() {
                            gx[[i, j]] = p[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    Self::accumulate(adjoint, *x, gx);
                }
            }
            Op::RowLogSumExp(x) => {
                if needs(*x) {
                    let v = self.value(*x);
                    let mut gx = Array2::zeros(v.dim());
                    for i in 0..v.nrows() {
                        let max = v.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = v.row(i).iter().map(|&t| (t - max).exp()).collect();
                        let sum: f64 = exps.iter().sum();
                        for j in 0..v.ncols() {
                            gx[[i, j]] = g[[i, 0]] * exps[j] / sum;
                        }
                    }
                    Self::accumulate(adjoint, *x, gx);
                }
            }
            Op::Exp(x) => {
                if needs(*x) {
                    Self::accumulate(adjoint, *x, g * &self.nodes[id].value);
                }
            }
            Op::Log(x) => {
                if needs(*x) {
                    Self::accumulate(adjoint, *x, g / self.value(*x));
                }
            }
            Op::Neg(x) => {
                if needs(*x) {
                    Self::accumulate(adjoint, *x, g.mapv(|v| -v));
                }
            }
            Op::SumAll(x) => {
                if needs(*x) {
                    let gx = Array2::from_elem(self.value(*x).dim(), g[[0, 0]]);
                    Self::accumulate(adjoint, *x, gx);
                }
            }
            Op::MeanAll(x) => {
                if needs(*x) {
                    let dim = self.value(*x).dim();
                    let gx = Array2::from_elem(dim, g[[0, 0]] / (dim.0 * dim.1) as f64);
                    Self::accumulate(adjoint, *x, gx);
                }
            }
            Op::RowSum(x) => {
                if needs(*x) {
                    let dim = self.value(*x).dim();
                    let gx = Array2::from_shape_fn(dim, |(i, _)| g[[i, 0]]);
                    Self::accumulate(adjoint, *x, gx);
                }
            }
            Op::Transpose(x) => {
                if needs(*x) {
                    Self::accumulate(adjoint, *x, g.t().to_owned());
                }
            }
            Op::L2NormRows(x) => {
                if needs(*x) {
                    let v = self.value(*x);
                    let norms = &self.nodes[id].value;
                    let gx = Array2::from_shape_fn(v.dim(), |(i, j)| {
                        if norms[[i, 0]] > 0.0 {
                            g[[i, 0]] * v[[i, j]] / norms[[i, 0]]
                        } else {
                            0.0
                        }
                    });
                    Self::accumulate(adjoint, *x, gx);
                }
            }
            Op::SquaredFrobenius(x) => {
                if needs(*x) {
                    let gx = self.value(*x).mapv(|v| 2.0 * g[[0, 0]] * v);
                    Self::accumulate(adjoint, *x, gx);
                }
            }
            Op::ScalarMul(x, c) => {
                if needs(*x) {
                    Self::accumulate(adjoint, *x, g.mapv(|v| c * v));
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).nrows();
                    if needs(p) {
                        let slice = g
                            .slice(ndarray::s![offset..offset + rows, ..])
                            .to_owned();
                        Self::accumulate(adjoint, p, slice);
                    }
                    offset += rows;
                }
            }
            Op::GatherRows(x, indices) => {
                if needs(*x) {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (src, &dst) in indices.iter().enumerate() {
                        let mut row = gx.row_mut(dst);
                        row += &g.row(src);
                    }
                    Self::accumulate(adjoint, *x, gx);
                }
            }
            Op::Rsqrt(x) => {
                if needs(*x) {
                    // d/dx x^(-1/2) = -1/2 x^(-3/2) = -out^3 / 2
                    let out = &self.nodes[id].value;
                    let gx = Array2::from_shape_fn(out.dim(), |(i, j)| {
                        -0.5 * out[[i, j]].powi(3) * g[[i, j]]
                    });
                    Self::accumulate(adjoint, *x, gx);
                }
            }
            Op::ClampMin(x, floor) => {
                if needs(*x) {
                    let mask = self.value(*x).mapv(|v| if v >= *floor { 1.0 } else { 0.0 });
                    Self::accumulate(adjoint, *x, g * &mask);
                }
            }
            Op::Diag(x) => {
                if needs(*x) {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for i in 0..gx.nrows() {
                        gx[[i, i]] = g[[i, 0]];
                    }
                    Self::accumulate(adjoint, *x, gx);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn relu_forward() {
        let mut t = Tape::new();
        let x = t.constant(array![[-1.0, 2.0]]);
        let y = t.relu(x);
        assert_eq!(t.value(y), &array![[0.0, 2.0]]);
    }

    #[test]
    fn row_softmax_symmetry() {
        let mut t = Tape::new();
        let x = t.constant(array![[0.0, 0.0]]);
        let y = t.row_softmax(x);
        assert_eq!(t.value(y), &array![[0.5, 0.5]]);
    }

    #[test]
    fn matmul_forward() {
        let mut t = Tape::new();
        let a = t.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = t.constant(array![[1.0], [1.0]]);
        let y = t.matmul(a, b).unwrap();
        assert_eq!(t.value(y), &array![[3.0], [7.0]]);
    }

    #[test]
    fn matmul_shape_error_names_op() {
        let mut t = Tape::new();
        let a = t.constant(Array2::zeros((2, 3)));
        let b = t.constant(Array2::zeros((2, 3)));
        let err = t.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"));
    }

    #[test]
    fn backward_sum_is_ones() {
        let mut t = Tape::new();
        let x = t.parameter(array![[1.0, 2.0], [3.0, 4.0]]);
        let loss = t.sum_all(x);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &Array2::from_elem((2, 2), 1.0));
    }

    #[test]
    fn backward_squared_frobenius() {
        let mut t = Tape::new();
        let x = t.parameter(array![[3.0]]);
        let loss = t.squared_frobenius(x);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &array![[6.0]]);
    }

    #[test]
    fn backward_twice_doubles() {
        let mut t = Tape::new();
        let x = t.parameter(array![[2.0]]);
        let loss = t.squared_frobenius(x);
        t.backward(loss).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &array![[8.0]]);
        t.zero_grads();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &array![[4.0]]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::new();
        let x = t.parameter(array![[1.0, 2.0]]);
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn gradients_accumulate_over_consumers() {
        // loss = sum(x) + 2 * sum(x) -> grad = 3
        let mut t = Tape::new();
        let x = t.parameter(array![[1.0]]);
        let s1 = t.sum_all(x);
        let s2 = t.sum_all(x);
        let s2 = t.scalar_mul(s2, 2.0);
        let loss = t.add(s1, s2).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &array![[3.0]]);
    }

    #[test]
    fn backward_additivity_over_independent_subgraphs() {
        let xv = array![[1.5, -0.5]];
        let yv = array![[2.0, 0.25]];

        let run = |with_both: bool| -> (Array2<f64>, Option<Array2<f64>>) {
            let mut t = Tape::new();
            let x = t.parameter(xv.clone());
            let lx = t.squared_frobenius(x);
            if with_both {
                let y = t.parameter(yv.clone());
                let ly = t.squared_frobenius(y);
                let loss = t.add(lx, ly).unwrap();
                t.backward(loss).unwrap();
                (
                    t.grad(x).unwrap().clone(),
                    Some(t.grad(y).unwrap().clone()),
                )
            } else {
                t.backward(lx).unwrap();
                (t.grad(x).unwrap().clone(), None)
            }
        };

        let (gx_joint, gy_joint) = run(true);
        let (gx_alone, _) = run(false);
        assert_eq!(gx_joint, gx_alone);
        assert_eq!(gy_joint.unwrap(), yv.mapv(|v| 2.0 * v));
    }

    #[test]
    fn broadcast_add_bias_row() {
        let mut t = Tape::new();
        let x = t.parameter(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = t.parameter(array![[10.0, 20.0]]);
        let y = t.add(x, b).unwrap();
        assert_eq!(t.value(y), &array![[11.0, 22.0], [13.0, 24.0]]);
        let loss = t.sum_all(y);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(b).unwrap(), &array![[2.0, 2.0]]);
    }

    #[test]
    fn gather_rows_accumulates_duplicates() {
        let mut t = Tape::new();
        let x = t.parameter(array![[1.0], [2.0]]);
        let y = t.gather_rows(x, &[0, 0, 1]).unwrap();
        let loss = t.sum_all(y);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &array![[2.0], [1.0]]);
    }

    #[test]
    fn concat_rows_splits_gradient() {
        let mut t = Tape::new();
        let a = t.parameter(array![[1.0, 1.0]]);
        let b = t.parameter(array![[2.0, 2.0]]);
        let c = t.concat_rows(&[a, b]).unwrap();
        let w = t.constant(array![[1.0], [3.0]]);
        let y = t.matmul(c, w).unwrap();
        let loss = t.sum_all(y);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(a).unwrap(), &array![[1.0, 3.0]]);
        assert_eq!(t.grad(b).unwrap(), &array![[1.0, 3.0]]);
    }
}
