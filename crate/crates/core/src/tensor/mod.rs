//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] owns every value produced during one forward pass. Leaves are
//! registered with [`Tape::param`] (gradient-tracked) or [`Tape::constant`]
//! (never tracked); every operation on a [`Tensor`] appends a node. Nodes are
//! appended in evaluation order, so walking node ids downwards from the loss
//! is a reverse topological order and each node is visited once.
//!
//! ```
//! use bargrain::tensor::{Matrix, Tape};
//!
//! let tape = Tape::new();
//! let w = tape.param(Matrix::from_rows(&[[1.0, -2.0]]).unwrap());
//! let loss = w.mul(w).unwrap().sum();
//! loss.backward().unwrap();
//! assert_eq!(w.grad().unwrap().as_slice(), &[2.0, -4.0]);
//! ```
//!
//! Gradients accumulate across `backward` calls on the same tape until
//! [`Tape::zero_grad`] is called.

mod matrix;

use std::cell::{Ref, RefCell};
use std::fmt;

pub use matrix::Matrix;

use crate::error::{Error, Result};

/// Keeps `logit` finite when a probability saturates to exactly 0 or 1.
const LOGIT_CLAMP: f64 = 1e-15;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Log(usize),
    Logit(usize),
    Powf(usize, f64),
    Transpose(usize),
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    ConcatCols(usize, usize),
    ConcatRows(usize, usize),
    PairConcat(usize),
    BceWithLogits(usize, f64),
}

struct Node {
    value: Matrix,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
}

/// Records one forward computation. Not `Sync`: build one tape per thread.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Gradient-tracked leaf.
    pub fn param(&self, value: Matrix) -> Tensor<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Untracked leaf: noise draws, fixed adjacencies, inputs.
    pub fn constant(&self, value: Matrix) -> Tensor<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&self, value: Matrix, requires_grad: bool) -> Tensor<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&self, value: Matrix, op: Op, requires_grad: bool) -> Tensor<'_> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        inner.grads.push(None);
        Tensor {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    fn backward_from(&self, root: usize) -> Result<()> {
        let adjoints = {
            let inner = self.inner.borrow();
            let nodes = &inner.nodes;
            if nodes[root].value.shape() != (1, 1) {
                return Err(Error::Contract(format!(
                    "backward needs a scalar, got shape {:?}",
                    nodes[root].value.shape()
                )));
            }
            let mut adj: Vec<Option<Matrix>> = vec![None; root + 1];
            adj[root] = Some(Matrix::scalar(1.0));
            for id in (0..=root).rev() {
                let node = &nodes[id];
                if !node.requires_grad {
                    continue;
                }
                let Some(g) = adj[id].take() else { continue };
                propagate(nodes, node, &g, &mut adj);
                adj[id] = Some(g);
            }
            adj
        };
        let mut inner = self.inner.borrow_mut();
        let Inner { nodes, grads } = &mut *inner;
        for (id, g) in adjoints.into_iter().enumerate() {
            if let Some(g) = g {
                if nodes[id].requires_grad {
                    match &mut grads[id] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adj: &mut [Option<Matrix>], nodes: &[Node], id: usize, g: Matrix) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut adj[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Pushes the adjoint `g` of `node` onto its inputs.
fn propagate(nodes: &[Node], node: &Node, g: &Matrix, adj: &mut [Option<Matrix>]) {
    let val = |id: usize| &nodes[id].value;
    match node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if nodes[a].requires_grad {
                accumulate(adj, nodes, a, g.matmul_t(val(b)));
            }
            if nodes[b].requires_grad {
                accumulate(adj, nodes, b, val(a).t_matmul(g));
            }
        }
        Op::Add(a, b) => {
            accumulate(adj, nodes, a, g.clone());
            accumulate(adj, nodes, b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(adj, nodes, a, g.clone());
            accumulate(adj, nodes, b, g.map(|x| -x));
        }
        Op::Mul(a, b) => {
            accumulate(adj, nodes, a, g.zip_map(val(b), |g, y| g * y));
            accumulate(adj, nodes, b, g.zip_map(val(a), |g, x| g * x));
        }
        Op::AddRow(a, b) => {
            accumulate(adj, nodes, a, g.clone());
            let mut gb = Matrix::zeros(1, g.cols());
            for i in 0..g.rows() {
                for (acc, x) in gb.as_mut_slice().iter_mut().zip(g.row(i)) {
                    *acc += x;
                }
            }
            accumulate(adj, nodes, b, gb);
        }
        Op::Scale(a, s) => accumulate(adj, nodes, a, g.map(|x| x * s)),
        Op::Relu(a) => {
            accumulate(
                adj,
                nodes,
                a,
                g.zip_map(val(a), |g, x| if x > 0.0 { g } else { 0.0 }),
            );
        }
        Op::Sigmoid(a) => {
            accumulate(adj, nodes, a, g.zip_map(&node.value, |g, s| g * s * (1.0 - s)));
        }
        Op::Log(a) => accumulate(adj, nodes, a, g.zip_map(val(a), |g, x| g / x)),
        Op::Logit(a) => {
            accumulate(
                adj,
                nodes,
                a,
                g.zip_map(val(a), |g, p| {
                    let p = p.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
                    g / (p * (1.0 - p))
                }),
            );
        }
        Op::Powf(a, p) => {
            accumulate(
                adj,
                nodes,
                a,
                g.zip_map(val(a), |g, x| g * p * x.powf(p - 1.0)),
            );
        }
        Op::Transpose(a) => accumulate(adj, nodes, a, g.transpose()),
        Op::Reshape(a) => {
            let (r, c) = val(a).shape();
            accumulate(adj, nodes, a, g.reshape(r, c).expect("reshape adjoint"));
        }
        Op::Sum(a) => {
            let (r, c) = val(a).shape();
            accumulate(adj, nodes, a, Matrix::filled(r, c, g.item()));
        }
        Op::Mean(a) => {
            let (r, c) = val(a).shape();
            let n = (r * c).max(1) as f64;
            accumulate(adj, nodes, a, Matrix::filled(r, c, g.item() / n));
        }
        Op::RowSum(a) => {
            let (r, c) = val(a).shape();
            accumulate(adj, nodes, a, Matrix::from_fn(r, c, |i, _| g[(i, 0)]));
        }
        Op::ConcatCols(a, b) => {
            let ca = val(a).cols();
            let cb = val(b).cols();
            let rows = g.rows();
            accumulate(adj, nodes, a, Matrix::from_fn(rows, ca, |i, j| g[(i, j)]));
            accumulate(adj, nodes, b, Matrix::from_fn(rows, cb, |i, j| g[(i, ca + j)]));
        }
        Op::ConcatRows(a, b) => {
            let ra = val(a).rows();
            let rb = val(b).rows();
            let cols = g.cols();
            accumulate(adj, nodes, a, Matrix::from_fn(ra, cols, |i, j| g[(i, j)]));
            accumulate(adj, nodes, b, Matrix::from_fn(rb, cols, |i, j| g[(ra + i, j)]));
        }
        Op::PairConcat(a) => {
            let (n, d) = val(a).shape();
            let mut ga = Matrix::zeros(n, d);
            for i in 0..n {
                for j in 0..n {
                    let gr = g.row(i * n + j);
                    for k in 0..d {
                        ga[(i, k)] += gr[k];
                        ga[(j, k)] += gr[d + k];
                    }
                }
            }
            accumulate(adj, nodes, a, ga);
        }
        Op::BceWithLogits(a, label) => {
            let z = val(a).item();
            accumulate(adj, nodes, a, Matrix::scalar(g.item() * (sigmoid(z) - label)));
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Tensor<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t> Tensor<'t> {
    pub fn value(&self) -> Ref<'t, Matrix> {
        Ref::map(self.tape.inner.borrow(), |inner| &inner.nodes[self.id].value)
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Accumulated gradient, `None` before any backward pass reached this node.
    pub fn grad(&self) -> Option<Matrix> {
        self.tape.inner.borrow().grads[self.id].clone()
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward_from(self.id)
    }

    fn same_tape(&self, other: &Tensor<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("tensors belong to different tapes".into()))
        }
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Matrix) -> Matrix) -> Tensor<'t> {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let node = &inner.nodes[self.id];
            (f(&node.value), node.requires_grad)
        };
        self.tape.push(value, op, rg)
    }

    fn binary(
        &self,
        other: Tensor<'t>,
        op: Op,
        f: impl FnOnce(&Matrix, &Matrix) -> Result<Matrix>,
    ) -> Result<Tensor<'t>> {
        self.same_tape(&other)?;
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let a = &inner.nodes[self.id];
            let b = &inner.nodes[other.id];
            (f(&a.value, &b.value)?, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(value, op, rg))
    }

    fn elementwise(
        &self,
        other: Tensor<'t>,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor<'t>> {
        self.binary(other, op, |a, b| {
            if a.shape() != b.shape() {
                return Err(Error::Dimension {
                    op: name,
                    left: a.shape(),
                    right: b.shape(),
                });
            }
            Ok(a.zip_map(b, f))
        })
    }

    pub fn matmul(&self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(other, Op::MatMul(self.id, other.id), |a, b| a.matmul(b))
    }

    pub fn add(&self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.elementwise(other, Op::Add(self.id, other.id), "add", |a, b| a + b)
    }

    pub fn sub(&self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.elementwise(other, Op::Sub(self.id, other.id), "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.elementwise(other, Op::Mul(self.id, other.id), "mul", |a, b| a * b)
    }

    /// Adds a `1×n` row to every row of an `m×n` tensor (bias add).
    pub fn add_row(&self, row: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(row, Op::AddRow(self.id, row.id), |a, b| {
            if b.rows() != 1 || b.cols() != a.cols() {
                return Err(Error::Dimension {
                    op: "add_row",
                    left: a.shape(),
                    right: b.shape(),
                });
            }
            let mut out = a.clone();
            for i in 0..out.rows() {
                for (o, x) in out.row_mut(i).iter_mut().zip(b.as_slice()) {
                    *o += x;
                }
            }
            Ok(out)
        })
    }

    pub fn scale(&self, factor: f64) -> Tensor<'t> {
        self.unary(Op::Scale(self.id, factor), |a| a.map(|x| x * factor))
    }

    pub fn relu(&self) -> Tensor<'t> {
        self.unary(Op::Relu(self.id), |a| a.map(|x| x.max(0.0)))
    }

    pub fn sigmoid(&self) -> Tensor<'t> {
        self.unary(Op::Sigmoid(self.id), |a| a.map(sigmoid))
    }

    pub fn ln(&self) -> Tensor<'t> {
        self.unary(Op::Log(self.id), |a| a.map(f64::ln))
    }

    /// Log-odds `ln(p / (1 - p))`, with `p` clamped to `[1e-15, 1 - 1e-15]`.
    pub fn logit(&self) -> Tensor<'t> {
        self.unary(Op::Logit(self.id), |a| {
            a.map(|p| {
                let p = p.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
                p.ln() - (1.0 - p).ln()
            })
        })
    }

    pub fn powf(&self, exponent: f64) -> Tensor<'t> {
        self.unary(Op::Powf(self.id, exponent), |a| a.map(|x| x.powf(exponent)))
    }

    pub fn transpose(&self) -> Tensor<'t> {
        self.unary(Op::Transpose(self.id), Matrix::transpose)
    }

    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Tensor<'t>> {
        let value = self.value().reshape(rows, cols)?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Reshape(self.id), rg))
    }

    pub fn sum(&self) -> Tensor<'t> {
        self.unary(Op::Sum(self.id), |a| Matrix::scalar(a.sum()))
    }

    pub fn mean(&self) -> Tensor<'t> {
        self.unary(Op::Mean(self.id), |a| {
            Matrix::scalar(a.sum() / a.len().max(1) as f64)
        })
    }

    /// `m×n → m×1` sums along each row.
    pub fn row_sum(&self) -> Tensor<'t> {
        self.unary(Op::RowSum(self.id), |a| {
            Matrix::from_fn(a.rows(), 1, |i, _| a.row(i).iter().sum())
        })
    }

    /// Horizontal join; row counts must match.
    pub fn concat_cols(&self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(other, Op::ConcatCols(self.id, other.id), |a, b| {
            if a.rows() != b.rows() {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: a.shape(),
                    right: b.shape(),
                });
            }
            let ca = a.cols();
            Ok(Matrix::from_fn(a.rows(), ca + b.cols(), |i, j| {
                if j < ca {
                    a[(i, j)]
                } else {
                    b[(i, j - ca)]
                }
            }))
        })
    }

    /// Vertical join; column counts must match.
    pub fn concat_rows(&self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(other, Op::ConcatRows(self.id, other.id), |a, b| {
            if a.cols() != b.cols() {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    left: a.shape(),
                    right: b.shape(),
                });
            }
            let ra = a.rows();
            Ok(Matrix::from_fn(ra + b.rows(), a.cols(), |i, j| {
                if i < ra {
                    a[(i, j)]
                } else {
                    b[(i - ra, j)]
                }
            }))
        })
    }

    /// `N×d → N²×2d`; row `i·N + j` is `[row_i ‖ row_j]`.
    pub fn pair_concat(&self) -> Tensor<'t> {
        self.unary(Op::PairConcat(self.id), |a| {
            let (n, d) = a.shape();
            let mut out = Matrix::zeros(n * n, 2 * d);
            for i in 0..n {
                for j in 0..n {
                    let r = out.row_mut(i * n + j);
                    r[..d].copy_from_slice(a.row(i));
                    r[d..].copy_from_slice(a.row(j));
                }
            }
            out
        })
    }

    /// Binary cross-entropy of a single logit against a 0/1 label, in the
    /// overflow-free form `max(z, 0) - z·y + ln(1 + e^-|z|)`.
    pub fn bce_with_logits(&self, label: f64) -> Result<Tensor<'t>> {
        if label != 0.0 && label != 1.0 {
            return Err(Error::Validation(format!("label must be 0 or 1, got {label}")));
        }
        if self.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "bce_with_logits needs a scalar logit, got {:?}",
                self.shape()
            )));
        }
        Ok(self.unary(Op::BceWithLogits(self.id, label), |a| {
            Matrix::scalar(bce_with_logits(a.item(), label))
        }))
    }
}

/// Scalar form of the stable binary cross-entropy.
pub fn bce_with_logits(z: f64, label: f64) -> f64 {
    z.max(0.0) - z * label + (-z.abs()).exp().ln_1p()
}
