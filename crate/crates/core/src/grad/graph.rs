use std::cell::{Cell, Ref, RefCell};
use std::collections::VecDeque;

use super::{GroupSet, Matrix, ParamGrads, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::{log_sigmoid, sigmoid, softplus, Scalar};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of an elementwise binary op is broadcast.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Div(Var, Var, Bcast),
    Neg(Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    SelectCols(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    RowDot(Var, Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    LogSigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    RowNorm(Var),
    NormalizeRows(Var),
    LogSumExpRows(Var),
    StopGradient,
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Matrix<T>,
    requires_grad: bool,
}

thread_local! {
    static FLIP_LOG_SIGMOID_GRAD: Cell<bool> = const { Cell::new(false) };
}

/// Mutation hook for the verification harness: flips the sign of the
/// log-sigmoid backward rule on the current thread.
#[doc(hidden)]
pub fn inject_log_sigmoid_grad_flip(enabled: bool) {
    FLIP_LOG_SIGMOID_GRAD.with(|c| c.set(enabled));
}

/// Append-only reverse-mode tape over dense matrices.
///
/// A graph is built for one forward pass, differentiated once with
/// [`Graph::backward`] and then dropped. Parameters bound from a
/// [`ParamStore`] require gradients only when their group is in the
/// graph's trainable set; otherwise they enter as constants.
pub struct Graph<'s, T: Scalar> {
    store: Option<&'s ParamStore<T>>,
    trainable: GroupSet,
    nodes: RefCell<Vec<Node<T>>>,
    bindings: RefCell<Vec<(Var, ParamId)>>,
    grads: RefCell<Vec<Option<Matrix<T>>>>,
    backward_done: Cell<bool>,
    frozen_stops: RefCell<Option<VecDeque<Matrix<T>>>>,
}

impl<T: Scalar> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s, T: Scalar> Graph<'s, T> {
    /// A graph without parameters; leaves are created explicitly.
    pub fn new() -> Self {
        Self {
            store: None,
            trainable: GroupSet::NONE,
            nodes: RefCell::new(Vec::new()),
            bindings: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            backward_done: Cell::new(false),
            frozen_stops: RefCell::new(None),
        }
    }

    pub fn with_params(store: &'s ParamStore<T>, trainable: GroupSet) -> Self {
        Self {
            store: Some(store),
            trainable,
            ..Self::new()
        }
    }

    /// Replays `values` as the outputs of the stop-gradient nodes, in
    /// creation order, instead of their inputs. Finite differences on such
    /// a graph hold every stopped quantity at its recorded value, which is
    /// the derivative that stop-gradients define.
    pub fn with_frozen_stops(self, values: Vec<Matrix<T>>) -> Self {
        *self.frozen_stops.borrow_mut() = Some(values.into());
        self
    }

    /// Outputs of every stop-gradient node, in creation order.
    pub fn stopped_values(&self) -> Vec<Matrix<T>> {
        self.nodes
            .borrow()
            .iter()
            .filter(|n| matches!(n.op, Op::StopGradient))
            .map(|n| n.value.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op<T>, value: Matrix<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.shape()
    }

    /// Records a leaf holding `value`.
    pub fn leaf(&self, value: Matrix<T>, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    /// A constant leaf (never receives a gradient).
    pub fn constant(&self, value: Matrix<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar_const(&self, value: T) -> Var {
        self.constant(Matrix::scalar(value))
    }

    /// Binds a stored parameter. It requires a gradient only if its group
    /// is trainable in this graph.
    pub fn param(&self, id: ParamId) -> Var {
        let store = self
            .store
            .expect("graph was created without a parameter store");
        let p = store.get(id);
        let trainable = self.trainable.contains(p.group);
        let v = self.leaf(p.value.clone(), trainable);
        if trainable {
            self.bindings.borrow_mut().push((v, id));
        }
        v
    }

    pub fn value(&self, v: Var) -> Ref<'_, Matrix<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    /// Entry of a 1x1 node.
    pub fn item(&self, v: Var) -> Result<T> {
        self.value(v).item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn unary(&self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(op, value, rg)
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(Bcast::Same)
        } else if sb == (1, 1) {
            Ok(Bcast::Scalar)
        } else if sb == (1, sa.1) {
            Ok(Bcast::Row)
        } else if sb == (sa.0, 1) {
            Ok(Bcast::Col)
        } else {
            Err(Error::Dimension { op, lhs: sa, rhs: sb })
        }
    }

    fn binary(&self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Bcast, Matrix<T>)> {
        let bc = self.bcast(name, a, b)?;
        let nodes = self.nodes.borrow();
        let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
        let out = match bc {
            Bcast::Same => x.zip_map(y, f),
            Bcast::Scalar => {
                let s = y.get(0, 0);
                x.map(|v| f(v, s))
            }
            Bcast::Row => Matrix::from_fn(x.rows(), x.cols(), |i, j| f(x.get(i, j), y.get(0, j))),
            Bcast::Col => Matrix::from_fn(x.rows(), x.cols(), |i, j| f(x.get(i, j), y.get(i, 0))),
        };
        Ok((bc, out))
    }

    /// `a + b`; `b` may be a scalar, a row vector or a column vector.
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (bc, v) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b, bc), v, rg))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (bc, v) = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub(a, b, bc), v, rg))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (bc, v) = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b, bc), v, rg))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        let (bc, v) = self.binary("div", a, b, |x, y| x / y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Div(a, b, bc), v, rg))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    /// Multiplication by a constant.
    pub fn scale(&self, a: Var, c: T) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&self, a: Var, c: T) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.matmul(&nodes[b.0].value)?
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), v, rg))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(Op::Transpose(a), v, rg)
    }

    /// Stacks matrices vertically.
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let cols = parts.first().map_or(0, |p| nodes[p.0].value.cols());
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                let m = &nodes[p.0].value;
                if m.cols() != cols {
                    return Err(Error::Dimension {
                        op: "concat_rows",
                        lhs: (rows, cols),
                        rhs: m.shape(),
                    });
                }
                rows += m.rows();
                data.extend_from_slice(m.as_slice());
            }
            Matrix::from_vec(rows, cols, data)?
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::ConcatRows(parts.to_vec()), v, rg))
    }

    /// Places matrices side by side.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let rows = parts.first().map_or(0, |p| nodes[p.0].value.rows());
            let mut cols = 0;
            for p in parts {
                let m = &nodes[p.0].value;
                if m.rows() != rows {
                    return Err(Error::Dimension {
                        op: "concat_cols",
                        lhs: (rows, cols),
                        rhs: m.shape(),
                    });
                }
                cols += m.cols();
            }
            let mut out = Matrix::zeros(rows, cols);
            for i in 0..rows {
                let mut off = 0;
                for p in parts {
                    let m = &nodes[p.0].value;
                    out.row_mut(i)[off..off + m.cols()].copy_from_slice(m.row(i));
                    off += m.cols();
                }
            }
            out
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), v, rg))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = {
            let m = self.value(a);
            if start > end || end > m.rows() {
                return Err(Error::Index {
                    what: "slice_rows end",
                    index: end,
                    bound: m.rows(),
                });
            }
            let c = m.cols();
            Matrix::from_vec(end - start, c, m.as_slice()[start * c..end * c].to_vec())?
        };
        let rg = self.rg(a);
        Ok(self.push(Op::SliceRows(a, start), v, rg))
    }

    /// Row `idx[i]` of `table` becomes row `i` of the output.
    pub fn gather_rows(&self, table: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(table).select_rows(idx)?;
        let rg = self.rg(table);
        Ok(self.push(Op::GatherRows(table, idx.to_vec()), v, rg))
    }

    /// Column vector with entries `a[i, idx[i]]`.
    pub fn select_cols(&self, a: Var, idx: &[usize]) -> Result<Var> {
        let v = {
            let m = self.value(a);
            if idx.len() != m.rows() {
                return Err(Error::Dimension {
                    op: "select_cols",
                    lhs: m.shape(),
                    rhs: (idx.len(), 1),
                });
            }
            let mut out = Matrix::zeros(m.rows(), 1);
            for (i, &j) in idx.iter().enumerate() {
                if j >= m.cols() {
                    return Err(Error::Index {
                        what: "select_cols column",
                        index: j,
                        bound: m.cols(),
                    });
                }
                out.set(i, 0, m.get(i, j));
            }
            out
        };
        let rg = self.rg(a);
        Ok(self.push(Op::SelectCols(a, idx.to_vec()), v, rg))
    }

    pub fn sum(&self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(Op::Sum(a), v, rg)
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let v = {
            let m = self.value(a);
            if m.is_empty() {
                return Err(Error::contract("mean of an empty tensor"));
            }
            Matrix::scalar(m.sum() / T::of(m.len() as f64))
        };
        let rg = self.rg(a);
        Ok(self.push(Op::Mean(a), v, rg))
    }

    /// Per-row sums as a column vector.
    pub fn row_sum(&self, a: Var) -> Var {
        let v = {
            let m = self.value(a);
            Matrix::from_fn(m.rows(), 1, |i, _| m.row(i).iter().copied().sum())
        };
        let rg = self.rg(a);
        self.push(Op::RowSum(a), v, rg)
    }

    /// Row-wise inner product of equally shaped matrices.
    pub fn row_dot(&self, a: Var, b: Var) -> Result<Var> {
        let v = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if x.shape() != y.shape() {
                return Err(Error::Dimension {
                    op: "row_dot",
                    lhs: x.shape(),
                    rhs: y.shape(),
                });
            }
            Matrix::from_fn(x.rows(), 1, |i, _| {
                x.row(i).iter().zip(y.row(i)).map(|(&p, &q)| p * q).sum()
            })
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::RowDot(a, b), v, rg))
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x < T::zero() { T::zero() } else { x })
    }

    pub fn leaky_relu(&self, a: Var, slope: T) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > T::zero() { x } else { x * slope })
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn log_sigmoid(&self, a: Var) -> Var {
        self.unary(a, Op::LogSigmoid(a), log_sigmoid)
    }

    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| x.ln())
    }

    /// Euclidean norm of each row.
    pub fn row_norm(&self, a: Var) -> Var {
        let v = {
            let m = self.value(a);
            Matrix::from_fn(m.rows(), 1, |i, _| {
                m.row(i).iter().map(|&x| x * x).sum::<T>().sqrt()
            })
        };
        let rg = self.rg(a);
        self.push(Op::RowNorm(a), v, rg)
    }

    /// Scales every row to unit Euclidean norm. Rows with norm below
    /// 1e-12 are rejected.
    pub fn normalize_rows(&self, a: Var) -> Result<Var> {
        let v = {
            let m = self.value(a);
            let mut out = m.clone();
            for i in 0..m.rows() {
                let n = m.row(i).iter().map(|&x| x * x).sum::<T>().sqrt();
                if !(n >= T::of(1e-12)) {
                    return Err(Error::Degenerate {
                        op: "normalize_rows",
                        norm: n.as_f64(),
                    });
                }
                for x in out.row_mut(i) {
                    *x /= n;
                }
            }
            out
        };
        let rg = self.rg(a);
        Ok(self.push(Op::NormalizeRows(a), v, rg))
    }

    /// `log(sum_j exp(a[i, j]))` per row, computed with the max shift.
    pub fn log_sum_exp_rows(&self, a: Var) -> Var {
        let v = {
            let m = self.value(a);
            Matrix::from_fn(m.rows(), 1, |i, _| {
                let r = m.row(i);
                let mx = r.iter().copied().fold(T::neg_infinity(), T::max);
                mx + r.iter().map(|&x| (x - mx).exp()).sum::<T>().ln()
            })
        };
        let rg = self.rg(a);
        self.push(Op::LogSumExpRows(a), v, rg)
    }

    /// Identity forward; blocks every gradient.
    ///
    /// # Panics
    /// On a graph built with [`Graph::with_frozen_stops`], if the replayed
    /// values run out or change shape.
    pub fn stop_gradient(&self, a: Var) -> Var {
        let v = match self.frozen_stops.borrow_mut().as_mut() {
            Some(queue) => {
                let v = queue.pop_front().expect("more stop-gradients than frozen values");
                assert_eq!(v.shape(), self.shape(a), "frozen stop-gradient changed shape");
                v
            }
            None => self.value(a).clone(),
        };
        self.push(Op::StopGradient, v, false)
    }

    /// Reverse pass from a 1x1 `loss`. Returns the gradients of every
    /// bound trainable parameter reached by the loss.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads<T>> {
        if self.backward_done.get() {
            return Err(Error::contract("backward already ran on this graph"));
        }
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.0].value.shape();
        if shape != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a 1x1 loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        self.backward_done.set(true);
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(T::one()));
        let flip = FLIP_LOG_SIGMOID_GRAD.with(|c| c.get());

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            propagate(&nodes, node, &g, &mut grads, flip);
            grads[idx] = Some(g);
        }

        let mut out = ParamGrads::new();
        for &(v, id) in self.bindings.borrow().iter() {
            if let Some(g) = &grads[v.0] {
                out.accumulate(id, g);
            }
        }
        *self.grads.borrow_mut() = grads;
        Ok(out)
    }

    /// Gradient of the last backward pass with respect to `v`, if `v` was
    /// reached and requires a gradient.
    pub fn grad(&self, v: Var) -> Option<Matrix<T>> {
        if !self.rg(v) {
            return None;
        }
        self.grads.borrow().get(v.0).cloned().flatten()
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Matrix<T>>], nodes: &[Node<T>], target: Var, g: Matrix<T>) {
    if !nodes[target.0].requires_grad {
        return;
    }
    match &mut grads[target.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Sums `g` down to the shape of a broadcast right operand.
fn reduce_bcast<T: Scalar>(g: &Matrix<T>, bc: Bcast) -> Matrix<T> {
    match bc {
        Bcast::Same => g.clone(),
        Bcast::Scalar => Matrix::scalar(g.sum()),
        Bcast::Row => {
            let mut out = Matrix::zeros(1, g.cols());
            for i in 0..g.rows() {
                for (o, &x) in out.as_mut_slice().iter_mut().zip(g.row(i)) {
                    *o += x;
                }
            }
            out
        }
        Bcast::Col => Matrix::from_fn(g.rows(), 1, |i, _| g.row(i).iter().copied().sum()),
    }
}

/// Value of the broadcast right operand at `(i, j)`.
#[inline]
fn at<T: Scalar>(m: &Matrix<T>, bc: Bcast, i: usize, j: usize) -> T {
    match bc {
        Bcast::Same => m.get(i, j),
        Bcast::Scalar => m.get(0, 0),
        Bcast::Row => m.get(0, j),
        Bcast::Col => m.get(i, 0),
    }
}

fn propagate<T: Scalar>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &Matrix<T>,
    grads: &mut [Option<Matrix<T>>],
    flip_log_sigmoid: bool,
) {
    let val = |v: Var| &nodes[v.0].value;
    let rg = |v: Var| nodes[v.0].requires_grad;
    let y = &node.value;
    match &node.op {
        Op::Leaf | Op::StopGradient => {}
        Op::Add(a, b, bc) => {
            accumulate(grads, nodes, *a, g.clone());
            if rg(*b) {
                accumulate(grads, nodes, *b, reduce_bcast(g, *bc));
            }
        }
        Op::Sub(a, b, bc) => {
            accumulate(grads, nodes, *a, g.clone());
            if rg(*b) {
                accumulate(grads, nodes, *b, reduce_bcast(&g.map(|x| -x), *bc));
            }
        }
        Op::Mul(a, b, bc) => {
            let (x, w) = (val(*a), val(*b));
            if rg(*a) {
                let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * at(w, *bc, i, j));
                accumulate(grads, nodes, *a, ga);
            }
            if rg(*b) {
                let full = g.zip_map(x, |p, q| p * q);
                accumulate(grads, nodes, *b, reduce_bcast(&full, *bc));
            }
        }
        Op::Div(a, b, bc) => {
            let (x, w) = (val(*a), val(*b));
            if rg(*a) {
                let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) / at(w, *bc, i, j));
                accumulate(grads, nodes, *a, ga);
            }
            if rg(*b) {
                let full = Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                    let d = at(w, *bc, i, j);
                    -g.get(i, j) * x.get(i, j) / (d * d)
                });
                accumulate(grads, nodes, *b, reduce_bcast(&full, *bc));
            }
        }
        Op::Neg(a) => accumulate(grads, nodes, *a, g.map(|x| -x)),
        Op::Scale(a, c) => {
            let c = *c;
            accumulate(grads, nodes, *a, g.map(|x| x * c));
        }
        Op::AddScalar(a) => accumulate(grads, nodes, *a, g.clone()),
        Op::MatMul(a, b) => {
            if rg(*a) {
                let ga = g.matmul_t(false, val(*b), true).expect("shapes fixed in forward");
                accumulate(grads, nodes, *a, ga);
            }
            if rg(*b) {
                let gb = val(*a).matmul_t(true, g, false).expect("shapes fixed in forward");
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Transpose(a) => accumulate(grads, nodes, *a, g.transpose()),
        Op::ConcatRows(parts) => {
            let c = g.cols();
            let mut off = 0;
            for p in parts {
                let r = val(*p).rows();
                if rg(*p) {
                    let part = Matrix::from_vec(r, c, g.as_slice()[off * c..(off + r) * c].to_vec())
                        .expect("row block");
                    accumulate(grads, nodes, *p, part);
                }
                off += r;
            }
        }
        Op::ConcatCols(parts) => {
            let mut off = 0;
            for p in parts {
                let c = val(*p).cols();
                if rg(*p) {
                    let part = Matrix::from_fn(g.rows(), c, |i, j| g.get(i, off + j));
                    accumulate(grads, nodes, *p, part);
                }
                off += c;
            }
        }
        Op::SliceRows(a, start) => {
            let src = val(*a);
            let mut ga = Matrix::zeros(src.rows(), src.cols());
            let c = src.cols();
            ga.as_mut_slice()[start * c..start * c + g.len()].copy_from_slice(g.as_slice());
            accumulate(grads, nodes, *a, ga);
        }
        Op::GatherRows(table, idx) => {
            let t = val(*table);
            let mut gt = Matrix::zeros(t.rows(), t.cols());
            for (i, &r) in idx.iter().enumerate() {
                for (o, &x) in gt.row_mut(r).iter_mut().zip(g.row(i)) {
                    *o += x;
                }
            }
            accumulate(grads, nodes, *table, gt);
        }
        Op::SelectCols(a, idx) => {
            let m = val(*a);
            let mut ga = Matrix::zeros(m.rows(), m.cols());
            for (i, &j) in idx.iter().enumerate() {
                ga.set(i, j, g.get(i, 0));
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::Sum(a) => {
            let s = val(*a).shape();
            accumulate(grads, nodes, *a, Matrix::filled(s.0, s.1, g.get(0, 0)));
        }
        Op::Mean(a) => {
            let m = val(*a);
            let v = g.get(0, 0) / T::of(m.len() as f64);
            accumulate(grads, nodes, *a, Matrix::filled(m.rows(), m.cols(), v));
        }
        Op::RowSum(a) => {
            let s = val(*a).shape();
            accumulate(grads, nodes, *a, Matrix::from_fn(s.0, s.1, |i, _| g.get(i, 0)));
        }
        Op::RowDot(a, b) => {
            let (x, w) = (val(*a), val(*b));
            if rg(*a) {
                let ga = Matrix::from_fn(x.rows(), x.cols(), |i, j| g.get(i, 0) * w.get(i, j));
                accumulate(grads, nodes, *a, ga);
            }
            if rg(*b) {
                let gb = Matrix::from_fn(x.rows(), x.cols(), |i, j| g.get(i, 0) * x.get(i, j));
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Relu(a) => {
            let ga = g.zip_map(val(*a), |gi, x| if x > T::zero() { gi } else { T::zero() });
            accumulate(grads, nodes, *a, ga);
        }
        Op::LeakyRelu(a, slope) => {
            let s = *slope;
            let ga = g.zip_map(val(*a), |gi, x| if x > T::zero() { gi } else { gi * s });
            accumulate(grads, nodes, *a, ga);
        }
        Op::Sigmoid(a) => {
            let ga = g.zip_map(y, |gi, s| gi * s * (T::one() - s));
            accumulate(grads, nodes, *a, ga);
        }
        Op::LogSigmoid(a) => {
            // d/dt log(sigmoid(t)) = sigmoid(-t)
            let sign = if flip_log_sigmoid { -T::one() } else { T::one() };
            let ga = g.zip_map(val(*a), |gi, x| sign * gi * sigmoid(-x));
            accumulate(grads, nodes, *a, ga);
        }
        Op::Softplus(a) => {
            let ga = g.zip_map(val(*a), |gi, x| gi * sigmoid(x));
            accumulate(grads, nodes, *a, ga);
        }
        Op::Exp(a) => accumulate(grads, nodes, *a, g.zip_map(y, |gi, e| gi * e)),
        Op::Log(a) => accumulate(grads, nodes, *a, g.zip_map(val(*a), |gi, x| gi / x)),
        Op::RowNorm(a) => {
            let x = val(*a);
            let ga = Matrix::from_fn(x.rows(), x.cols(), |i, j| {
                let n = y.get(i, 0);
                if n > T::zero() {
                    g.get(i, 0) * x.get(i, j) / n
                } else {
                    T::zero()
                }
            });
            accumulate(grads, nodes, *a, ga);
        }
        Op::NormalizeRows(a) => {
            // y = x / |x|;  dx = (g - y <y, g>) / |x|
            let x = val(*a);
            let mut ga = Matrix::zeros(x.rows(), x.cols());
            for i in 0..x.rows() {
                let n = x.row(i).iter().map(|&v| v * v).sum::<T>().sqrt();
                let yg: T = y.row(i).iter().zip(g.row(i)).map(|(&p, &q)| p * q).sum();
                for ((o, &yi), &gi) in ga.row_mut(i).iter_mut().zip(y.row(i)).zip(g.row(i)) {
                    *o = (gi - yi * yg) / n;
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::LogSumExpRows(a) => {
            let x = val(*a);
            let ga = Matrix::from_fn(x.rows(), x.cols(), |i, j| {
                g.get(i, 0) * (x.get(i, j) - y.get(i, 0)).exp()
            });
            accumulate(grads, nodes, *a, ga);
        }
    }
}
