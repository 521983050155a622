//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive as it is evaluated. [`Tape::backward`]
//! walks the record in reverse and accumulates vector-Jacobian products into
//! the leaves that were registered with [`Tape::param`].

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{EdgeIndex, Matrix, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.idx
    }
}

#[derive(Debug, Clone)]
enum Op {
    Param,
    Constant,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Affine { x: usize, scale: f64, shift: f64 },
    Relu(usize),
    Sigmoid(usize),
    RowSoftmax(usize),
    MeanRows(usize),
    SegmentMean { x: usize, offsets: Arc<Vec<usize>> },
    Sum(usize),
    AbsSum(usize),
    Pick { x: usize, row: usize, col: usize },
    NormalizeAdjacency(usize),
    ScatterSymmetric { weights: usize, graph: Arc<EdgeIndex> },
    Propagate { weights: usize, x: usize, graph: Arc<EdgeIndex> },
    SoftmaxCrossEntropy { logits: usize, targets: Arc<Vec<(usize, usize)>> },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match *self {
            Op::Param | Op::Constant => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b) => vec![a, b],
            Op::Affine { x, .. }
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::RowSoftmax(x)
            | Op::MeanRows(x)
            | Op::SegmentMean { x, .. }
            | Op::Sum(x)
            | Op::AbsSum(x)
            | Op::Pick { x, .. }
            | Op::NormalizeAdjacency(x) => vec![x],
            Op::ScatterSymmetric { weights, .. } => vec![weights],
            Op::Propagate { weights, x, .. } => vec![weights, x],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![logits],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
}

/// Ordered record of evaluated primitives.
#[derive(Debug, Clone)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every parameter leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for a parameter leaf; `None` for constants, foreign vars,
    /// or values the loss does not depend on.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.idx).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
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

    /// Registers a differentiable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(Op::Param, value, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn value(&self, var: Var) -> &Matrix {
        assert_eq!(var.tape, self.id, "var belongs to a different tape");
        &self.nodes[var.idx].value
    }

    fn push(&mut self, op: Op, value: Matrix, requires_grad: bool) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var { tape: self.id, idx }
    }

    fn check(&self, var: Var) -> Result<usize, TensorError> {
        if var.tape != self.id || var.idx >= self.nodes.len() {
            return Err(TensorError::Usage("variable is not recorded on this tape".into()));
        }
        Ok(var.idx)
    }

    fn record(&mut self, op: Op) -> Result<Var, TensorError> {
        let value = evaluate(&op, &self.nodes)?;
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(op, value, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let op = Op::MatMul(self.check(a)?, self.check(b)?);
        self.record(op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let op = Op::Add(self.check(a)?, self.check(b)?);
        self.record(op)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let op = Op::Sub(self.check(a)?, self.check(b)?);
        self.record(op)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let op = Op::Mul(self.check(a)?, self.check(b)?);
        self.record(op)
    }

    /// Adds a 1×c row to every row of `a` (bias).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let op = Op::AddRow(self.check(a)?, self.check(row)?);
        self.record(op)
    }

    /// Scales every row of `a` elementwise by a 1×c row (column mask).
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let op = Op::MulRow(self.check(a)?, self.check(row)?);
        self.record(op)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var, TensorError> {
        let op = Op::Affine {
            x: self.check(x)?,
            scale,
            shift,
        };
        self.record(op)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, TensorError> {
        self.affine(x, s, 0.0)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let op = Op::Relu(self.check(x)?);
        self.record(op)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        let op = Op::Sigmoid(self.check(x)?);
        self.record(op)
    }

    pub fn row_softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let op = Op::RowSoftmax(self.check(x)?);
        self.record(op)
    }

    /// Mean over rows (graph mean-pooling), 1×c.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let op = Op::MeanRows(self.check(x)?);
        self.record(op)
    }

    /// Row means of consecutive row blocks `offsets[g]..offsets[g+1]`.
    pub fn segment_mean(&mut self, x: Var, offsets: Arc<Vec<usize>>) -> Result<Var, TensorError> {
        let op = Op::SegmentMean {
            x: self.check(x)?,
            offsets,
        };
        self.record(op)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let op = Op::Sum(self.check(x)?);
        self.record(op)
    }

    /// ℓ₁ norm as a 1×1 value.
    pub fn abs_sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let op = Op::AbsSum(self.check(x)?);
        self.record(op)
    }

    /// Selects one entry as a 1×1 value.
    pub fn pick(&mut self, x: Var, row: usize, col: usize) -> Result<Var, TensorError> {
        let op = Op::Pick {
            x: self.check(x)?,
            row,
            col,
        };
        self.record(op)
    }

    pub fn normalize_adjacency(&mut self, a: Var) -> Result<Var, TensorError> {
        let op = Op::NormalizeAdjacency(self.check(a)?);
        self.record(op)
    }

    /// Expands per-edge weights (1×E) into a dense symmetric n×n matrix.
    pub fn scatter_symmetric(
        &mut self,
        weights: Var,
        graph: Arc<EdgeIndex>,
    ) -> Result<Var, TensorError> {
        let op = Op::ScatterSymmetric {
            weights: self.check(weights)?,
            graph,
        };
        self.record(op)
    }

    /// `Â · x` where Â is the self-loop normalized adjacency built from
    /// per-edge weights. Same values as `normalize_adjacency(scatter(w)) · x`
    /// at sparse cost.
    pub fn propagate(
        &mut self,
        weights: Var,
        x: Var,
        graph: Arc<EdgeIndex>,
    ) -> Result<Var, TensorError> {
        let op = Op::Propagate {
            weights: self.check(weights)?,
            x: self.check(x)?,
            graph,
        };
        self.record(op)
    }

    /// Mean negative log-likelihood of `(row, class)` targets under the
    /// row-softmax of `logits`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: Arc<Vec<(usize, usize)>>,
    ) -> Result<Var, TensorError> {
        let op = Op::SoftmaxCrossEntropy {
            logits: self.check(logits)?,
            targets,
        };
        self.record(op)
    }

    /// Re-evaluates every recorded primitive from the leaf values.
    pub fn replay(&self) -> Result<Tape, TensorError> {
        self.replay_with(&[])
    }

    /// Re-evaluates the tape with some leaves replaced.
    pub fn replay_with(&self, overrides: &[(Var, Matrix)]) -> Result<Tape, TensorError> {
        let mut nodes: Vec<Node> = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let value = match node.op {
                Op::Param | Op::Constant => {
                    match overrides.iter().find(|(v, _)| v.tape == self.id && v.idx == idx) {
                        Some((_, m)) => {
                            if m.shape() != node.value.shape() {
                                return Err(TensorError::shape(
                                    "replay_with",
                                    node.value.shape(),
                                    m.shape(),
                                ));
                            }
                            m.clone()
                        }
                        None => node.value.clone(),
                    }
                }
                ref op => evaluate(op, &nodes)?,
            };
            nodes.push(Node {
                op: node.op.clone(),
                value,
                requires_grad: node.requires_grad,
            });
        }
        Ok(Tape { id: self.id, nodes })
    }

    /// Gradients of the scalar `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let li = self.check(loss)?;
        if self.nodes[li].value.shape() != (1, 1) {
            return Err(TensorError::Usage(format!(
                "loss must be 1x1, got {}x{}",
                self.nodes[li].value.rows(),
                self.nodes[li].value.cols()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[li] = Some(Matrix::scalar(1.0));
        for idx in (0..=li).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if matches!(node.op, Op::Param) {
                grads[idx] = Some(g);
                continue;
            }
            for (input, contribution) in self.vjp(idx, &g)? {
                if !self.nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contribution.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Param) {
                grads[idx] = None;
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn vjp(&self, idx: usize, g: &Matrix) -> Result<Vec<(usize, Matrix)>, TensorError> {
        let val = |i: usize| &self.nodes[i].value;
        let out = &self.nodes[idx].value;
        let wants = |i: usize| self.nodes[i].requires_grad;
        Ok(match &self.nodes[idx].op {
            Op::Param | Op::Constant => vec![],
            &Op::MatMul(a, b) => {
                let mut v = Vec::with_capacity(2);
                if wants(a) {
                    v.push((a, g.matmul_t(val(b))?));
                }
                if wants(b) {
                    v.push((b, val(a).t_matmul(g)?));
                }
                v
            }
            &Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            &Op::Sub(a, b) => vec![(a, g.clone()), (b, g.scale(-1.0))],
            &Op::Mul(a, b) => vec![(a, g.hadamard(val(b))?), (b, g.hadamard(val(a))?)],
            &Op::AddRow(a, row) => {
                let mut col = vec![0.0; g.cols()];
                for r in 0..g.rows() {
                    for (c, x) in col.iter_mut().zip(g.row(r)) {
                        *c += x;
                    }
                }
                vec![(a, g.clone()), (row, Matrix::row_vector(col))]
            }
            &Op::MulRow(a, row) => {
                let x = val(a);
                let mut col = vec![0.0; g.cols()];
                for r in 0..g.rows() {
                    for ((c, gv), xv) in col.iter_mut().zip(g.row(r)).zip(x.row(r)) {
                        *c += gv * xv;
                    }
                }
                vec![(a, g.mul_row(val(row))?), (row, Matrix::row_vector(col))]
            }
            &Op::Affine { x, scale, .. } => vec![(x, g.scale(scale))],
            &Op::Relu(x) => {
                // subgradient 0 at exactly 0
                let mut d = g.clone();
                for (dv, xv) in d.data_mut().iter_mut().zip(val(x).data()) {
                    if *xv <= 0.0 {
                        *dv = 0.0;
                    }
                }
                vec![(x, d)]
            }
            &Op::Sigmoid(x) => {
                let mut d = g.clone();
                for (dv, y) in d.data_mut().iter_mut().zip(out.data()) {
                    *dv *= y * (1.0 - y);
                }
                vec![(x, d)]
            }
            &Op::RowSoftmax(x) => {
                let mut d = g.clone();
                let c = g.cols();
                for r in 0..g.rows() {
                    let y = out.row(r);
                    let dot: f64 = g.row(r).iter().zip(y).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        let gv = g.get(r, j);
                        d.set(r, j, y[j] * (gv - dot));
                    }
                }
                vec![(x, d)]
            }
            &Op::MeanRows(x) => {
                let n = val(x).rows();
                let mut d = Matrix::zeros(n, g.cols());
                for r in 0..n {
                    for c in 0..g.cols() {
                        d.set(r, c, g.get(0, c) / n as f64);
                    }
                }
                vec![(x, d)]
            }
            Op::SegmentMean { x, offsets } => {
                let xv = val(*x);
                let mut d = Matrix::zeros(xv.rows(), xv.cols());
                for s in 0..offsets.len() - 1 {
                    let (lo, hi) = (offsets[s], offsets[s + 1]);
                    let n = (hi - lo).max(1) as f64;
                    for r in lo..hi {
                        for c in 0..xv.cols() {
                            d.set(r, c, g.get(s, c) / n);
                        }
                    }
                }
                vec![(*x, d)]
            }
            &Op::Sum(x) => vec![(x, Matrix::filled(val(x).rows(), val(x).cols(), g.item()))],
            &Op::AbsSum(x) => {
                let gi = g.item();
                let d = val(x).map(|v| {
                    if v > 0.0 {
                        gi
                    } else if v < 0.0 {
                        -gi
                    } else {
                        0.0
                    }
                });
                vec![(x, d)]
            }
            &Op::Pick { x, row, col } => {
                let mut d = Matrix::zeros(val(x).rows(), val(x).cols());
                d.set(row, col, g.item());
                vec![(x, d)]
            }
            &Op::NormalizeAdjacency(a) => vec![(a, normalize_vjp(val(a), g))],
            Op::ScatterSymmetric { weights, graph } => {
                let n = graph.num_nodes();
                let d: Vec<f64> = graph
                    .edges()
                    .iter()
                    .map(|&(u, v)| g.data()[u * n + v] + g.data()[v * n + u])
                    .collect();
                vec![(*weights, Matrix::row_vector(d))]
            }
            Op::Propagate { weights, x, graph } => {
                let (dw, dx) = graph.propagate_vjp(val(*weights), val(*x), g);
                vec![(*weights, dw), (*x, dx)]
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let probs = val(*logits).row_softmax();
                let mut d = Matrix::zeros(probs.rows(), probs.cols());
                let scale = g.item() / targets.len().max(1) as f64;
                for &(r, c) in targets.iter() {
                    for j in 0..probs.cols() {
                        let onehot = if j == c { 1.0 } else { 0.0 };
                        let cur = d.get(r, j);
                        d.set(r, j, cur + scale * (probs.get(r, j) - onehot));
                    }
                }
                vec![(*logits, d)]
            }
        })
    }
}

fn evaluate(op: &Op, nodes: &[Node]) -> Result<Matrix, TensorError> {
    let val = |i: usize| &nodes[i].value;
    Ok(match op {
        Op::Param | Op::Constant => unreachable!("leaves are not evaluated"),
        &Op::MatMul(a, b) => val(a).matmul(val(b))?,
        &Op::Add(a, b) => val(a).add(val(b))?,
        &Op::Sub(a, b) => val(a).sub(val(b))?,
        &Op::Mul(a, b) => val(a).hadamard(val(b))?,
        &Op::AddRow(a, r) => val(a).add_row(val(r))?,
        &Op::MulRow(a, r) => val(a).mul_row(val(r))?,
        &Op::Affine { x, scale, shift } => val(x).map(|v| scale * v + shift),
        &Op::Relu(x) => val(x).relu(),
        &Op::Sigmoid(x) => val(x).sigmoid(),
        &Op::RowSoftmax(x) => {
            if val(x).rows() == 0 || val(x).cols() == 0 {
                return Err(TensorError::Usage("row_softmax of an empty matrix".into()));
            }
            val(x).row_softmax()
        }
        &Op::MeanRows(x) => val(x).mean_rows(),
        Op::SegmentMean { x, offsets } => {
            let xv = val(*x);
            if offsets.len() < 2 || *offsets.last().unwrap() != xv.rows() {
                return Err(TensorError::Usage(format!(
                    "segment offsets must end at {} rows",
                    xv.rows()
                )));
            }
            let mut out = Matrix::zeros(offsets.len() - 1, xv.cols());
            for s in 0..offsets.len() - 1 {
                let (lo, hi) = (offsets[s], offsets[s + 1]);
                let n = (hi - lo).max(1) as f64;
                for c in 0..xv.cols() {
                    let total: f64 = (lo..hi).map(|r| xv.get(r, c)).sum();
                    out.set(s, c, total / n);
                }
            }
            out
        }
        &Op::Sum(x) => Matrix::scalar(val(x).sum()),
        &Op::AbsSum(x) => Matrix::scalar(val(x).abs_sum()),
        &Op::Pick { x, row, col } => {
            let xv = val(x);
            if row >= xv.rows() || col >= xv.cols() {
                return Err(TensorError::Usage(format!(
                    "pick ({row},{col}) outside {}x{}",
                    xv.rows(),
                    xv.cols()
                )));
            }
            Matrix::scalar(xv.get(row, col))
        }
        &Op::NormalizeAdjacency(a) => val(a).normalize_adjacency()?,
        Op::ScatterSymmetric { weights, graph } => graph.scatter(val(*weights))?,
        Op::Propagate { weights, x, graph } => graph.propagate(val(*weights), val(*x))?,
        Op::SoftmaxCrossEntropy { logits, targets } => {
            let l = val(*logits);
            let mut total = 0.0;
            for &(r, c) in targets.iter() {
                if r >= l.rows() || c >= l.cols() {
                    return Err(TensorError::Usage(format!(
                        "target ({r},{c}) outside logits {}x{}",
                        l.rows(),
                        l.cols()
                    )));
                }
                let row = l.row(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - row[c];
            }
            Matrix::scalar(total / targets.len().max(1) as f64)
        }
    })
}

/// Vector-Jacobian product of `D̃^{-1/2}(A+I)D̃^{-1/2}` with respect to `A`.
fn normalize_vjp(a: &Matrix, g: &Matrix) -> Matrix {
    let n = a.rows();
    let s = a.self_loop_inv_sqrt_degrees();
    // t_i = ∂L/∂s_i, with B = A + I entering as both row and column factor
    let mut t = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let b = a.get(i, j) + if i == j { 1.0 } else { 0.0 };
            if b == 0.0 {
                continue;
            }
            t[i] += g.get(i, j) * b * s[j];
            t[j] += g.get(i, j) * b * s[i];
        }
    }
    let dd: Vec<f64> = (0..n).map(|i| -0.5 * s[i].powi(3) * t[i]).collect();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, g.get(i, j) * s[i] * s[j] + dd[i]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let p = tape.param(Matrix::from_rows(&[vec![1.0, -2.0], vec![0.3, 4.0]]).unwrap());
        let loss = tape.sum(p).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap(), &Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn l1_gradient_of_positive_is_ones() {
        let mut tape = Tape::new();
        let p = tape.param(Matrix::from_rows(&[vec![0.1, 2.0, 3.5]]).unwrap());
        let loss = tape.abs_sum(p).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap(), &Matrix::filled(1, 3, 1.0));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let p = tape.param(Matrix::row_vector(vec![-1.0, 0.0, 2.0]));
        let r = tape.relu(p).unwrap();
        let loss = tape.sum(r).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn loss_from_another_tape_is_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let _ = a.param(Matrix::scalar(1.0));
        let x = b.param(Matrix::scalar(1.0));
        assert!(matches!(a.backward(x), Err(TensorError::Usage(_))));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let p = tape.param(Matrix::zeros(2, 2));
        assert!(matches!(tape.backward(p), Err(TensorError::Usage(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Matrix::filled(2, 2, 3.0));
        let p = tape.param(Matrix::filled(2, 2, 1.0));
        let prod = tape.mul(c, p).unwrap();
        let loss = tape.sum(prod).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap(), &Matrix::filled(2, 2, 3.0));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut tape = Tape::new();
        let a = tape.param(Matrix::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.7]]).unwrap());
        let b = tape.constant(Matrix::from_rows(&[vec![1.5], vec![-0.25]]).unwrap());
        let h = tape.matmul(a, b).unwrap();
        let s = tape.sigmoid(h).unwrap();
        let loss = tape.sum(s).unwrap();
        let again = tape.replay().unwrap();
        assert_eq!(again.value(loss), tape.value(loss));
        assert_eq!(again.value(h), tape.value(h));
    }
}
