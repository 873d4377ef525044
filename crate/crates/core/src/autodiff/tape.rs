use std::f64::consts::PI;

use super::tensor::{matmul_at_raw, matmul_bt_raw, matmul_raw, Tensor};
use super::AutodiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Elementwise; the right operand may be a single row broadcast over rows.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<Option<usize>>),
    SegmentSum(Var, Vec<Vec<usize>>),
    Sum(Var),
    Mean(Var),
    L2Norm(Var),
    RowL2Norm(Var),
    Reshape(Var),
    WrapRotationRows(Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so the
/// node index order is a topological order of the graph.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zeros when `var` does not reach the root.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail: format!("{:?} vs {:?}", a.shape(), b.shape()) }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Multiple of 2π to subtract from a rotation angle so it lands in [-π, π].
fn wrap_turns(theta: f64) -> f64 {
    if theta <= PI {
        0.0
    } else {
        (theta / (2.0 * PI)).round()
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or data) tensor.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() || tb.shape().len() > 2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    fn broadcast_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() == tb.len() && (ta.shape() == tb.shape() || ta.rows() == tb.rows()) {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            return Tensor::new(ta.shape().to_vec(), data);
        }
        if tb.rows() == 1 && tb.cols() == ta.cols() {
            let cols = ta.cols();
            let data = ta.data().iter().enumerate().map(|(idx, &x)| f(x, tb.data()[idx % cols])).collect();
            return Tensor::new(ta.shape().to_vec(), data);
        }
        Err(mismatch(name, ta, tb))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let v = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let v = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    /// Hadamard (elementwise) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let v = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    /// Sums a non-empty list of same-shaped values.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var, AutodiffError> {
        let (first, rest) = terms.split_first().ok_or(AutodiffError::EmptyOperands("add_all"))?;
        let mut acc = *first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).map(|x| x * factor);
        self.push(Op::Scale(a, factor), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v)
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts.first().ok_or(AutodiffError::EmptyOperands("concat_cols"))?;
        let rows = self.value(*first).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(mismatch("concat_cols", self.value(*first), t));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let value = Tensor::matrix(rows, total, data)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if start > end || end > t.cols() {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("{start}..{end} of {:?}", t.shape()),
            });
        }
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let value = Tensor::matrix(rows, end - start, data)?;
        Ok(self.push(Op::SliceCols(a, start), value))
    }

    /// Builds a matrix whose row `r` is row `idx[r]` of `a`, or zeros for `None`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<Option<usize>>) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let cols = t.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for i in &idx {
            match i {
                Some(r) if *r < t.rows() => data.extend_from_slice(t.row_slice(*r)),
                Some(r) => {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "gather_rows",
                        detail: format!("row {r} of {:?}", t.shape()),
                    })
                }
                None => data.extend(std::iter::repeat_n(0.0, cols)),
            }
        }
        let value = Tensor::matrix(idx.len(), cols, data)?;
        Ok(self.push(Op::GatherRows(a, idx), value))
    }

    /// Row `g` of the result is the sum of rows `groups[g]` of `a`, accumulated
    /// in the listed order.
    pub fn segment_sum(&mut self, a: Var, groups: Vec<Vec<usize>>) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let cols = t.cols();
        let mut data = vec![0.0; groups.len() * cols];
        for (g, members) in groups.iter().enumerate() {
            let out = &mut data[g * cols..(g + 1) * cols];
            for &r in members {
                if r >= t.rows() {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "segment_sum",
                        detail: format!("row {r} of {:?}", t.shape()),
                    });
                }
                for (o, x) in out.iter_mut().zip(t.row_slice(r)) {
                    *o += x;
                }
            }
        }
        let value = Tensor::matrix(groups.len(), cols, data)?;
        Ok(self.push(Op::SegmentSum(a, groups), value))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(Op::Mean(a), v)
    }

    /// Euclidean norm of all values.
    pub fn l2norm(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).norm());
        self.push(Op::L2Norm(a), v)
    }

    /// Per-row Euclidean norm; `m x n -> m x 1`.
    pub fn row_l2norm(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| t.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt()).collect::<Vec<_>>();
        let rows = data.len();
        let v = Tensor::matrix(rows, 1, data).expect("row count matches");
        self.push(Op::RowL2Norm(a), v)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let v = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(Op::Reshape(a), v))
    }

    /// Treats each row of an `m x 3` matrix as a rotation vector and rewraps
    /// rows whose norm exceeds π onto the equivalent vector of norm <= π.
    /// Rows already inside the ball are copied unchanged.
    pub fn wrap_rotation_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if t.cols() != 3 {
            return Err(AutodiffError::ShapeMismatch {
                op: "wrap_rotation_rows",
                detail: format!("expected 3 columns, got {:?}", t.shape()),
            });
        }
        let mut out = t.clone();
        for r in 0..t.rows() {
            let row = &mut out.data_mut()[r * 3..r * 3 + 3];
            let theta = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            let turns = wrap_turns(theta);
            if turns != 0.0 {
                let s = 1.0 - 2.0 * PI * turns / theta;
                row.iter_mut().for_each(|x| *x *= s);
            }
        }
        Ok(self.push(Op::WrapRotationRows(a), out))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(AutodiffError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::filled(root_value.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].clone() else { continue };
            let node = &self.nodes[idx];
            for (target, contrib) in self.local_grads(node, &g) {
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    /// Gradient contributions of `node` to its operands, given its output gradient.
    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        let shaped = |like: &Tensor, data: Vec<f64>| {
            Tensor::new(like.shape().to_vec(), data).expect("gradient shape follows operand")
        };
        // Gradient for the right operand of a possibly broadcasting binary op.
        let reduce_rhs = |b: &Tensor, full: Vec<f64>| -> Tensor {
            if full.len() == b.len() {
                return shaped(b, full);
            }
            let cols = b.cols();
            let mut acc = vec![0.0; cols];
            for (i, v) in full.iter().enumerate() {
                acc[i % cols] += v;
            }
            shaped(b, acc)
        };

        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let ga = matmul_bt_raw(g.data(), tb.data(), m, n, k);
                let gb = matmul_at_raw(ta.data(), g.data(), m, k, n);
                vec![(*a, shaped(ta, ga)), (*b, shaped(tb, gb))]
            }
            Op::Add(a, b) => {
                let tb = self.value(*b);
                vec![(*a, shaped(self.value(*a), g.data().to_vec())), (*b, reduce_rhs(tb, g.data().to_vec()))]
            }
            Op::Sub(a, b) => {
                let tb = self.value(*b);
                let neg = g.data().iter().map(|x| -x).collect();
                vec![(*a, shaped(self.value(*a), g.data().to_vec())), (*b, reduce_rhs(tb, neg))]
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let bcast = |i: usize| if tb.len() == ta.len() { i } else { i % tb.cols() };
                let ga = g.data().iter().enumerate().map(|(i, gi)| gi * tb.data()[bcast(i)]).collect();
                let gb_full = g.data().iter().zip(ta.data()).map(|(gi, ai)| gi * ai).collect();
                vec![(*a, shaped(ta, ga)), (*b, reduce_rhs(tb, gb_full))]
            }
            Op::Scale(a, s) => vec![(*a, g.map(|x| x * s))],
            Op::Sigmoid(a) => {
                let y = &node.value;
                let d = g.data().iter().zip(y.data()).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect();
                vec![(*a, shaped(y, d))]
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let d = g.data().iter().zip(y.data()).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                vec![(*a, shaped(y, d))]
            }
            Op::Square(a) => {
                let x = self.value(*a);
                let d = g.data().iter().zip(x.data()).map(|(gi, xi)| 2.0 * gi * xi).collect();
                vec![(*a, shaped(x, d))]
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for p in parts {
                    let tp = self.value(*p);
                    let c = tp.cols();
                    let mut d = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                    }
                    offset += c;
                    out.push((*p, shaped(tp, d)));
                }
                out
            }
            Op::SliceCols(a, start) => {
                let ta = self.value(*a);
                let (rows, cols, width) = (ta.rows(), ta.cols(), g.cols());
                let mut d = vec![0.0; ta.len()];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + width].copy_from_slice(g.row_slice(r));
                }
                vec![(*a, shaped(ta, d))]
            }
            Op::GatherRows(a, idx) => {
                let ta = self.value(*a);
                let cols = ta.cols();
                let mut d = vec![0.0; ta.len()];
                for (r, src) in idx.iter().enumerate() {
                    if let Some(s) = src {
                        for (o, gi) in d[s * cols..(s + 1) * cols].iter_mut().zip(g.row_slice(r)) {
                            *o += gi;
                        }
                    }
                }
                vec![(*a, shaped(ta, d))]
            }
            Op::SegmentSum(a, groups) => {
                let ta = self.value(*a);
                let cols = ta.cols();
                let mut d = vec![0.0; ta.len()];
                for (gi, members) in groups.iter().enumerate() {
                    for &r in members {
                        for (o, x) in d[r * cols..(r + 1) * cols].iter_mut().zip(g.row_slice(gi)) {
                            *o += x;
                        }
                    }
                }
                vec![(*a, shaped(ta, d))]
            }
            Op::Sum(a) => {
                let ta = self.value(*a);
                vec![(*a, Tensor::filled(ta.shape(), g.data()[0]))]
            }
            Op::Mean(a) => {
                let ta = self.value(*a);
                vec![(*a, Tensor::filled(ta.shape(), g.data()[0] / ta.len() as f64))]
            }
            Op::L2Norm(a) => {
                let ta = self.value(*a);
                let n = node.value.data()[0];
                // Subgradient 0 at the origin.
                let d = if n > 0.0 { ta.map(|x| g.data()[0] * x / n) } else { Tensor::zeros(ta.shape()) };
                vec![(*a, d)]
            }
            Op::RowL2Norm(a) => {
                let ta = self.value(*a);
                let cols = ta.cols();
                let mut d = vec![0.0; ta.len()];
                for r in 0..ta.rows() {
                    let n = node.value.data()[r];
                    if n > 0.0 {
                        let gr = g.data()[r];
                        for c in 0..cols {
                            d[r * cols + c] = gr * ta.data()[r * cols + c] / n;
                        }
                    }
                }
                vec![(*a, shaped(ta, d))]
            }
            Op::Reshape(a) => {
                let ta = self.value(*a);
                vec![(*a, shaped(ta, g.data().to_vec()))]
            }
            Op::WrapRotationRows(a) => {
                let ta = self.value(*a);
                let mut d = g.data().to_vec();
                for r in 0..ta.rows() {
                    let w = &ta.data()[r * 3..r * 3 + 3];
                    let theta = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let turns = wrap_turns(theta);
                    if turns == 0.0 {
                        continue;
                    }
                    let gr = &g.data()[r * 3..r * 3 + 3];
                    let s = 1.0 - 2.0 * PI * turns / theta;
                    let k = 2.0 * PI * turns / theta.powi(3);
                    let wg: f64 = w.iter().zip(gr).map(|(x, y)| x * y).sum();
                    for c in 0..3 {
                        d[r * 3 + c] = s * gr[c] + k * wg * w[c];
                    }
                }
                vec![(*a, shaped(ta, d))]
            }
        }
    }
}
