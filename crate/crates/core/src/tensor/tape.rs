use super::{dims2, kernels, numel, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Embedding { table: Var, ids: Vec<usize> },
    Gather { x: Var, ids: Vec<usize> },
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    Clip { x: Var, lo: f64, hi: f64 },
    Minimum(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    CausalMask(Var),
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Dynamic computation tape.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` walks it in reverse. Leaf gradients
/// persist across `backward` calls and accumulate until [`Tape::zero_grad`].
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() }
}

/// How an elementwise binary op lines up its operands.
#[derive(Clone, Copy)]
enum Pairing {
    Same,
    ScalarLhs,
    ScalarRhs,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), grad_enabled: true }
    }

    /// A tape that only evaluates values; nothing is differentiable.
    pub fn no_grad() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new(), grad_enabled: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, parents: &[Var]) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let requires_grad = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Constant };
        self.nodes.push(Node { shape, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.leaf_from(t.shape().to_vec(), t.data().to_vec())
    }

    pub fn leaf_from(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Var {
        assert_eq!(numel(&shape), data.len(), "leaf data does not match its shape");
        self.nodes.push(Node { shape, value: data, op: Op::Leaf, requires_grad: self.grad_enabled });
        Var(self.nodes.len() - 1)
    }

    /// Records a non-differentiable input.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.constant_from(t.shape().to_vec(), t.data().to_vec())
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Var {
        assert_eq!(numel(&shape), data.len(), "constant data does not match its shape");
        self.nodes.push(Node { shape, value: data, op: Op::Constant, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// The single value of a one-element tensor.
    pub fn scalar(&self, v: Var) -> f64 {
        let node = &self.nodes[v.0];
        assert_eq!(node.value.len(), 1, "not a scalar: shape {:?}", node.shape);
        node.value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        Tensor::new(node.shape.clone(), node.value.clone()).expect("node shape is consistent")
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    /// Drops every node recorded after the first `len`, invalidating their
    /// handles. Lets an inference tape be reused without growing.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.grads.truncate(len);
    }

    fn dims(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        dims2(op, &self.nodes[v.0].shape)
    }

    fn pairing(&self, op: &'static str, a: Var, b: Var) -> Result<(Pairing, Vec<usize>), TensorError> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa == sb {
            Ok((Pairing::Same, sa.clone()))
        } else if numel(sa) == 1 {
            Ok((Pairing::ScalarLhs, sb.clone()))
        } else if numel(sb) == 1 {
            Ok((Pairing::ScalarRhs, sa.clone()))
        } else {
            Err(mismatch(op, sa, sb))
        }
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>), TensorError> {
        let (pairing, shape) = self.pairing(op, a, b)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = match pairing {
            Pairing::Same => va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect(),
            Pairing::ScalarLhs => vb.iter().map(|&y| f(va[0], y)).collect(),
            Pairing::ScalarRhs => va.iter().map(|&x| f(x, vb[0])).collect(),
        };
        Ok((shape, value))
    }

    fn unary(&mut self, v: Var, f: impl Fn(f64) -> f64) -> (Vec<usize>, Vec<f64>) {
        let node = &self.nodes[v.0];
        (node.shape.clone(), node.value.iter().map(|&x| f(x)).collect())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(&self.nodes[a.0].value, &self.nodes[b.0].value, &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(mismatch("matmul_bt", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_bt_acc(&self.nodes[a.0].value, &self.nodes[b.0].value, &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMulBt(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims("transpose", a)?;
        let src = &self.nodes[a.0].value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(vec![c, r], out, Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (shape, value) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(shape, value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (shape, value) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(shape, value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (shape, value) = self.binary("multiply", a, b, |x, y| x * y)?;
        Ok(self.push(shape, value, Op::Mul(a, b), &[a, b]))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (shape, value) = self.binary("minimum", a, b, f64::min)?;
        Ok(self.push(shape, value, Op::Minimum(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (shape, value) = self.unary(a, |x| x * c);
        self.push(shape, value, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let (shape, value) = self.unary(a, |x| x + c);
        self.push(shape, value, Op::AddScalar(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let (shape, value) = self.unary(a, f64::exp);
        self.push(shape, value, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let (shape, value) = self.unary(a, f64::ln);
        self.push(shape, value, Op::Log(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (shape, value) = self.unary(a, |x| x.max(0.0));
        self.push(shape, value, Op::Relu(a), &[a])
    }

    pub fn clip_value(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (shape, value) = self.unary(a, |x| x.clamp(lo, hi));
        self.push(shape, value, Op::Clip { x: a, lo, hi }, &[a])
    }

    fn axis_slices(&self, op: &'static str, a: Var, axis: usize) -> Result<(usize, usize, usize), TensorError> {
        // (number of slices, slice length, stride between slice elements)
        let shape = &self.nodes[a.0].shape;
        match (shape.len(), axis) {
            (1, 0) => Ok((1, shape[0], 1)),
            (2, 0) => Ok((shape[1], shape[0], shape[1])),
            (2, 1) => Ok((shape[0], shape[1], 1)),
            _ => Err(TensorError::InvalidShape { op, shape: shape.clone(), reason: format!("no axis {axis}") }),
        }
    }

    fn map_slices(&self, a: Var, slices: (usize, usize, usize), f: fn(&[f64], &mut [f64])) -> Vec<f64> {
        let (count, len, stride) = slices;
        let src = &self.nodes[a.0].value;
        let mut out = vec![0.0; src.len()];
        if stride == 1 {
            for (s, o) in src.chunks(len).zip(out.chunks_mut(len)) {
                f(s, o);
            }
        } else {
            let mut buf = vec![0.0; len];
            let mut res = vec![0.0; len];
            for s in 0..count {
                for i in 0..len {
                    buf[i] = src[s + i * stride];
                }
                f(&buf, &mut res);
                for i in 0..len {
                    out[s + i * stride] = res[i];
                }
            }
        }
        out
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let slices = self.axis_slices("softmax", a, axis)?;
        let value = self.map_slices(a, slices, kernels::softmax_into);
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(shape, value, Op::Softmax(a, axis), &[a]))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let slices = self.axis_slices("log_softmax", a, axis)?;
        let value = self.map_slices(a, slices, kernels::log_softmax_into);
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push(shape, value, Op::LogSoftmax(a, axis), &[a]))
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (rows, d) = self.dims("embedding_lookup", table)?;
        let src = &self.nodes[table.0].value;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::IndexOutOfRange { op: "embedding_lookup", index: id, bound: rows });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        Ok(self.push(vec![ids.len(), d], out, Op::Embedding { table, ids: ids.to_vec() }, &[table]))
    }

    /// Picks `x[i, ids[i]]` from each row, giving a vector.
    pub fn gather(&mut self, x: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (rows, cols) = self.dims("gather", x)?;
        if rows != ids.len() {
            return Err(mismatch("gather", &self.nodes[x.0].shape, &[ids.len()]));
        }
        let src = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(rows);
        for (i, &id) in ids.iter().enumerate() {
            if id >= cols {
                return Err(TensorError::IndexOutOfRange { op: "gather", index: id, bound: cols });
            }
            out.push(src[i * cols + id]);
        }
        Ok(self.push(vec![rows], out, Op::Gather { x, ids: ids.to_vec() }, &[x]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(Vec::new(), vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.push(Vec::new(), vec![m], Op::Mean(a), &[a])
    }

    /// Sums each row, giving a vector with one entry per row.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims("sum_rows", a)?;
        let v = &self.nodes[a.0].value;
        let out = (0..r).map(|i| v[i * c..(i + 1) * c].iter().sum()).collect();
        Ok(self.push(vec![r], out, Op::SumRows(a), &[a]))
    }

    fn row_operand(&self, op: &'static str, x: Var, row: Var) -> Result<(usize, usize), TensorError> {
        let (r, c) = self.dims(op, x)?;
        let (rr, rc) = self.dims(op, row)?;
        if rr != 1 || rc != c || self.nodes[x.0].shape.len() != 2 {
            return Err(mismatch(op, &self.nodes[x.0].shape, &self.nodes[row.0].shape));
        }
        Ok((r, c))
    }

    /// Adds a row vector to every row of a matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        let (_, c) = self.row_operand("add_row", x, row)?;
        let (xv, rv) = (&self.nodes[x.0].value, &self.nodes[row.0].value);
        let out = xv.iter().enumerate().map(|(i, &v)| v + rv[i % c]).collect();
        let shape = self.nodes[x.0].shape.clone();
        Ok(self.push(shape, out, Op::AddRow(x, row), &[x, row]))
    }

    /// Multiplies every row of a matrix elementwise by a row vector.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        let (_, c) = self.row_operand("mul_row", x, row)?;
        let (xv, rv) = (&self.nodes[x.0].value, &self.nodes[row.0].value);
        let out = xv.iter().enumerate().map(|(i, &v)| v * rv[i % c]).collect();
        let shape = self.nodes[x.0].shape.clone();
        Ok(self.push(shape, out, Op::MulRow(x, row), &[x, row]))
    }

    /// Row-wise standardization (no affine part).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var, TensorError> {
        let (r, c) = self.dims("layer_norm", x)?;
        let src = &self.nodes[x.0].value;
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            inv_std.push(kernels::layer_norm_into(&src[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c], eps));
        }
        let shape = self.nodes[x.0].shape.clone();
        Ok(self.push(shape, out, Op::LayerNorm { x, inv_std }, &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (r, c) = self.dims("slice_cols", x)?;
        if start + len > c {
            return Err(TensorError::IndexOutOfRange { op: "slice_cols", index: start + len, bound: c });
        }
        let src = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        Ok(self.push(vec![r, len], out, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or_else(|| TensorError::InvalidShape {
            op: "concat_cols",
            shape: Vec::new(),
            reason: "no inputs".into(),
        })?;
        let (r, _) = self.dims("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims("concat_cols", p)?;
            if pr != r {
                return Err(mismatch("concat_cols", &self.nodes[first.0].shape, &self.nodes[p.0].shape));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[p.0].value[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(vec![r, total], out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or_else(|| TensorError::InvalidShape {
            op: "concat_rows",
            shape: Vec::new(),
            reason: "no inputs".into(),
        })?;
        let (_, c) = self.dims("concat_rows", first)?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pr, pc) = self.dims("concat_rows", p)?;
            if pc != c {
                return Err(mismatch("concat_rows", &self.nodes[first.0].shape, &self.nodes[p.0].shape));
            }
            rows += pr;
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        Ok(self.push(vec![rows, c], out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Sets every entry above the diagonal of a square matrix to -inf.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var, TensorError> {
        let (r, c) = self.dims("causal_mask", x)?;
        if r != c {
            return Err(TensorError::InvalidShape {
                op: "causal_mask",
                shape: self.nodes[x.0].shape.clone(),
                reason: "matrix must be square".into(),
            });
        }
        let mut out = self.nodes[x.0].value.clone();
        for i in 0..r {
            for v in &mut out[i * c + i + 1..(i + 1) * c] {
                *v = f64::NEG_INFINITY;
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        Ok(self.push(shape, out, Op::CausalMask(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        if numel(&shape) != self.nodes[x.0].value.len() {
            return Err(mismatch("reshape", &self.nodes[x.0].shape, &shape));
        }
        let value = self.nodes[x.0].value.clone();
        Ok(self.push(shape, value, Op::Reshape(x), &[x]))
    }

    /// Back-propagates from a scalar `loss`, adding `∂loss/∂leaf` into each
    /// reachable leaf's gradient.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(root.shape.clone()));
        }
        if self.grads.len() < self.nodes.len() {
            self.grads.resize(self.nodes.len(), None);
        }
        let nodes = &self.nodes;
        let mut work: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        work[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = work[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    let slot = self.grads[i].get_or_insert_with(|| vec![0.0; g.len()]);
                    add_into(slot, &g);
                }
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[1];
                    if let Some(ga) = slot(&mut work, nodes, *a) {
                        kernels::matmul_bt_acc(&g, &nodes[b.0].value, ga, m, n, k);
                    }
                    if let Some(gb) = slot(&mut work, nodes, *b) {
                        kernels::matmul_at_acc(&nodes[a.0].value, &g, gb, m, k, n);
                    }
                }
                Op::MatMulBt(a, b) => {
                    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[0];
                    if let Some(ga) = slot(&mut work, nodes, *a) {
                        kernels::matmul_acc(&g, &nodes[b.0].value, ga, m, n, k);
                    }
                    if let Some(gb) = slot(&mut work, nodes, *b) {
                        kernels::matmul_at_acc(&g, &nodes[a.0].value, gb, m, n, k);
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = dims2("transpose", &nodes[a.0].shape)?;
                    if let Some(ga) = slot(&mut work, nodes, *a) {
                        for i in 0..r {
                            for j in 0..c {
                                ga[i * c + j] += g[j * r + i];
                            }
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    let (na, nb) = (nodes[a.0].value.len(), nodes[b.0].value.len());
                    if let Some(ga) = slot(&mut work, nodes, *a) {
                        reduce_into(ga, &g, na, |x, _| x);
                    }
                    if let Some(gb) = slot(&mut work, nodes, *b) {
                        reduce_into(gb, &g, nb, |x, _| sign * x);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    if let Some(ga) = slot(&mut work, nodes, *a) {
                        reduce_into(ga, &g, va.len(), |x, j| x * pick(vb, j));
                    }
                    if let Some(gb) = slot(&mut work, nodes, *b) {
                        reduce_into(gb, &g, vb.len(), |x, j| x * pick(va, j));
                    }
                }
                Op::Minimum(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    // Ties split the gradient evenly between both operands.
                    let share = |mine: f64, other: f64| {
                        if mine < other {
                            1.0
                        } else if mine == other {
                            0.5
                        } else {
                            0.0
                        }
                    };
                    if let Some(ga) = slot(&mut work, nodes, *a) {
                        reduce_into(ga, &g, va.len(), |x, j| x * share(pick(va, j), pick(vb, j)));
                    }
                    if let Some(gb) = slot(&mut work, nodes, *b) {
                        reduce_into(gb, &g, vb.len(), |x, j| x * share(pick(vb, j), pick(va, j)));
                    }
                }
                Op::Scale(a, c) => {
                    if let Some(ga) = slot(&mut work, nodes, *a) {
                        for (o, &x) in ga.iter_mut().zip(&g) {
                            *o += c * x;
                        }
                    }
                }
                Op::AddScalar(a) | Op::Reshape(a) => {
                    if let Some(ga) = slot(&mut work, nodes, *a) {
                        add_into(ga, &g);
                    }
                }
                Op::Exp(a) => {
                    if let Some(ga) = slot(&mut work, nodes, *a) {
                        for ((o, &x), &y) in ga.iter_mut().zip(&g).zip(&node.value) {
                            *o += x * y;
                        }
                    }
                }
                Op::Log(a) => {
                    let va = &nodes[a.0].value;
                    if let Some(ga) = slot(&mut work, nodes, *a) {
                        for ((o, &x), &v) in ga.iter_mut().zip(&g).zip(va) {
                            *o += x / v;
                        }
                    }
                }
                Op::Relu(a) => {
                    let va = &nodes[a.0].value;
                    if let Some(ga) = slot(&mut work, nodes, *a) {
                        for ((o, &x), &v) in ga.iter_mut().zip(&g).zip(va) {
                            if v > 0.0 {
                                *o += x;
                            }
                        }
                    }
                }
                Op::Clip { x: a, lo, hi } => {
                    let va = &nodes[a.0].value;
                    if let Some(ga) = slot(&mut work, nodes, *a) {
                        for ((o, &x), &v) in ga.iter_mut().zip(&g).zip(va) {
                            if v >= *lo && v <= *hi {
                                *o += x;
                            }
                        }
                    }
                }
                Op::Softmax(a, axis) | Op::LogSoftmax(a, axis) => {
                    let log = matches!(node.op, Op::LogSoftmax(..));
                    let (count, len, stride) = match (node.shape.len(), axis) {
                        (1, _) => (1, node.shape[0], 1),
                        (_, 0) => (node.shape[1], node.shape[0], node.shape[1]),
                        _ => (node.shape[0], node.shape[1], 1),
                    };
                    let y = &node.value;
                    if let Some(ga) = slot(&mut work, nodes, *a) {
                        for s in 0..count {
                            let base = if stride == 1 { s * len } else { s };
                            let at = |i: usize| base + i * stride;
                            if log {
                                let total: f64 = (0..len).map(|i| g[at(i)]).sum();
                                for i in 0..len {
                                    ga[at(i)] += g[at(i)] - y[at(i)].exp() * total;
                                }
                            } else {
                                let dot: f64 = (0..len).map(|i| g[at(i)] * y[at(i)]).sum();
                                for i in 0..len {
                                    ga[at(i)] += y[at(i)] * (g[at(i)] - dot);
                                }
                            }
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    let d = nodes[table.0].shape[1];
                    if let Some(gt) = slot(&mut work, nodes, *table) {
                        for (r, &id) in ids.iter().enumerate() {
                            add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                        }
                    }
                }
                Op::Gather { x, ids } => {
                    let (_, cols) = dims2("gather", &nodes[x.0].shape)?;
                    if let Some(gx) = slot(&mut work, nodes, *x) {
                        for (r, &id) in ids.iter().enumerate() {
                            gx[r * cols + id] += g[r];
                        }
                    }
                }
                Op::Sum(a) | Op::Mean(a) => {
                    let n = nodes[a.0].value.len();
                    let scale = if matches!(node.op, Op::Mean(_)) { 1.0 / n as f64 } else { 1.0 };
                    if let Some(ga) = slot(&mut work, nodes, *a) {
                        for o in ga.iter_mut() {
                            *o += g[0] * scale;
                        }
                    }
                }
                Op::SumRows(a) => {
                    let (_, c) = dims2("sum_rows", &nodes[a.0].shape)?;
                    if let Some(ga) = slot(&mut work, nodes, *a) {
                        for (i, o) in ga.iter_mut().enumerate() {
                            *o += g[i / c];
                        }
                    }
                }
                Op::AddRow(x, row) | Op::MulRow(x, row) => {
                    let mul = matches!(node.op, Op::MulRow(..));
                    let c = nodes[row.0].value.len();
                    let (xv, rv) = (&nodes[x.0].value, &nodes[row.0].value);
                    if let Some(gx) = slot(&mut work, nodes, *x) {
                        for (i, o) in gx.iter_mut().enumerate() {
                            *o += if mul { g[i] * rv[i % c] } else { g[i] };
                        }
                    }
                    if let Some(gr) = slot(&mut work, nodes, *row) {
                        for (i, &gi) in g.iter().enumerate() {
                            gr[i % c] += if mul { gi * xv[i] } else { gi };
                        }
                    }
                }
                Op::LayerNorm { x, inv_std } => {
                    let (r, c) = dims2("layer_norm", &node.shape)?;
                    let y = &node.value;
                    if let Some(gx) = slot(&mut work, nodes, *x) {
                        for i in 0..r {
                            let (gy, yy) = (&g[i * c..(i + 1) * c], &y[i * c..(i + 1) * c]);
                            let mean_g = gy.iter().sum::<f64>() / c as f64;
                            let mean_gy = gy.iter().zip(yy).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                            for j in 0..c {
                                gx[i * c + j] += inv_std[i] * (gy[j] - mean_g - yy[j] * mean_gy);
                            }
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let (r, c) = dims2("slice_cols", &nodes[x.0].shape)?;
                    let len = node.shape[1];
                    if let Some(gx) = slot(&mut work, nodes, *x) {
                        for i in 0..r {
                            add_into(&mut gx[i * c + start..i * c + start + len], &g[i * len..(i + 1) * len]);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.shape[1];
                    let r = node.shape[0];
                    let mut offset = 0;
                    for p in parts {
                        let w = nodes[p.0].shape[1];
                        if let Some(gp) = slot(&mut work, nodes, *p) {
                            for i in 0..r {
                                add_into(&mut gp[i * w..(i + 1) * w], &g[i * total + offset..i * total + offset + w]);
                            }
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = nodes[p.0].value.len();
                        if let Some(gp) = slot(&mut work, nodes, *p) {
                            add_into(gp, &g[offset..offset + n]);
                        }
                        offset += n;
                    }
                }
                Op::CausalMask(x) => {
                    let c = node.shape[1];
                    if let Some(gx) = slot(&mut work, nodes, *x) {
                        for (idx, o) in gx.iter_mut().enumerate() {
                            if idx % c <= idx / c {
                                *o += g[idx];
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Element `j` of `v`, broadcasting one-element buffers.
fn pick(v: &[f64], j: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[j]
    }
}

/// Adds `f(g[j], j)` into `dst`, summing everything into `dst[0]` when the
/// destination was a broadcast scalar.
fn reduce_into(dst: &mut [f64], g: &[f64], dst_len: usize, f: impl Fn(f64, usize) -> f64) {
    if dst_len == 1 && g.len() != 1 {
        dst[0] += g.iter().enumerate().map(|(j, &x)| f(x, j)).sum::<f64>();
    } else {
        for (j, (d, &x)) in dst.iter_mut().zip(g).enumerate() {
            *d += f(x, j);
        }
    }
}

fn slot<'a>(work: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(work[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(&Tensor::vector(vec![0.0, 0.0]));
        let y = t.softmax(x, 0).unwrap();
        assert_eq!(t.value(y), &[0.5, 0.5]);
    }

    #[test]
    fn log_softmax_exponentiates_to_a_distribution() {
        let mut t = Tape::new();
        let x = t.constant(&Tensor::new([2, 3], vec![1.0, -2.0, 0.5, 3.0, 3.0, -7.0]).unwrap());
        for axis in [0, 1] {
            let y = t.log_softmax(x, axis).unwrap();
            let e = t.exp(y);
            let v = t.value(e).to_vec();
            if axis == 1 {
                approx(&[v[0] + v[1] + v[2], v[3] + v[4] + v[5]], &[1.0, 1.0], 1e-12);
            } else {
                approx(&[v[0] + v[3], v[1] + v[4], v[2] + v[5]], &[1.0, 1.0, 1.0], 1e-12);
            }
        }
    }

    #[test]
    fn matmul_shape_rule_and_errors() {
        let mut t = Tape::new();
        let a = t.constant(&Tensor::zeros([2, 3]));
        let b = t.constant(&Tensor::zeros([3, 1]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.shape(c), &[2, 1]);
        let err = t.matmul(b, b).unwrap_err();
        assert_eq!(err, TensorError::ShapeMismatch { op: "matmul", lhs: vec![3, 1], rhs: vec![3, 1] });
    }

    #[test]
    fn quadratic_gradient() {
        let mut t = Tape::new();
        let w = t.leaf(&Tensor::vector(vec![1.0, 2.0]));
        let sq = t.mul(w, w).unwrap();
        let loss = t.sum(sq);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(w).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn log_softmax_pick_gradient_is_onehot_minus_softmax() {
        let mut t = Tape::new();
        let logits = vec![0.3, -1.2, 2.0, 0.0];
        let x = t.leaf(&Tensor::new([1, 4], logits.clone()).unwrap());
        let ls = t.log_softmax(x, 1).unwrap();
        let picked = t.gather(ls, &[2]).unwrap();
        let loss = t.sum(picked);
        t.backward(loss).unwrap();
        let mut p = vec![0.0; 4];
        kernels::softmax_into(&logits, &mut p);
        let expected: Vec<f64> = p.iter().enumerate().map(|(i, &pi)| f64::from(i == 2) - pi).collect();
        approx(t.grad(x).unwrap(), &expected, 1e-12);
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let mut t = Tape::new();
        let w = t.leaf(&Tensor::vector(vec![3.0]));
        let loss = t.sum(w);
        t.backward(loss).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(w).unwrap(), &[2.0]);
        t.zero_grad();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(w).unwrap(), &[1.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let w = t.leaf(&Tensor::vector(vec![1.0, 2.0]));
        assert_eq!(t.backward(w).unwrap_err(), TensorError::NonScalarLoss(vec![2]));
    }

    #[test]
    fn no_grad_tape_records_nothing_differentiable() {
        let mut t = Tape::no_grad();
        let w = t.leaf(&Tensor::vector(vec![1.0, 2.0]));
        let loss = t.sum(w);
        t.backward(loss).unwrap();
        assert!(t.grad(w).is_none());
    }

    #[test]
    fn causal_rows_match_their_prefix() {
        // Row i of a masked softmax equals the unmasked softmax over its prefix.
        let scores: Vec<f64> = (0..9).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut t = Tape::no_grad();
        let s = t.constant_from(vec![3, 3], scores.clone());
        let m = t.causal_mask(s).unwrap();
        let p = t.softmax(m, 1).unwrap();
        let full = t.value(p).to_vec();
        for i in 0..3 {
            let mut row = vec![0.0; i + 1];
            kernels::softmax_into(&scores[i * 3..i * 3 + i + 1], &mut row);
            assert_eq!(&full[i * 3..i * 3 + i + 1], row.as_slice());
            assert!(full[i * 3 + i + 1..(i + 1) * 3].iter().all(|&v| v == 0.0));
        }
    }
}
