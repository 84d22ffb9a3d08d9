use std::borrow::Cow;
use std::collections::BTreeMap;

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, S),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    Transpose(NodeId),
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    Concat {
        inputs: Vec<NodeId>,
        axis: Axis,
    },
    SliceCols {
        input: NodeId,
        start: usize,
    },
    Toeplitz {
        table: NodeId,
        n: usize,
    },
    Sum(NodeId),
    Mean(NodeId),
    MeanRows {
        input: NodeId,
        rows: Vec<usize>,
    },
    LayerNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normalized: Vec<S>,
        inv_std: Vec<S>,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        scale: S,
        probs: Vec<S>,
    },
    Dropout {
        input: NodeId,
        mask: Vec<S>,
    },
    BceWithLogits {
        logit: NodeId,
        target: S,
    },
}

impl<S> Op<S> {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::AddBias(a, b)
            | Op::Mul(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softmax(a)
            | Op::Transpose(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Gather { table, .. } | Op::Toeplitz { table, .. } => vec![*table],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::SliceCols { input, .. }
            | Op::MeanRows { input, .. }
            | Op::Dropout { input, .. } => vec![*input],
            Op::LayerNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::BceWithLogits { logit, .. } => vec![*logit],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddBias(..) => "add_bias",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax",
            Op::Transpose(_) => "transpose",
            Op::Gather { .. } => "gather",
            Op::Toeplitz { .. } => "toeplitz",
            Op::Concat { .. } => "concat",
            Op::SliceCols { .. } => "slice_cols",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::MeanRows { .. } => "mean_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Attention { .. } => "attention",
            Op::Dropout { .. } => "dropout",
            Op::BceWithLogits { .. } => "bce_with_logits",
        }
    }
}

#[derive(Debug)]
struct Node<'a, S: Scalar> {
    op: Op<S>,
    value: Cow<'a, Tensor<S>>,
    requires_grad: bool,
}

/// Define-by-run tape. Every op evaluates eagerly and records what its
/// backward rule needs; nodes are therefore stored in topological order.
///
/// Leaves may borrow their tensors, so model parameters are never copied
/// into a graph.
#[derive(Debug, Default)]
pub struct Graph<'a, S: Scalar> {
    nodes: Vec<Node<'a, S>>,
    names: BTreeMap<String, NodeId>,
}

/// Gradients of one scalar output with respect to every node of a graph.
#[derive(Debug)]
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
    shapes: Vec<(usize, usize)>,
    names: BTreeMap<String, NodeId>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for `node`; zeros when the output does not depend on it.
    pub fn wrt(&self, node: NodeId) -> Tensor<S> {
        match &self.grads[node.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[node.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, node: NodeId) -> Tensor<S> {
        match self.grads[node.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[node.0];
                Tensor::zeros(r, c)
            }
        }
    }

    /// Gradients of all named leaves.
    pub fn named(&self) -> BTreeMap<String, Tensor<S>> {
        self.names
            .iter()
            .map(|(name, &id)| (name.clone(), self.wrt(id)))
            .collect()
    }
}

fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.dims2() != b.dims2() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.dims2(), b.dims2()),
        ));
    }
    Ok(())
}

fn accumulate<S: Scalar>(slot: &mut Option<Tensor<S>>, grad: Tensor<S>) {
    match slot {
        Some(existing) => existing.add_assign(&grad),
        None => *slot = Some(grad),
    }
}

fn zip_map<S: Scalar>(a: &[S], b: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

impl<'a, S: Scalar> Graph<'a, S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            names: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> Result<S> {
        self.value(id).item()
    }

    fn push(&mut self, op: Op<S>, value: Cow<'a, Tensor<S>>) -> Result<NodeId> {
        let requires_grad = match &op {
            Op::Leaf => true,
            _ => op.inputs().iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.push_with(op, value, requires_grad)
    }

    fn push_with(
        &mut self,
        op: Op<S>,
        value: Cow<'a, Tensor<S>>,
        requires_grad: bool,
    ) -> Result<NodeId> {
        // borrowed leaves are not scanned; anything non-finite they hold
        // surfaces at the first op that reads them
        if matches!(value, Cow::Owned(_)) && !value.is_finite() {
            return Err(Error::Numeric { op: op.name() });
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push_owned(&mut self, op: Op<S>, value: Tensor<S>) -> Result<NodeId> {
        self.push(op, Cow::Owned(value))
    }

    /// Leaf holding an owned tensor.
    pub fn leaf(&mut self, value: Tensor<S>) -> Result<NodeId> {
        self.push(Op::Leaf, Cow::Owned(value))
    }

    /// Leaf borrowing a tensor that outlives the graph.
    pub fn leaf_ref(&mut self, value: &'a Tensor<S>) -> Result<NodeId> {
        self.push(Op::Leaf, Cow::Borrowed(value))
    }

    /// Leaf excluded from differentiation; no gradient is computed for it
    /// or for anything that depends only on constants.
    pub fn constant(&mut self, value: Tensor<S>) -> Result<NodeId> {
        self.push_with(Op::Leaf, Cow::Owned(value), false)
    }

    pub fn constant_ref(&mut self, value: &'a Tensor<S>) -> Result<NodeId> {
        self.push_with(Op::Leaf, Cow::Borrowed(value), false)
    }

    /// Named leaf; its gradient is reported by [`Gradients::named`].
    pub fn input(&mut self, name: &str, value: Tensor<S>) -> Result<NodeId> {
        let id = self.leaf(value)?;
        self.names.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn named(&self, name: &str) -> Option<NodeId> {
        self.names.get(name).copied()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}×{k} · {k2}×{n}")));
        }
        let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push_owned(Op::MatMul(a, b), Tensor::from_parts(m, n, out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", va, vb)?;
        let (r, c) = va.dims2();
        let out = zip_map(va.data(), vb.data(), |x, y| x + y);
        self.push_owned(Op::Add(a, b), Tensor::from_parts(r, c, out))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("sub", va, vb)?;
        let (r, c) = va.dims2();
        let out = zip_map(va.data(), vb.data(), |x, y| x - y);
        self.push_owned(Op::Sub(a, b), Tensor::from_parts(r, c, out))
    }

    /// Adds a length-`c` bias row to every row of an `r × c` matrix. The
    /// only broadcasting the engine supports.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(a).dims2();
        let vb = self.value(bias);
        if vb.numel() != c {
            return Err(Error::shape(
                "add_bias",
                format!("bias of {} values for {c} columns", vb.numel()),
            ));
        }
        let b = vb.data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c.max(1)) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o = *o + bv;
            }
        }
        self.push_owned(Op::AddBias(a, bias), Tensor::from_parts(r, c, out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", va, vb)?;
        let (r, c) = va.dims2();
        let out = zip_map(va.data(), vb.data(), |x, y| x * y);
        self.push_owned(Op::Mul(a, b), Tensor::from_parts(r, c, out))
    }

    pub fn scale(&mut self, a: NodeId, factor: S) -> Result<NodeId> {
        let out = self.value(a).scaled(factor);
        let (r, c) = out.dims2();
        self.push_owned(
            Op::Scale(a, factor),
            Tensor::from_parts(r, c, out.into_data()),
        )
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(sigmoid);
        let (r, c) = out.dims2();
        self.push_owned(Op::Sigmoid(a), Tensor::from_parts(r, c, out.into_data()))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(|v| v.tanh());
        let (r, c) = out.dims2();
        self.push_owned(Op::Tanh(a), Tensor::from_parts(r, c, out.into_data()))
    }

    /// Softmax over the columns of each row.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(a).dims2();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c.max(1)) {
            softmax_in_place(row);
        }
        self.push_owned(Op::Softmax(a), Tensor::from_parts(r, c, out))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let (r, c) = va.dims2();
        let out = transpose(va.data(), r, c);
        self.push_owned(Op::Transpose(a), Tensor::from_parts(c, r, out))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let vt = self.value(table);
        let (rows, c) = vt.dims2();
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= rows {
                return Err(Error::shape(
                    "gather",
                    format!("row {id} out of range for {rows} rows"),
                ));
            }
            out.extend_from_slice(vt.row(id));
        }
        let op = Op::Gather {
            table,
            ids: ids.to_vec(),
        };
        self.push_owned(op, Tensor::from_parts(ids.len(), c, out))
    }

    /// `n × n` matrix with entry `(i, j) = t[j − i + c]` for a `1 × (2c + 1)`
    /// row `t`; a relative-offset table laid out for attention scores.
    pub fn toeplitz(&mut self, table: NodeId, n: usize) -> Result<NodeId> {
        let vt = self.value(table);
        let (r, m) = vt.dims2();
        if r != 1 || m % 2 == 0 || n > m / 2 + 1 {
            return Err(Error::shape(
                "toeplitz",
                format!("table {r}×{m} cannot cover {n} offsets"),
            ));
        }
        let c = m / 2;
        let t = vt.data();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            out.extend_from_slice(&t[c - i..c - i + n]);
        }
        self.push_owned(Op::Toeplitz { table, n }, Tensor::from_parts(n, n, out))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: Axis) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let dims: Vec<(usize, usize)> = inputs.iter().map(|&i| self.value(i).dims2()).collect();
        let out = match axis {
            Axis::Rows => {
                let c = dims[0].1;
                if dims.iter().any(|d| d.1 != c) {
                    return Err(Error::shape("concat", format!("column mismatch {dims:?}")));
                }
                let rows = dims.iter().map(|d| d.0).sum();
                let mut data = Vec::with_capacity(rows * c);
                for &i in inputs {
                    data.extend_from_slice(self.value(i).data());
                }
                Tensor::from_parts(rows, c, data)
            }
            Axis::Cols => {
                let r = dims[0].0;
                if dims.iter().any(|d| d.0 != r) {
                    return Err(Error::shape("concat", format!("row mismatch {dims:?}")));
                }
                let cols = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(r * cols);
                for row in 0..r {
                    for &i in inputs {
                        data.extend_from_slice(self.value(i).row(row));
                    }
                }
                Tensor::from_parts(r, cols, data)
            }
        };
        let op = Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        };
        self.push_owned(op, out)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, input: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let vi = self.value(input);
        let (r, c) = vi.dims2();
        if start >= end || end > c {
            return Err(Error::shape(
                "slice_cols",
                format!("range {start}..{end} of {c} columns"),
            ));
        }
        let mut data = Vec::with_capacity(r * (end - start));
        for row in 0..r {
            data.extend_from_slice(&vi.row(row)[start..end]);
        }
        self.push_owned(
            Op::SliceCols { input, start },
            Tensor::from_parts(r, end - start, data),
        )
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).sum();
        self.push_owned(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        if v.numel() == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let m = v.sum() / S::lit(v.numel() as f64);
        self.push_owned(Op::Mean(a), Tensor::scalar(m))
    }

    /// Mean of the selected rows, a `1 × c` row.
    pub fn mean_rows(&mut self, input: NodeId, rows: &[usize]) -> Result<NodeId> {
        let vi = self.value(input);
        let (r, c) = vi.dims2();
        if rows.is_empty() || rows.iter().any(|&i| i >= r) {
            return Err(Error::shape("mean_rows", format!("rows {rows:?} of {r}")));
        }
        let inv = S::one() / S::lit(rows.len() as f64);
        let mut out = vec![S::zero(); c];
        for &i in rows {
            for (o, &v) in out.iter_mut().zip(vi.row(i)) {
                *o = *o + v * inv;
            }
        }
        let op = Op::MeanRows {
            input,
            rows: rows.to_vec(),
        };
        self.push_owned(op, Tensor::from_parts(1, c, out))
    }

    /// Per-row layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, input: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let eps = S::lit(1e-5);
        let (r, c) = self.value(input).dims2();
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(Error::shape(
                "layer_norm",
                format!("gain/bias must have {c} values"),
            ));
        }
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let n = S::lit(c as f64);
        let mut normalized = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in x.chunks(c.max(1)) {
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let inv = S::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..c {
                let xh = (row[j] - mean) * inv;
                normalized.push(xh);
                out.push(g[j] * xh + b[j]);
            }
        }
        let op = Op::LayerNorm {
            input,
            gamma,
            beta,
            normalized,
            inv_std,
        };
        self.push_owned(op, Tensor::from_parts(r, c, out))
    }

    /// Single-head scaled dot-product attention `softmax(QKᵀ/√d) V`.
    /// Keys with `key_mask[j] == false` receive zero weight.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        key_mask: Option<&[bool]>,
    ) -> Result<NodeId> {
        let (nq, dq) = self.value(q).dims2();
        let (nk, dk) = self.value(k).dims2();
        let (nv, dv) = self.value(v).dims2();
        if dq != dk || nk != nv {
            return Err(Error::shape(
                "attention",
                format!("q {nq}×{dq}, k {nk}×{dk}, v {nv}×{dv}"),
            ));
        }
        if let Some(mask) = key_mask {
            if mask.len() != nk {
                return Err(Error::shape("attention", "key mask length"));
            }
            if !mask.iter().any(|&m| m) {
                return Err(Error::Contract("attention with every key masked".into()));
            }
        }
        let scale = S::one() / S::lit(dq as f64).sqrt();
        let mut probs = matmul_nt(self.value(q).data(), self.value(k).data(), nq, dq, nk);
        for row in probs.chunks_mut(nk.max(1)) {
            for (j, s) in row.iter_mut().enumerate() {
                *s = if key_mask.is_none_or(|m| m[j]) {
                    *s * scale
                } else {
                    S::neg_infinity()
                };
            }
            softmax_in_place(row);
        }
        let out = matmul(&probs, self.value(v).data(), nq, nk, dv);
        let op = Op::Attention {
            q,
            k,
            v,
            scale,
            probs,
        };
        self.push_owned(op, Tensor::from_parts(nq, dv, out))
    }

    /// Multiplies by a precomputed mask whose entries are 0 or `1/(1-p)`.
    pub fn dropout(&mut self, input: NodeId, mask: Vec<S>) -> Result<NodeId> {
        let vi = self.value(input);
        if mask.len() != vi.numel() {
            return Err(Error::shape("dropout", "mask length"));
        }
        let (r, c) = vi.dims2();
        let out = zip_map(vi.data(), &mask, |x, m| x * m);
        self.push_owned(Op::Dropout { input, mask }, Tensor::from_parts(r, c, out))
    }

    /// Binary cross-entropy of `σ(logit)` against `target ∈ [0, 1]`.
    pub fn bce_with_logits(&mut self, logit: NodeId, target: S) -> Result<NodeId> {
        let z = self.value(logit).item()?;
        let loss = z.max(S::zero()) - z * target + (S::one() + (-z.abs()).exp()).ln();
        self.push_owned(Op::BceWithLogits { logit, target }, Tensor::scalar(loss))
    }

    /// Reverse-mode sweep from a scalar node.
    pub fn backward(&self, output: NodeId) -> Result<Gradients<S>> {
        if output.0 >= self.nodes.len() {
            return Err(Error::State(format!(
                "node {} has not been evaluated on this graph",
                output.0
            )));
        }
        let out = self.value(output);
        if out.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(S::one()));

        for i in (0..=output.0).rev() {
            let (before, rest) = grads.split_at_mut(i);
            let Some(g) = rest[0].as_ref() else {
                continue;
            };
            self.backprop_node(i, g, before);
        }

        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.dims2()).collect(),
            grads,
            names: self.names.clone(),
        })
    }

    fn backprop_node(&self, i: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).cols();
                if self.needs(*a) {
                    let da = matmul_nt(gd, self.value(*b).data(), m, n, k);
                    accumulate(&mut grads[a.0], Tensor::from_parts(m, k, da));
                }
                if self.needs(*b) {
                    let db = matmul_tn(self.value(*a).data(), gd, m, k, n);
                    accumulate(&mut grads[b.0], Tensor::from_parts(k, n, db));
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], g.scaled(-S::one()));
                }
            }
            Op::AddBias(a, bias) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                let (br, bc) = self.value(*bias).dims2();
                let c = g.cols();
                let mut db = vec![S::zero(); c];
                for row in gd.chunks(c.max(1)) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d = *d + v;
                    }
                }
                if self.needs(*bias) {
                    accumulate(&mut grads[bias.0], Tensor::from_parts(br, bc, db));
                }
            }
            Op::Mul(a, b) => {
                let (r, c) = g.dims2();
                let da = zip_map(gd, self.value(*b).data(), |x, y| x * y);
                let db = zip_map(gd, self.value(*a).data(), |x, y| x * y);
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], Tensor::from_parts(r, c, da));
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], Tensor::from_parts(r, c, db));
                }
            }
            Op::Scale(a, factor) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], g.scaled(*factor));
                }
            }
            Op::Sigmoid(a) => {
                let (r, c) = g.dims2();
                let d = zip_map(gd, node.value.data(), |dy, y| dy * y * (S::one() - y));
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], Tensor::from_parts(r, c, d));
                }
            }
            Op::Tanh(a) => {
                let (r, c) = g.dims2();
                let d = zip_map(gd, node.value.data(), |dy, y| dy * (S::one() - y * y));
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], Tensor::from_parts(r, c, d));
                }
            }
            Op::Softmax(a) => {
                let (r, c) = g.dims2();
                let mut d = Vec::with_capacity(r * c);
                for (dy, y) in gd.chunks(c.max(1)).zip(node.value.data().chunks(c.max(1))) {
                    softmax_backward_row(dy, y, &mut d);
                }
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], Tensor::from_parts(r, c, d));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = g.dims2();
                if self.needs(*a) {
                    accumulate(
                        &mut grads[a.0],
                        Tensor::from_parts(c, r, transpose(gd, r, c)),
                    );
                }
            }
            Op::Gather { table, ids } => {
                if !self.needs(*table) {
                    return;
                }
                let (rows, c) = self.value(*table).dims2();
                let slot = &mut grads[table.0];
                let dt = slot.get_or_insert_with(|| Tensor::zeros(rows, c));
                for (k, &id) in ids.iter().enumerate() {
                    for (d, &v) in dt.row_mut(id).iter_mut().zip(g.row(k)) {
                        *d = *d + v;
                    }
                }
            }
            Op::Toeplitz { table, n } => {
                if !self.needs(*table) {
                    return;
                }
                let m = self.value(*table).cols();
                let c = m / 2;
                let slot = &mut grads[table.0];
                let dt = slot.get_or_insert_with(|| Tensor::zeros(1, m));
                let row = dt.row_mut(0);
                for i in 0..*n {
                    for (d, &v) in row[c - i..c - i + n].iter_mut().zip(g.row(i)) {
                        *d = *d + v;
                    }
                }
            }
            Op::Concat { inputs, axis } => match axis {
                Axis::Rows => {
                    let c = g.cols();
                    let mut offset = 0;
                    for inp in inputs {
                        let (r, ic) = self.value(*inp).dims2();
                        let part = gd[offset * c..(offset + r) * c].to_vec();
                        if self.needs(*inp) {
                            accumulate(&mut grads[inp.0], Tensor::from_parts(r, ic, part));
                        }
                        offset += r;
                    }
                }
                Axis::Cols => {
                    let r = g.rows();
                    let mut offset = 0;
                    for inp in inputs {
                        let (ir, c) = self.value(*inp).dims2();
                        let mut part = Vec::with_capacity(r * c);
                        for row in 0..r {
                            part.extend_from_slice(&g.row(row)[offset..offset + c]);
                        }
                        if self.needs(*inp) {
                            accumulate(&mut grads[inp.0], Tensor::from_parts(ir, c, part));
                        }
                        offset += c;
                    }
                }
            },
            Op::SliceCols { input, start } => {
                if !self.needs(*input) {
                    return;
                }
                let (r, c) = self.value(*input).dims2();
                let w = g.cols();
                let slot = &mut grads[input.0];
                let dt = slot.get_or_insert_with(|| Tensor::zeros(r, c));
                for row in 0..r {
                    let dst = &mut dt.row_mut(row)[*start..*start + w];
                    for (d, &v) in dst.iter_mut().zip(g.row(row)) {
                        *d = *d + v;
                    }
                }
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).dims2();
                if self.needs(*a) {
                    accumulate(
                        &mut grads[a.0],
                        Tensor::from_parts(r, c, vec![gd[0]; r * c]),
                    );
                }
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).dims2();
                let v = gd[0] / S::lit((r * c) as f64);
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], Tensor::from_parts(r, c, vec![v; r * c]));
                }
            }
            Op::MeanRows { input, rows } => {
                if !self.needs(*input) {
                    return;
                }
                let (r, c) = self.value(*input).dims2();
                let inv = S::one() / S::lit(rows.len() as f64);
                let slot = &mut grads[input.0];
                let dt = slot.get_or_insert_with(|| Tensor::zeros(r, c));
                for &i in rows {
                    for (d, &v) in dt.row_mut(i).iter_mut().zip(gd) {
                        *d = *d + v * inv;
                    }
                }
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let (r, c) = g.dims2();
                let gam = self.value(*gamma).data();
                let n = S::lit(c as f64);
                let mut dgamma = vec![S::zero(); c];
                let mut dbeta = vec![S::zero(); c];
                let mut dx = Vec::with_capacity(r * c);
                let mut dxhat = vec![S::zero(); c];
                for row in 0..r {
                    let dy = &gd[row * c..(row + 1) * c];
                    let xh = &normalized[row * c..(row + 1) * c];
                    for j in 0..c {
                        dgamma[j] = dgamma[j] + dy[j] * xh[j];
                        dbeta[j] = dbeta[j] + dy[j];
                        dxhat[j] = dy[j] * gam[j];
                    }
                    let sum_dxhat: S = dxhat.iter().copied().sum();
                    let sum_dxhat_xhat: S = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                    let scale = inv_std[row] / n;
                    for j in 0..c {
                        dx.push(scale * (n * dxhat[j] - sum_dxhat - xh[j] * sum_dxhat_xhat));
                    }
                }
                let (gr, gc) = self.value(*gamma).dims2();
                let (br, bc) = self.value(*beta).dims2();
                if self.needs(*input) {
                    accumulate(&mut grads[input.0], Tensor::from_parts(r, c, dx));
                }
                if self.needs(*gamma) {
                    accumulate(&mut grads[gamma.0], Tensor::from_parts(gr, gc, dgamma));
                }
                if self.needs(*beta) {
                    accumulate(&mut grads[beta.0], Tensor::from_parts(br, bc, dbeta));
                }
            }
            Op::Attention {
                q,
                k,
                v,
                scale,
                probs,
            } => {
                let (nq, d) = self.value(*q).dims2();
                let (nk, dv) = self.value(*v).dims2();
                // dV = Pᵀ dO, dP = dO Vᵀ
                if self.needs(*v) {
                    let dvals = matmul_tn(probs, gd, nq, nk, dv);
                    accumulate(&mut grads[v.0], Tensor::from_parts(nk, dv, dvals));
                }
                if !self.needs(*q) && !self.needs(*k) {
                    return;
                }
                let dp = matmul_nt(gd, self.value(*v).data(), nq, dv, nk);
                let mut ds = Vec::with_capacity(nq * nk);
                for (dy, y) in dp.chunks(nk.max(1)).zip(probs.chunks(nk.max(1))) {
                    softmax_backward_row(dy, y, &mut ds);
                }
                for s in ds.iter_mut() {
                    *s = *s * *scale;
                }
                if self.needs(*q) {
                    let dq = matmul(&ds, self.value(*k).data(), nq, nk, d);
                    accumulate(&mut grads[q.0], Tensor::from_parts(nq, d, dq));
                }
                if self.needs(*k) {
                    let dk = matmul_tn(&ds, self.value(*q).data(), nq, nk, d);
                    accumulate(&mut grads[k.0], Tensor::from_parts(nk, d, dk));
                }
            }
            Op::Dropout { input, mask } => {
                let (r, c) = g.dims2();
                let d = zip_map(gd, mask, |x, m| x * m);
                if self.needs(*input) {
                    accumulate(&mut grads[input.0], Tensor::from_parts(r, c, d));
                }
            }
            Op::BceWithLogits { logit, target } => {
                let z = self.value(*logit);
                let (r, c) = z.dims2();
                let d = (sigmoid(z.data()[0]) - *target) * gd[0];
                if self.needs(*logit) {
                    accumulate(&mut grads[logit.0], Tensor::from_parts(r, c, vec![d]));
                }
            }
        }
    }
}

fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for v in row.iter_mut() {
        *v = if v.is_infinite() && *v < S::zero() {
            S::zero()
        } else {
            (*v - max).exp()
        };
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

fn softmax_backward_row<S: Scalar>(dy: &[S], y: &[S], out: &mut Vec<S>) {
    let dot: S = dy.iter().zip(y).map(|(&a, &b)| a * b).sum();
    out.extend(dy.iter().zip(y).map(|(&d, &p)| p * (d - dot)));
}

fn transpose<S: Scalar>(data: &[S], r: usize, c: usize) -> Vec<S> {
    let mut out = vec![S::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = data[i * c + j];
        }
    }
    out
}
