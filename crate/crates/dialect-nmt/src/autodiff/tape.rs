//! Eager Wengert-list autodiff. Every op computes its output immediately and
//! appends a node; `backward` replays the list in reverse, accumulating into
//! per-value gradient slots so fan-out sums contributions.
//!
//! Parameter tensors are registered by name as borrowed leaves, so many short
//! tapes (one per sentence) can share one parameter store without copying it.

use std::collections::BTreeMap;

use super::kernels;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::TokenId;

/// Handle into a tape. Only valid for the tape that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Val(usize);

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TapeError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} does not match data length {len}")]
    ShapeData { shape: Vec<usize>, len: usize },
    #[error("ragged rows: expected width {expected}, got {got}")]
    RaggedRows { expected: usize, got: usize },
    #[error("token id {id} out of range for table of {size}")]
    TokenOutOfRange { id: TokenId, size: usize },
    #[error("cross entropy over zero valid positions")]
    EmptyLoss,
    #[error("backward target must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op}: softmax axis {axis} invalid for shape {shape:?}")]
    Axis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: no inputs")]
    NoInputs { op: &'static str },
}

/// Accumulated named gradients, one entry per touched parameter. BTreeMap so
/// iteration order is stable across runs.
pub type GradBuffer<T> = BTreeMap<String, Vec<T>>;

enum Data<'s, T> {
    Owned(Vec<T>),
    Borrowed(&'s [T]),
}

impl<T> std::ops::Deref for Data<'_, T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        match self {
            Data::Owned(v) => v,
            Data::Borrowed(s) => s,
        }
    }
}

struct Slot<'s, T> {
    data: Data<'s, T>,
    shape: Vec<usize>,
    needs_grad: bool,
    name: Option<String>,
}

impl<T> Slot<'_, T> {
    fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }
}

enum Node<T> {
    Matmul { a: usize, b: usize, out: usize },
    MatmulNT { a: usize, b: usize, out: usize },
    Add { a: usize, b: usize, out: usize },
    Mul { a: usize, b: usize, out: usize },
    Scale { a: usize, c: T, out: usize },
    AddBias { a: usize, bias: usize, out: usize },
    Relu { a: usize, out: usize },
    Softmax { a: usize, out: usize, axis: usize },
    LayerNorm {
        a: usize,
        gamma: usize,
        beta: usize,
        out: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    CrossEntropy {
        logits: usize,
        out: usize,
        targets: Vec<TokenId>,
        valid: Vec<bool>,
        n_valid: usize,
    },
    Embed { table: usize, out: usize, ids: Vec<TokenId> },
    ConcatCols { ins: Vec<usize>, out: usize },
    ConcatRows { ins: Vec<usize>, out: usize },
    SliceCols { a: usize, out: usize, start: usize },
    Sum { a: usize, out: usize },
}

pub struct Tape<'s, T: Scalar> {
    slots: Vec<Slot<'s, T>>,
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<'s, T: Scalar> Default for Tape<'s, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s, T: Scalar> Tape<'s, T> {
    pub fn new() -> Self {
        Tape {
            slots: Vec::new(),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    // ── value registration ──

    fn push_slot(&mut self, data: Data<'s, T>, shape: Vec<usize>, needs_grad: bool, name: Option<String>) -> Val {
        self.slots.push(Slot {
            data,
            shape,
            needs_grad,
            name,
        });
        self.grads.push(None);
        Val(self.slots.len() - 1)
    }

    /// Differentiable leaf owning its data.
    pub fn input(&mut self, t: Tensor<T>) -> Val {
        let shape = t.shape().to_vec();
        self.push_slot(Data::Owned(t.data().to_vec()), shape, true, None)
    }

    /// Non-differentiable value (masks, position encodings, detached inputs).
    pub fn constant(&mut self, t: Tensor<T>) -> Val {
        let shape = t.shape().to_vec();
        self.push_slot(Data::Owned(t.data().to_vec()), shape, false, None)
    }

    /// Differentiable leaf borrowing parameter storage; gradients are later
    /// drained by name via [`Tape::take_named_grads`].
    pub fn param(&mut self, name: impl Into<String>, t: &'s Tensor<T>) -> Val {
        self.push_slot(
            Data::Borrowed(t.data()),
            t.shape().to_vec(),
            true,
            Some(name.into()),
        )
    }

    /// Borrowed non-differentiable leaf.
    pub fn frozen(&mut self, t: &'s Tensor<T>) -> Val {
        self.push_slot(Data::Borrowed(t.data()), t.shape().to_vec(), false, None)
    }

    // ── inspection ──

    pub fn value(&self, v: Val) -> &[T] {
        &self.slots[v.0].data
    }

    pub fn shape(&self, v: Val) -> &[usize] {
        &self.slots[v.0].shape
    }

    pub fn value_tensor(&self, v: Val) -> Tensor<T> {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("slot shape is valid")
    }

    /// Gradient of a value if backward reached it.
    pub fn grad(&self, v: Val) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn clear_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    /// Number of recorded op nodes (diagnostics).
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Add each named leaf's gradient into `buf`, scaled by `scale`.
    pub fn take_named_grads(&self, buf: &mut GradBuffer<T>, scale: T) {
        for (slot, grad) in self.slots.iter().zip(&self.grads) {
            let (Some(name), Some(g)) = (&slot.name, grad) else {
                continue;
            };
            let entry = buf
                .entry(name.clone())
                .or_insert_with(|| vec![T::zero(); g.len()]);
            for (e, &v) in entry.iter_mut().zip(g) {
                *e += v * scale;
            }
        }
    }

    fn needs(&self, vs: &[usize]) -> bool {
        vs.iter().any(|&v| self.slots[v].needs_grad)
    }

    // ── ops ──

    /// (m,k) x (k,n) -> (m,n)
    pub fn matmul(&mut self, a: Val, b: Val) -> Result<Val, TapeError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TapeError::Shape {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm_nn(m, k, n, T::one(), self.value(a), self.value(b), &mut out);
        let ng = self.needs(&[a.0, b.0]);
        let o = self.push_slot(Data::Owned(out), vec![m, n], ng, None);
        self.nodes.push(Node::Matmul {
            a: a.0,
            b: b.0,
            out: o.0,
        });
        Ok(o)
    }

    /// (m,k) x (n,k)^T -> (m,n). Saves materializing transposed weights.
    pub fn matmul_nt(&mut self, a: Val, b: Val) -> Result<Val, TapeError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(TapeError::Shape {
                op: "matmul_nt",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm_nt(m, k, n, T::one(), self.value(a), self.value(b), &mut out);
        let ng = self.needs(&[a.0, b.0]);
        let o = self.push_slot(Data::Owned(out), vec![m, n], ng, None);
        self.nodes.push(Node::MatmulNT {
            a: a.0,
            b: b.0,
            out: o.0,
        });
        Ok(o)
    }

    fn elementwise_guard(&self, op: &'static str, a: Val, b: Val) -> Result<(), TapeError> {
        if self.shape(a) != self.shape(b) {
            return Err(TapeError::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Val, b: Val) -> Result<Val, TapeError> {
        self.elementwise_guard("add", a, b)?;
        let out: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a.0, b.0]);
        let o = self.push_slot(Data::Owned(out), shape, ng, None);
        self.nodes.push(Node::Add {
            a: a.0,
            b: b.0,
            out: o.0,
        });
        Ok(o)
    }

    pub fn mul(&mut self, a: Val, b: Val) -> Result<Val, TapeError> {
        self.elementwise_guard("mul", a, b)?;
        let out: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a.0, b.0]);
        let o = self.push_slot(Data::Owned(out), shape, ng, None);
        self.nodes.push(Node::Mul {
            a: a.0,
            b: b.0,
            out: o.0,
        });
        Ok(o)
    }

    pub fn scale(&mut self, a: Val, c: T) -> Val {
        let out: Vec<T> = self.value(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a.0]);
        let o = self.push_slot(Data::Owned(out), shape, ng, None);
        self.nodes.push(Node::Scale { a: a.0, c, out: o.0 });
        o
    }

    /// Row-major a(m,n) + bias(n) per row.
    pub fn add_bias(&mut self, a: Val, bias: Val) -> Result<Val, TapeError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(bias).to_vec());
        if sb.len() != 1 || *sa.last().unwrap_or(&0) != sb[0] {
            return Err(TapeError::Shape {
                op: "add_bias",
                lhs: sa,
                rhs: sb,
            });
        }
        let cols = sb[0];
        let mut out = vec![T::zero(); self.value(a).len()];
        kernels::add_bias(self.value(a), self.value(bias), cols, &mut out);
        let ng = self.needs(&[a.0, bias.0]);
        let o = self.push_slot(Data::Owned(out), sa, ng, None);
        self.nodes.push(Node::AddBias {
            a: a.0,
            bias: bias.0,
            out: o.0,
        });
        Ok(o)
    }

    pub fn relu(&mut self, a: Val) -> Val {
        let mut out = vec![T::zero(); self.value(a).len()];
        kernels::relu(self.value(a), &mut out);
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a.0]);
        let o = self.push_slot(Data::Owned(out), shape, ng, None);
        self.nodes.push(Node::Relu { a: a.0, out: o.0 });
        o
    }

    /// Softmax along `axis` (0 = down columns, 1 = along rows). Rank-1 values
    /// use axis 0.
    pub fn softmax(&mut self, a: Val, axis: usize) -> Result<Val, TapeError> {
        let shape = self.shape(a).to_vec();
        let ok = match shape.len() {
            1 => axis == 0,
            2 => axis <= 1,
            _ => false,
        };
        if !ok {
            return Err(TapeError::Axis {
                op: "softmax",
                axis,
                shape,
            });
        }
        let x = self.value(a);
        let mut out = vec![T::zero(); x.len()];
        if shape.len() == 1 || axis == 1 {
            let cols = *shape.last().unwrap();
            for (orow, xrow) in out.chunks_mut(cols).zip(x.chunks(cols)) {
                kernels::softmax_row(xrow, orow);
            }
        } else {
            let (m, n) = (shape[0], shape[1]);
            let mut col = vec![T::zero(); m];
            let mut sm = vec![T::zero(); m];
            for j in 0..n {
                for i in 0..m {
                    col[i] = x[i * n + j];
                }
                kernels::softmax_row(&col, &mut sm);
                for i in 0..m {
                    out[i * n + j] = sm[i];
                }
            }
        }
        let ng = self.needs(&[a.0]);
        let o = self.push_slot(Data::Owned(out), shape, ng, None);
        self.nodes.push(Node::Softmax {
            a: a.0,
            out: o.0,
            axis,
        });
        Ok(o)
    }

    /// Row-wise layer norm with affine parameters; population variance.
    pub fn layer_norm(&mut self, a: Val, gamma: Val, beta: Val, eps: f64) -> Result<Val, TapeError> {
        let sa = self.shape(a).to_vec();
        let (sg, sb) = (self.shape(gamma).to_vec(), self.shape(beta).to_vec());
        let cols = *sa.last().unwrap_or(&0);
        if sa.is_empty() || sa.len() > 2 || sg != vec![cols] || sb != vec![cols] {
            return Err(TapeError::Shape {
                op: "layer_norm",
                lhs: sa,
                rhs: sg,
            });
        }
        let rows = self.slots[a.0].rows();
        let epst = T::from_f64(eps);
        let mut out = vec![T::zero(); rows * cols];
        let mut xhat = vec![T::zero(); rows * cols];
        let mut inv_std = vec![T::zero(); rows];
        {
            let x = self.value(a);
            let g = self.value(gamma);
            let b = self.value(beta);
            for r in 0..rows {
                inv_std[r] = kernels::layer_norm_row(
                    &x[r * cols..(r + 1) * cols],
                    g,
                    b,
                    epst,
                    &mut xhat[r * cols..(r + 1) * cols],
                    &mut out[r * cols..(r + 1) * cols],
                );
            }
        }
        let ng = self.needs(&[a.0, gamma.0, beta.0]);
        let o = self.push_slot(Data::Owned(out), sa, ng, None);
        self.nodes.push(Node::LayerNorm {
            a: a.0,
            gamma: gamma.0,
            beta: beta.0,
            out: o.0,
            xhat,
            inv_std,
        });
        Ok(o)
    }

    /// Mean token-level negative log likelihood over positions whose target is
    /// not `ignore_id`. Softmax is fused for stability. Errors if every
    /// position is ignored.
    pub fn cross_entropy(
        &mut self,
        logits: Val,
        targets: &[TokenId],
        ignore_id: TokenId,
    ) -> Result<Val, TapeError> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 || sl[0] != targets.len() {
            return Err(TapeError::Shape {
                op: "cross_entropy",
                lhs: sl,
                rhs: vec![targets.len()],
            });
        }
        let v = sl[1];
        let mut valid = Vec::with_capacity(targets.len());
        let mut n_valid = 0usize;
        for &t in targets {
            let is_valid = t != ignore_id;
            if is_valid {
                if (t as usize) >= v {
                    return Err(TapeError::TokenOutOfRange { id: t, size: v });
                }
                n_valid += 1;
            }
            valid.push(is_valid);
        }
        if n_valid == 0 {
            return Err(TapeError::EmptyLoss);
        }
        let x = self.value(logits);
        let mut total = 0.0f64;
        for (r, &t) in targets.iter().enumerate() {
            if !valid[r] {
                continue;
            }
            let row = &x[r * v..(r + 1) * v];
            let mut mx = row[0];
            for &z in &row[1..] {
                if z > mx {
                    mx = z;
                }
            }
            let mut sum = T::zero();
            for &z in row {
                sum += (z - mx).exp();
            }
            let lse = mx.as_f64() + sum.as_f64().ln();
            total += lse - row[t as usize].as_f64();
        }
        let loss = T::from_f64(total / n_valid as f64);
        let ng = self.needs(&[logits.0]);
        let o = self.push_slot(Data::Owned(vec![loss]), vec![1], ng, None);
        self.nodes.push(Node::CrossEntropy {
            logits: logits.0,
            out: o.0,
            targets: targets.to_vec(),
            valid,
            n_valid,
        });
        Ok(o)
    }

    /// Gather rows of `table` (V,d) by id -> (len,d).
    pub fn embed(&mut self, table: Val, ids: &[TokenId]) -> Result<Val, TapeError> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(TapeError::Rank {
                op: "embed",
                expected: 2,
                shape: st,
            });
        }
        let (vsize, d) = (st[0], st[1]);
        for &id in ids {
            if (id as usize) >= vsize {
                return Err(TapeError::TokenOutOfRange { id, size: vsize });
            }
        }
        let x = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&x[(id as usize) * d..(id as usize + 1) * d]);
        }
        let ng = self.needs(&[table.0]);
        let o = self.push_slot(Data::Owned(out), vec![ids.len(), d], ng, None);
        self.nodes.push(Node::Embed {
            table: table.0,
            out: o.0,
            ids: ids.to_vec(),
        });
        Ok(o)
    }

    /// Concatenate along columns; all inputs must share a row count.
    pub fn concat_cols(&mut self, ins: &[Val]) -> Result<Val, TapeError> {
        if ins.is_empty() {
            return Err(TapeError::NoInputs { op: "concat_cols" });
        }
        let rows = self.slots[ins[0].0].rows();
        let mut total_cols = 0;
        for &v in ins {
            if self.slots[v.0].rows() != rows {
                return Err(TapeError::Shape {
                    op: "concat_cols",
                    lhs: self.shape(ins[0]).to_vec(),
                    rhs: self.shape(v).to_vec(),
                });
            }
            total_cols += self.slots[v.0].cols();
        }
        let mut out = vec![T::zero(); rows * total_cols];
        let mut col_off = 0;
        for &v in ins {
            let c = self.slots[v.0].cols();
            let x = self.value(v);
            for r in 0..rows {
                out[r * total_cols + col_off..r * total_cols + col_off + c]
                    .copy_from_slice(&x[r * c..(r + 1) * c]);
            }
            col_off += c;
        }
        let idxs: Vec<usize> = ins.iter().map(|v| v.0).collect();
        let ng = self.needs(&idxs);
        let o = self.push_slot(Data::Owned(out), vec![rows, total_cols], ng, None);
        self.nodes.push(Node::ConcatCols { ins: idxs, out: o.0 });
        Ok(o)
    }

    /// Stack along rows; all inputs must share a column count. Rank-1 inputs
    /// contribute one row.
    pub fn concat_rows(&mut self, ins: &[Val]) -> Result<Val, TapeError> {
        if ins.is_empty() {
            return Err(TapeError::NoInputs { op: "concat_rows" });
        }
        let cols = self.slots[ins[0].0].cols();
        let mut total_rows = 0;
        for &v in ins {
            if self.slots[v.0].cols() != cols {
                return Err(TapeError::Shape {
                    op: "concat_rows",
                    lhs: self.shape(ins[0]).to_vec(),
                    rhs: self.shape(v).to_vec(),
                });
            }
            total_rows += self.slots[v.0].rows();
        }
        let mut out = Vec::with_capacity(total_rows * cols);
        for &v in ins {
            out.extend_from_slice(self.value(v));
        }
        let idxs: Vec<usize> = ins.iter().map(|v| v.0).collect();
        let ng = self.needs(&idxs);
        let o = self.push_slot(Data::Owned(out), vec![total_rows, cols], ng, None);
        self.nodes.push(Node::ConcatRows { ins: idxs, out: o.0 });
        Ok(o)
    }

    /// Columns [start, start+len) of a rank-2 value.
    pub fn slice_cols(&mut self, a: Val, start: usize, len: usize) -> Result<Val, TapeError> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 {
            return Err(TapeError::Rank {
                op: "slice_cols",
                expected: 2,
                shape: sa,
            });
        }
        let (rows, cols) = (sa[0], sa[1]);
        if start + len > cols {
            return Err(TapeError::Shape {
                op: "slice_cols",
                lhs: sa,
                rhs: vec![start, len],
            });
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&x[r * cols + start..r * cols + start + len]);
        }
        let ng = self.needs(&[a.0]);
        let o = self.push_slot(Data::Owned(out), vec![rows, len], ng, None);
        self.nodes.push(Node::SliceCols {
            a: a.0,
            out: o.0,
            start,
        });
        Ok(o)
    }

    /// Sum of all elements -> scalar.
    pub fn sum(&mut self, a: Val) -> Val {
        let s: T = self.value(a).iter().copied().sum();
        let ng = self.needs(&[a.0]);
        let o = self.push_slot(Data::Owned(vec![s]), vec![1], ng, None);
        self.nodes.push(Node::Sum { a: a.0, out: o.0 });
        o
    }

    // ── backward ──

    /// Reverse sweep from a scalar loss with seed gradient 1.
    pub fn backward(&mut self, loss: Val) -> Result<(), TapeError> {
        self.backward_seeded(loss, T::one())
    }

    /// Reverse sweep with an arbitrary seed. Each call runs in its own
    /// scratch buffer and merges into the stored gradients, so sweeps from
    /// several losses on one tape add up independently of call order.
    pub fn backward_seeded(&mut self, loss: Val, seed: T) -> Result<(), TapeError> {
        if self.shape(loss) != [1] {
            return Err(TapeError::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut scratch: Vec<Option<Vec<T>>> = vec![None; self.slots.len()];
        scratch[loss.0] = Some(vec![seed]);
        let Tape { slots, nodes, grads } = self;
        for node in nodes.iter().rev() {
            Self::backprop_node(node, slots, &mut scratch);
        }
        for (g, s) in grads.iter_mut().zip(scratch) {
            let Some(sv) = s else { continue };
            match g {
                Some(gv) => {
                    for (x, v) in gv.iter_mut().zip(sv) {
                        *x += v;
                    }
                }
                None => *g = Some(sv),
            }
        }
        Ok(())
    }

    fn take_out_grad(grads: &[Option<Vec<T>>], out: usize) -> Option<Vec<T>> {
        grads[out].clone()
    }

    fn acc<'g>(grads: &'g mut [Option<Vec<T>>], idx: usize, len: usize) -> &'g mut [T] {
        grads[idx].get_or_insert_with(|| vec![T::zero(); len])
    }

    #[allow(clippy::too_many_lines)]
    fn backprop_node(node: &Node<T>, slots: &[Slot<'s, T>], grads: &mut [Option<Vec<T>>]) {
        match node {
            Node::Matmul { a, b, out } => {
                let Some(dout) = Self::take_out_grad(grads, *out) else {
                    return;
                };
                let (m, k) = (slots[*a].shape[0], slots[*a].shape[1]);
                let n = slots[*b].shape[1];
                if slots[*a].needs_grad {
                    let da = Self::acc(grads, *a, m * k);
                    kernels::gemm_nt(m, n, k, T::one(), &dout, &slots[*b].data, da);
                }
                if slots[*b].needs_grad {
                    let db = Self::acc(grads, *b, k * n);
                    kernels::gemm_tn(k, m, n, T::one(), &slots[*a].data, &dout, db);
                }
            }
            Node::MatmulNT { a, b, out } => {
                let Some(dout) = Self::take_out_grad(grads, *out) else {
                    return;
                };
                let (m, k) = (slots[*a].shape[0], slots[*a].shape[1]);
                let n = slots[*b].shape[0];
                if slots[*a].needs_grad {
                    let da = Self::acc(grads, *a, m * k);
                    kernels::gemm_nn(m, n, k, T::one(), &dout, &slots[*b].data, da);
                }
                if slots[*b].needs_grad {
                    let db = Self::acc(grads, *b, n * k);
                    kernels::gemm_tn(n, m, k, T::one(), &dout, &slots[*a].data, db);
                }
            }
            Node::Add { a, b, out } => {
                let Some(dout) = Self::take_out_grad(grads, *out) else {
                    return;
                };
                for &i in &[*a, *b] {
                    if slots[i].needs_grad {
                        let d = Self::acc(grads, i, dout.len());
                        for (x, &g) in d.iter_mut().zip(&dout) {
                            *x += g;
                        }
                    }
                }
            }
            Node::Mul { a, b, out } => {
                let Some(dout) = Self::take_out_grad(grads, *out) else {
                    return;
                };
                if slots[*a].needs_grad {
                    let da = Self::acc(grads, *a, dout.len());
                    for ((x, &g), &y) in da.iter_mut().zip(&dout).zip(slots[*b].data.iter()) {
                        *x += g * y;
                    }
                }
                if slots[*b].needs_grad {
                    let db = Self::acc(grads, *b, dout.len());
                    for ((x, &g), &y) in db.iter_mut().zip(&dout).zip(slots[*a].data.iter()) {
                        *x += g * y;
                    }
                }
            }
            Node::Scale { a, c, out } => {
                let Some(dout) = Self::take_out_grad(grads, *out) else {
                    return;
                };
                if slots[*a].needs_grad {
                    let da = Self::acc(grads, *a, dout.len());
                    for (x, &g) in da.iter_mut().zip(&dout) {
                        *x += g * *c;
                    }
                }
            }
            Node::AddBias { a, bias, out } => {
                let Some(dout) = Self::take_out_grad(grads, *out) else {
                    return;
                };
                let cols = slots[*bias].shape[0];
                if slots[*a].needs_grad {
                    let da = Self::acc(grads, *a, dout.len());
                    for (x, &g) in da.iter_mut().zip(&dout) {
                        *x += g;
                    }
                }
                if slots[*bias].needs_grad {
                    let db = Self::acc(grads, *bias, cols);
                    for row in dout.chunks(cols) {
                        for (x, &g) in db.iter_mut().zip(row) {
                            *x += g;
                        }
                    }
                }
            }
            Node::Relu { a, out } => {
                let Some(dout) = Self::take_out_grad(grads, *out) else {
                    return;
                };
                if slots[*a].needs_grad {
                    let xa = &slots[*a].data;
                    let da = Self::acc(grads, *a, dout.len());
                    for ((x, &g), &v) in da.iter_mut().zip(&dout).zip(xa.iter()) {
                        if v > T::zero() {
                            *x += g;
                        }
                    }
                }
            }
            Node::Softmax { a, out, axis } => {
                let Some(dout) = Self::take_out_grad(grads, *out) else {
                    return;
                };
                if !slots[*a].needs_grad {
                    return;
                }
                let y = &slots[*out].data;
                let shape = &slots[*out].shape;
                let da = Self::acc(grads, *a, dout.len());
                if shape.len() == 1 || *axis == 1 {
                    let cols = *shape.last().unwrap();
                    for r in 0..dout.len() / cols {
                        let ys = &y[r * cols..(r + 1) * cols];
                        let gs = &dout[r * cols..(r + 1) * cols];
                        let mut dot = T::zero();
                        for (&yv, &gv) in ys.iter().zip(gs) {
                            dot += yv * gv;
                        }
                        for ((x, &yv), &gv) in da[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .zip(ys)
                            .zip(gs)
                        {
                            *x += yv * (gv - dot);
                        }
                    }
                } else {
                    let (m, n) = (shape[0], shape[1]);
                    for j in 0..n {
                        let mut dot = T::zero();
                        for i in 0..m {
                            dot += y[i * n + j] * dout[i * n + j];
                        }
                        for i in 0..m {
                            da[i * n + j] += y[i * n + j] * (dout[i * n + j] - dot);
                        }
                    }
                }
            }
            Node::LayerNorm {
                a,
                gamma,
                beta,
                out,
                xhat,
                inv_std,
            } => {
                let Some(dout) = Self::take_out_grad(grads, *out) else {
                    return;
                };
                let cols = slots[*gamma].shape[0];
                let rows = dout.len() / cols;
                let nf = T::from_f64(cols as f64);
                if slots[*a].needs_grad {
                    let g = &slots[*gamma].data;
                    let da = Self::acc(grads, *a, dout.len());
                    for r in 0..rows {
                        let dy = &dout[r * cols..(r + 1) * cols];
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        let inv = inv_std[r];
                        let mut sum1 = T::zero();
                        let mut sum2 = T::zero();
                        for j in 0..cols {
                            let dxh = dy[j] * g[j];
                            sum1 += dxh;
                            sum2 += dxh * xh[j];
                        }
                        for j in 0..cols {
                            let dxh = dy[j] * g[j];
                            da[r * cols + j] += inv * (dxh - sum1 / nf - xh[j] * sum2 / nf);
                        }
                    }
                }
                if slots[*gamma].needs_grad {
                    let dg = Self::acc(grads, *gamma, cols);
                    for r in 0..rows {
                        for j in 0..cols {
                            dg[j] += dout[r * cols + j] * xhat[r * cols + j];
                        }
                    }
                }
                if slots[*beta].needs_grad {
                    let db = Self::acc(grads, *beta, cols);
                    for row in dout.chunks(cols) {
                        for (x, &g) in db.iter_mut().zip(row) {
                            *x += g;
                        }
                    }
                }
            }
            Node::CrossEntropy {
                logits,
                out,
                targets,
                valid,
                n_valid,
            } => {
                let Some(dout) = Self::take_out_grad(grads, *out) else {
                    return;
                };
                if !slots[*logits].needs_grad {
                    return;
                }
                let seed = dout[0];
                let v = slots[*logits].shape[1];
                let x = &slots[*logits].data;
                let scale = seed / T::from_f64(*n_valid as f64);
                let dl = Self::acc(grads, *logits, x.len());
                let mut sm = vec![T::zero(); v];
                for (r, &t) in targets.iter().enumerate() {
                    if !valid[r] {
                        continue;
                    }
                    kernels::softmax_row(&x[r * v..(r + 1) * v], &mut sm);
                    for j in 0..v {
                        dl[r * v + j] += scale * sm[j];
                    }
                    dl[r * v + t as usize] -= scale;
                }
            }
            Node::Embed { table, out, ids } => {
                let Some(dout) = Self::take_out_grad(grads, *out) else {
                    return;
                };
                if !slots[*table].needs_grad {
                    return;
                }
                let d = slots[*table].shape[1];
                let len = slots[*table].data.len();
                let dt = Self::acc(grads, *table, len);
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut dt[(id as usize) * d..(id as usize + 1) * d];
                    for (x, &g) in dst.iter_mut().zip(&dout[r * d..(r + 1) * d]) {
                        *x += g;
                    }
                }
            }
            Node::ConcatCols { ins, out } => {
                let Some(dout) = Self::take_out_grad(grads, *out) else {
                    return;
                };
                let total_cols = slots[*out].shape[1];
                let rows = slots[*out].shape[0];
                let mut col_off = 0;
                for &i in ins {
                    let c = slots[i].cols();
                    if slots[i].needs_grad {
                        let di = Self::acc(grads, i, rows * c);
                        for r in 0..rows {
                            for j in 0..c {
                                di[r * c + j] += dout[r * total_cols + col_off + j];
                            }
                        }
                    }
                    col_off += c;
                }
            }
            Node::ConcatRows { ins, out } => {
                let Some(dout) = Self::take_out_grad(grads, *out) else {
                    return;
                };
                let mut off = 0;
                for &i in ins {
                    let n = slots[i].data.len();
                    if slots[i].needs_grad {
                        let di = Self::acc(grads, i, n);
                        for (x, &g) in di.iter_mut().zip(&dout[off..off + n]) {
                            *x += g;
                        }
                    }
                    off += n;
                }
            }
            Node::SliceCols { a, out, start } => {
                let Some(dout) = Self::take_out_grad(grads, *out) else {
                    return;
                };
                if !slots[*a].needs_grad {
                    return;
                }
                let (rows, len) = (slots[*out].shape[0], slots[*out].shape[1]);
                let cols = slots[*a].shape[1];
                let da = Self::acc(grads, *a, rows * cols);
                for r in 0..rows {
                    for j in 0..len {
                        da[r * cols + start + j] += dout[r * len + j];
                    }
                }
            }
            Node::Sum { a, out } => {
                let Some(dout) = Self::take_out_grad(grads, *out) else {
                    return;
                };
                if slots[*a].needs_grad {
                    let n = slots[*a].data.len();
                    let da = Self::acc(grads, *a, n);
                    for x in da.iter_mut() {
                        *x += dout[0];
                    }
                }
            }
        }
    }
}
