//! Reverse-mode computation graph.
//!
//! Ops append nodes to an arena; parents always precede children, so the
//! backward pass is a single reverse sweep over node ids. The sweep order is
//! a pure function of construction order, which keeps gradient accumulation
//! deterministic for seeded tests.

use super::kernels;
use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(pub(crate) usize);

enum Op<S: Scalar> {
    Leaf,
    Matmul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddRow { x: usize, v: usize },
    Scale { x: usize, c: S },
    AddScalar { x: usize },
    Transpose { x: usize },
    Conv1d { x: usize, kernel: usize, bias: usize, stride: usize, groups: usize },
    PadCols { x: usize, left: usize },
    SliceCols { x: usize, start: usize },
    ConcatCols { parts: Vec<usize> },
    Gelu { x: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, cache: Vec<S> },
    Softmax { x: usize },
    MeanAxis { x: usize, axis: usize },
    SumAll { x: usize },
    MeanAll { x: usize },
    GatherRows { x: usize, idx: Vec<usize> },
    ReplaceRows { x: usize, v: usize, rows: Vec<usize> },
    CosineRows { a: usize, b: usize, cache: Vec<(S, S, S)> },
    CrossEntropy { logits: usize, targets: Vec<usize>, probs: Vec<S> },
    StraightThrough { soft: usize },
    Ln { x: usize },
    Exp { x: usize },
    Reshape { x: usize },
}

struct Node<S: Scalar> {
    data: Vec<S>,
    shape: Vec<usize>,
    requires_grad: bool,
    op: Op<S>,
}

/// Arena-based computation graph for one forward/backward pass.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
    backward_run: bool,
    zero_norm_cosine: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Interpret a shape as rows x cols over the last axis (rank 1 = one row).
fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        1 => (1, shape[0]),
        _ => (numel(&shape[..shape.len() - 1]), shape[shape.len() - 1]),
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), backward_run: false, zero_norm_cosine: false }
    }

    /// True if a cosine similarity saw a zero-norm vector (defined result 0).
    pub fn zero_norm_flagged(&self) -> bool {
        self.zero_norm_cosine
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<S>, shape: Vec<usize>, requires_grad: bool, op: Op<S>) -> TensorRef {
        debug_assert_eq!(data.len(), numel(&shape));
        self.nodes.push(Node { data, shape, requires_grad, op });
        self.grads.push(None);
        TensorRef(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn data(&self, t: TensorRef) -> &[S] {
        &self.nodes[t.0].data
    }

    pub fn shape(&self, t: TensorRef) -> &[usize] {
        &self.nodes[t.0].shape
    }

    /// Value of a single-element tensor.
    pub fn scalar_value(&self, t: TensorRef) -> S {
        debug_assert_eq!(self.nodes[t.0].data.len(), 1);
        self.nodes[t.0].data[0]
    }

    /// Gradient buffer of `t`, if backward reached it.
    pub fn grad(&self, t: TensorRef) -> Option<&[S]> {
        self.grads[t.0].as_deref()
    }

    /// Clear gradients so backward may run again on the same graph.
    pub fn reset_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
        self.backward_run = false;
    }

    // ── Construction ───────────────────────────────────────────────────

    pub fn leaf(&mut self, data: Vec<S>, shape: Vec<usize>, requires_grad: bool) -> Result<TensorRef> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("leaf", format!("shape {:?} has a zero or missing dimension", shape)));
        }
        if data.len() != numel(&shape) {
            return Err(Error::shape(
                "leaf",
                format!("data length {} != product of shape {:?} = {}", data.len(), shape, numel(&shape)),
            ));
        }
        Ok(self.push(data, shape, requires_grad, Op::Leaf))
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, data: Vec<S>, shape: Vec<usize>) -> Result<TensorRef> {
        self.leaf(data, shape, false)
    }

    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape("matmul", format!("expected rank-2 operands, got {:?} and {:?}", sa, sb)));
        }
        let (m, k) = (sa[0], sa[1]);
        let (k2, n) = (sb[0], sb[1]);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions disagree: lhs columns {} vs rhs rows {}", k, k2),
            ));
        }
        let mut out = vec![S::ZERO; m * n];
        kernels::matmul(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n, &mut out, false);
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(out, vec![m, n], rg, Op::Matmul { a: a.0, b: b.0 }))
    }

    fn elementwise_pair(&self, op: &'static str, a: TensorRef, b: TensorRef) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::shape(
                op,
                format!("operand shapes differ: {:?} vs {:?}", self.nodes[a.0].shape, self.nodes[b.0].shape),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.elementwise_pair("add", a, b)?;
        let data: Vec<S> =
            self.nodes[a.0].data.iter().zip(&self.nodes[b.0].data).map(|(&x, &y)| x + y).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(data, shape, rg, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.elementwise_pair("sub", a, b)?;
        let data: Vec<S> =
            self.nodes[a.0].data.iter().zip(&self.nodes[b.0].data).map(|(&x, &y)| x - y).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(data, shape, rg, Op::Sub { a: a.0, b: b.0 }))
    }

    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.elementwise_pair("mul", a, b)?;
        let data: Vec<S> =
            self.nodes[a.0].data.iter().zip(&self.nodes[b.0].data).map(|(&x, &y)| x * y).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(data, shape, rg, Op::Mul { a: a.0, b: b.0 }))
    }

    /// Broadcast-add a row vector `v[d]` to every row of `x[n, d]`.
    pub fn add_row(&mut self, x: TensorRef, v: TensorRef) -> Result<TensorRef> {
        let (n, d) = rows_cols(&self.nodes[x.0].shape);
        let sv = &self.nodes[v.0].shape;
        if sv.len() != 1 || sv[0] != d {
            return Err(Error::shape(
                "add_row",
                format!("row vector has shape {:?}, want [{}] to match x columns", sv, d),
            ));
        }
        let mut data = self.nodes[x.0].data.clone();
        for i in 0..n {
            for j in 0..d {
                data[i * d + j] += self.nodes[v.0].data[j];
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg(&[x.0, v.0]);
        Ok(self.push(data, shape, rg, Op::AddRow { x: x.0, v: v.0 }))
    }

    pub fn scale(&mut self, x: TensorRef, c: S) -> Result<TensorRef> {
        let data: Vec<S> = self.nodes[x.0].data.iter().map(|&v| v * c).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg(&[x.0]);
        Ok(self.push(data, shape, rg, Op::Scale { x: x.0, c }))
    }

    pub fn add_scalar(&mut self, x: TensorRef, c: S) -> Result<TensorRef> {
        let data: Vec<S> = self.nodes[x.0].data.iter().map(|&v| v + c).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg(&[x.0]);
        Ok(self.push(data, shape, rg, Op::AddScalar { x: x.0 }))
    }

    pub fn transpose(&mut self, x: TensorRef) -> Result<TensorRef> {
        let s = &self.nodes[x.0].shape;
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("expected rank-2, got {:?}", s)));
        }
        let (m, n) = (s[0], s[1]);
        let src = &self.nodes[x.0].data;
        let mut data = vec![S::ZERO; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(data, vec![n, m], rg, Op::Transpose { x: x.0 }))
    }

    /// Valid 1-D convolution: input [cin, len], kernel [cout, cin, width],
    /// bias [cout]. Output [cout, (len - width)/stride + 1].
    pub fn conv1d(&mut self, input: TensorRef, kernel: TensorRef, bias: TensorRef, stride: usize) -> Result<TensorRef> {
        self.conv1d_grouped(input, kernel, bias, stride, 1)
    }

    /// Grouped variant; kernel is [cout, cin/groups, width].
    pub fn conv1d_grouped(
        &mut self,
        input: TensorRef,
        kernel: TensorRef,
        bias: TensorRef,
        stride: usize,
        groups: usize,
    ) -> Result<TensorRef> {
        let sx = &self.nodes[input.0].shape;
        let sk = &self.nodes[kernel.0].shape;
        let sb = &self.nodes[bias.0].shape;
        if sx.len() != 2 {
            return Err(Error::shape("conv1d", format!("input must be [channels_in, length], got {:?}", sx)));
        }
        if sk.len() != 3 {
            return Err(Error::shape(
                "conv1d",
                format!("kernel must be [channels_out, channels_in/groups, width], got {:?}", sk),
            ));
        }
        let (cin, len) = (sx[0], sx[1]);
        let (cout, kin, width) = (sk[0], sk[1], sk[2]);
        if stride < 1 {
            return Err(Error::invalid("conv1d", "stride must be >= 1"));
        }
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::shape(
                "conv1d",
                format!("groups {} must divide channels_in {} and channels_out {}", groups, cin, cout),
            ));
        }
        if kin != cin / groups {
            return Err(Error::shape(
                "conv1d",
                format!("kernel channels_in {} != input channels {} / groups {}", kin, cin, groups),
            ));
        }
        if len < width {
            return Err(Error::shape(
                "conv1d",
                format!("input length {} shorter than kernel width {}", len, width),
            ));
        }
        if sb.len() != 1 || sb[0] != cout {
            return Err(Error::shape(
                "conv1d",
                format!("bias has shape {:?}, want [{}] to match channels_out", sb, cout),
            ));
        }
        let lout = kernels::conv1d_out_len(len, width, stride);
        let mut out = vec![S::ZERO; cout * lout];
        kernels::conv1d_forward(
            &self.nodes[input.0].data,
            &self.nodes[kernel.0].data,
            &self.nodes[bias.0].data,
            cin,
            len,
            cout,
            width,
            stride,
            groups,
            &mut out,
        );
        let rg = self.rg(&[input.0, kernel.0, bias.0]);
        Ok(self.push(out, vec![cout, lout], rg, Op::Conv1d { x: input.0, kernel: kernel.0, bias: bias.0, stride, groups }))
    }

    /// Zero-pad columns: [c, l] -> [c, left + l + right].
    pub fn pad_cols(&mut self, x: TensorRef, left: usize, right: usize) -> Result<TensorRef> {
        let s = &self.nodes[x.0].shape;
        if s.len() != 2 {
            return Err(Error::shape("pad_cols", format!("expected rank-2, got {:?}", s)));
        }
        let (c, l) = (s[0], s[1]);
        let lo = left + l + right;
        let src = &self.nodes[x.0].data;
        let mut data = vec![S::ZERO; c * lo];
        for i in 0..c {
            data[i * lo + left..i * lo + left + l].copy_from_slice(&src[i * l..(i + 1) * l]);
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(data, vec![c, lo], rg, Op::PadCols { x: x.0, left }))
    }

    /// Columns [start, start+len) of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: TensorRef, start: usize, len: usize) -> Result<TensorRef> {
        let s = &self.nodes[x.0].shape;
        if s.len() != 2 {
            return Err(Error::shape("slice_cols", format!("expected rank-2, got {:?}", s)));
        }
        let (n, d) = (s[0], s[1]);
        if start + len > d {
            return Err(Error::shape(
                "slice_cols",
                format!("columns [{}, {}) out of range for width {}", start, start + len, d),
            ));
        }
        let src = &self.nodes[x.0].data;
        let mut data = vec![S::ZERO; n * len];
        for i in 0..n {
            data[i * len..(i + 1) * len].copy_from_slice(&src[i * d + start..i * d + start + len]);
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(data, vec![n, len], rg, Op::SliceCols { x: x.0, start }))
    }

    /// Concatenate rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[TensorRef]) -> Result<TensorRef> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_cols", "no parts given"));
        }
        let n = self.nodes[parts[0].0].shape[0];
        let mut total = 0usize;
        for p in parts {
            let s = &self.nodes[p.0].shape;
            if s.len() != 2 || s[0] != n {
                return Err(Error::shape(
                    "concat_cols",
                    format!("part shape {:?} incompatible with {} rows", s, n),
                ));
            }
            total += s[1];
        }
        let mut data = vec![S::ZERO; n * total];
        let mut col = 0usize;
        for p in parts {
            let d = self.nodes[p.0].shape[1];
            let src = &self.nodes[p.0].data;
            for i in 0..n {
                data[i * total + col..i * total + col + d].copy_from_slice(&src[i * d..(i + 1) * d]);
            }
            col += d;
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(data, vec![n, total], rg, Op::ConcatCols { parts: ids }))
    }

    pub fn gelu(&mut self, x: TensorRef) -> Result<TensorRef> {
        let data: Vec<S> = self.nodes[x.0].data.iter().map(|&v| kernels::gelu(v)).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg(&[x.0]);
        Ok(self.push(data, shape, rg, Op::Gelu { x: x.0 }))
    }

    /// Per-row layer normalization with affine scale/shift. The normalized
    /// value has mean 0 and variance 1 over the last axis before gamma/beta.
    pub fn layer_norm(&mut self, x: TensorRef, gamma: TensorRef, beta: TensorRef, eps: f64) -> Result<TensorRef> {
        let (n, d) = rows_cols(&self.nodes[x.0].shape);
        for (name, t) in [("gamma", gamma), ("beta", beta)] {
            let s = &self.nodes[t.0].shape;
            if numel(s) != d {
                return Err(Error::shape(
                    "layer_norm",
                    format!("{} has shape {:?}, want {} elements to match feature dim", name, s, d),
                ));
            }
        }
        let eps = S::from_f64(eps);
        let inv_d = S::from_f64(1.0 / d as f64);
        let src = &self.nodes[x.0].data;
        let g = &self.nodes[gamma.0].data;
        let b = &self.nodes[beta.0].data;
        let mut data = vec![S::ZERO; n * d];
        let mut cache = vec![S::ZERO; 2 * n];
        for i in 0..n {
            let row = &src[i * d..(i + 1) * d];
            let mut mean = S::ZERO;
            for &v in row {
                mean += v;
            }
            mean *= inv_d;
            let mut var = S::ZERO;
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            let rstd = S::ONE / (var + eps).sqrt();
            cache[2 * i] = mean;
            cache[2 * i + 1] = rstd;
            for j in 0..d {
                data[i * d + j] = (row[j] - mean) * rstd * g[j] + b[j];
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg(&[x.0, gamma.0, beta.0]);
        Ok(self.push(data, shape, rg, Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, cache }))
    }

    /// Softmax over the last axis (rank 1 treated as a single row).
    pub fn softmax(&mut self, x: TensorRef) -> Result<TensorRef> {
        let (n, d) = rows_cols(&self.nodes[x.0].shape);
        let src = &self.nodes[x.0].data;
        let mut data = vec![S::ZERO; n * d];
        for i in 0..n {
            let row = &src[i * d..(i + 1) * d];
            let mut m = row[0];
            for &v in row {
                m = m.maximum(v);
            }
            let mut z = S::ZERO;
            for j in 0..d {
                let e = (row[j] - m).exp();
                data[i * d + j] = e;
                z += e;
            }
            let inv = S::ONE / z;
            for j in 0..d {
                data[i * d + j] *= inv;
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg(&[x.0]);
        Ok(self.push(data, shape, rg, Op::Softmax { x: x.0 }))
    }

    /// Mean over one axis of a rank-2 tensor: axis 0 -> [d], axis 1 -> [n].
    pub fn mean_axis(&mut self, x: TensorRef, axis: usize) -> Result<TensorRef> {
        let s = &self.nodes[x.0].shape;
        if s.len() != 2 {
            return Err(Error::shape("mean_axis", format!("expected rank-2, got {:?}", s)));
        }
        if axis > 1 {
            return Err(Error::invalid("mean_axis", "axis must be 0 or 1"));
        }
        let (n, d) = (s[0], s[1]);
        let src = &self.nodes[x.0].data;
        let (out_len, shape) = if axis == 0 { (d, vec![d]) } else { (n, vec![n]) };
        let mut data = vec![S::ZERO; out_len];
        if axis == 0 {
            let inv = S::from_f64(1.0 / n as f64);
            for i in 0..n {
                for j in 0..d {
                    data[j] += src[i * d + j];
                }
            }
            for v in &mut data {
                *v *= inv;
            }
        } else {
            let inv = S::from_f64(1.0 / d as f64);
            for i in 0..n {
                let mut acc = S::ZERO;
                for j in 0..d {
                    acc += src[i * d + j];
                }
                data[i] = acc * inv;
            }
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(data, shape, rg, Op::MeanAxis { x: x.0, axis }))
    }

    pub fn sum_all(&mut self, x: TensorRef) -> Result<TensorRef> {
        let mut acc = S::ZERO;
        for &v in &self.nodes[x.0].data {
            acc += v;
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(vec![acc], vec![1], rg, Op::SumAll { x: x.0 }))
    }

    pub fn mean_all(&mut self, x: TensorRef) -> Result<TensorRef> {
        let n = self.nodes[x.0].data.len();
        let mut acc = S::ZERO;
        for &v in &self.nodes[x.0].data {
            acc += v;
        }
        let rg = self.rg(&[x.0]);
        let mean = acc * S::from_f64(1.0 / n as f64);
        Ok(self.push(vec![mean], vec![1], rg, Op::MeanAll { x: x.0 }))
    }

    /// Select rows of `x[n, d]` by index (duplicates allowed; gradients
    /// scatter-add back).
    pub fn gather_rows(&mut self, x: TensorRef, idx: &[usize]) -> Result<TensorRef> {
        let s = &self.nodes[x.0].shape;
        if s.len() != 2 {
            return Err(Error::shape("gather_rows", format!("expected rank-2, got {:?}", s)));
        }
        let (n, d) = (s[0], s[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::invalid("gather_rows", format!("row index {} out of range for {} rows", bad, n)));
        }
        let src = &self.nodes[x.0].data;
        let mut data = vec![S::ZERO; idx.len() * d];
        for (r, &i) in idx.iter().enumerate() {
            data[r * d..(r + 1) * d].copy_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(data, vec![idx.len(), d], rg, Op::GatherRows { x: x.0, idx: idx.to_vec() }))
    }

    /// Copy of `x[n, d]` with the listed rows replaced by the vector `v[d]`.
    pub fn replace_rows(&mut self, x: TensorRef, v: TensorRef, rows: &[usize]) -> Result<TensorRef> {
        let s = &self.nodes[x.0].shape;
        if s.len() != 2 {
            return Err(Error::shape("replace_rows", format!("expected rank-2, got {:?}", s)));
        }
        let (n, d) = (s[0], s[1]);
        if numel(&self.nodes[v.0].shape) != d {
            return Err(Error::shape(
                "replace_rows",
                format!("replacement vector shape {:?}, want {} elements", self.nodes[v.0].shape, d),
            ));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::invalid("replace_rows", format!("row index {} out of range for {} rows", bad, n)));
        }
        let mut data = self.nodes[x.0].data.clone();
        let vd = &self.nodes[v.0].data;
        for &r in rows {
            data[r * d..(r + 1) * d].copy_from_slice(vd);
        }
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg(&[x.0, v.0]);
        let mut rows = rows.to_vec();
        rows.sort_unstable();
        rows.dedup();
        Ok(self.push(data, shape, rg, Op::ReplaceRows { x: x.0, v: v.0, rows }))
    }

    /// Row-wise cosine similarity of two [p, d] tensors -> [p]. A row where
    /// either vector has zero norm yields 0 and sets the warning flag.
    pub fn cosine_rows(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.elementwise_pair("cosine_rows", a, b)?;
        let (p, d) = rows_cols(&self.nodes[a.0].shape);
        let da = &self.nodes[a.0].data;
        let db = &self.nodes[b.0].data;
        let mut data = vec![S::ZERO; p];
        let mut cache = Vec::with_capacity(p);
        let mut flagged = false;
        for i in 0..p {
            let ra = &da[i * d..(i + 1) * d];
            let rb = &db[i * d..(i + 1) * d];
            let mut dot = S::ZERO;
            let mut qa = S::ZERO;
            let mut qb = S::ZERO;
            for j in 0..d {
                dot += ra[j] * rb[j];
                qa += ra[j] * ra[j];
                qb += rb[j] * rb[j];
            }
            let na = qa.sqrt();
            let nb = qb.sqrt();
            if na == S::ZERO || nb == S::ZERO {
                flagged = true;
                data[i] = S::ZERO;
            } else {
                data[i] = dot / (na * nb);
            }
            cache.push((dot, na, nb));
        }
        if flagged {
            self.zero_norm_cosine = true;
        }
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(data, vec![p], rg, Op::CosineRows { a: a.0, b: b.0, cache }))
    }

    /// Mean negative log-softmax of the target class per row (scalar output).
    pub fn cross_entropy(&mut self, logits: TensorRef, targets: &[usize]) -> Result<TensorRef> {
        let (n, c) = rows_cols(&self.nodes[logits.0].shape);
        if targets.len() != n {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} targets for {} logit rows", targets.len(), n),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::invalid("cross_entropy", format!("target class {} out of range for {} classes", bad, c)));
        }
        let src = &self.nodes[logits.0].data;
        let mut probs = vec![S::ZERO; n * c];
        let mut total = S::ZERO;
        for i in 0..n {
            let row = &src[i * c..(i + 1) * c];
            let mut m = row[0];
            for &v in row {
                m = m.maximum(v);
            }
            let mut z = S::ZERO;
            for j in 0..c {
                let e = (row[j] - m).exp();
                probs[i * c + j] = e;
                z += e;
            }
            let inv = S::ONE / z;
            for j in 0..c {
                probs[i * c + j] *= inv;
            }
            // loss_i = log(sum exp(l - m)) + m - l[target]
            total += z.ln() + m - row[targets[i]];
        }
        let loss = total * S::from_f64(1.0 / n as f64);
        let rg = self.rg(&[logits.0]);
        Ok(self.push(vec![loss], vec![1], rg, Op::CrossEntropy { logits: logits.0, targets: targets.to_vec(), probs }))
    }

    /// Row-wise hard one-hot at the argmax (first max on ties) with the
    /// identity as its backward map (straight-through estimator).
    pub fn straight_through_onehot(&mut self, soft: TensorRef) -> Result<TensorRef> {
        let (n, d) = rows_cols(&self.nodes[soft.0].shape);
        let src = &self.nodes[soft.0].data;
        let mut data = vec![S::ZERO; n * d];
        for i in 0..n {
            let row = &src[i * d..(i + 1) * d];
            let mut best = 0usize;
            for j in 1..d {
                if row[j] > row[best] {
                    best = j;
                }
            }
            data[i * d + best] = S::ONE;
        }
        let shape = self.nodes[soft.0].shape.clone();
        let rg = self.rg(&[soft.0]);
        Ok(self.push(data, shape, rg, Op::StraightThrough { soft: soft.0 }))
    }

    /// Elementwise natural log (caller ensures positive inputs).
    pub fn ln(&mut self, x: TensorRef) -> Result<TensorRef> {
        let data: Vec<S> = self.nodes[x.0].data.iter().map(|&v| v.ln()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg(&[x.0]);
        Ok(self.push(data, shape, rg, Op::Ln { x: x.0 }))
    }

    pub fn exp(&mut self, x: TensorRef) -> Result<TensorRef> {
        let data: Vec<S> = self.nodes[x.0].data.iter().map(|&v| v.exp()).collect();
        let shape = self.nodes[x.0].shape.clone();
        let rg = self.rg(&[x.0]);
        Ok(self.push(data, shape, rg, Op::Exp { x: x.0 }))
    }

    pub fn reshape(&mut self, x: TensorRef, shape: Vec<usize>) -> Result<TensorRef> {
        if numel(&shape) != self.nodes[x.0].data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot reshape {} elements into {:?}", self.nodes[x.0].data.len(), shape),
            ));
        }
        let data = self.nodes[x.0].data.clone();
        let rg = self.rg(&[x.0]);
        Ok(self.push(data, shape, rg, Op::Reshape { x: x.0 }))
    }

    // ── Backward ───────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Fails if run twice without
    /// [`Graph::reset_grads`].
    pub fn backward(&mut self, loss: TensorRef) -> Result<()> {
        if self.backward_run {
            return Err(Error::BackwardAlreadyRun);
        }
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.nodes[loss.0].shape),
            ));
        }
        self.backward_run = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(()); // nothing trainable reaches the loss
        }
        self.grads[loss.0] = Some(vec![S::ONE]);
        for id in (0..=loss.0).rev() {
            if self.grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let g = self.grads[id].take().unwrap();
            self.propagate(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn ensure_grad(grads: &mut [Option<Vec<S>>], nodes: &[Node<S>], id: usize) -> bool {
        if !nodes[id].requires_grad {
            return false;
        }
        if grads[id].is_none() {
            grads[id] = Some(vec![S::ZERO; nodes[id].data.len()]);
        }
        true
    }

    fn propagate(&mut self, id: usize, g: &[S]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        match &nodes[id].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                let n = nodes[*b].shape[1];
                if Self::ensure_grad(grads, nodes, *a) {
                    let da = grads[*a].as_mut().unwrap();
                    kernels::matmul_a_bt(g, &nodes[*b].data, m, n, k, da);
                }
                if Self::ensure_grad(grads, nodes, *b) {
                    let db = grads[*b].as_mut().unwrap();
                    kernels::matmul_at_b(&nodes[*a].data, g, m, k, n, db);
                }
            }
            Op::Add { a, b } => {
                for &p in &[*a, *b] {
                    if Self::ensure_grad(grads, nodes, p) {
                        let d = grads[p].as_mut().unwrap();
                        for (dst, &gv) in d.iter_mut().zip(g) {
                            *dst += gv;
                        }
                    }
                }
            }
            Op::Sub { a, b } => {
                if Self::ensure_grad(grads, nodes, *a) {
                    let d = grads[*a].as_mut().unwrap();
                    for (dst, &gv) in d.iter_mut().zip(g) {
                        *dst += gv;
                    }
                }
                if Self::ensure_grad(grads, nodes, *b) {
                    let d = grads[*b].as_mut().unwrap();
                    for (dst, &gv) in d.iter_mut().zip(g) {
                        *dst -= gv;
                    }
                }
            }
            Op::Mul { a, b } => {
                if Self::ensure_grad(grads, nodes, *a) {
                    let bd = &nodes[*b].data;
                    let d = grads[*a].as_mut().unwrap();
                    for i in 0..d.len() {
                        d[i] += g[i] * bd[i];
                    }
                }
                if Self::ensure_grad(grads, nodes, *b) {
                    let ad = &nodes[*a].data;
                    let d = grads[*b].as_mut().unwrap();
                    for i in 0..d.len() {
                        d[i] += g[i] * ad[i];
                    }
                }
            }
            Op::AddRow { x, v } => {
                let (n, d) = rows_cols(&nodes[id].shape);
                if Self::ensure_grad(grads, nodes, *x) {
                    let dx = grads[*x].as_mut().unwrap();
                    for (dst, &gv) in dx.iter_mut().zip(g) {
                        *dst += gv;
                    }
                }
                if Self::ensure_grad(grads, nodes, *v) {
                    let dv = grads[*v].as_mut().unwrap();
                    for i in 0..n {
                        for j in 0..d {
                            dv[j] += g[i * d + j];
                        }
                    }
                }
            }
            Op::Scale { x, c } => {
                let c = *c;
                if Self::ensure_grad(grads, nodes, *x) {
                    let dx = grads[*x].as_mut().unwrap();
                    for (dst, &gv) in dx.iter_mut().zip(g) {
                        *dst += gv * c;
                    }
                }
            }
            Op::AddScalar { x } => {
                if Self::ensure_grad(grads, nodes, *x) {
                    let dx = grads[*x].as_mut().unwrap();
                    for (dst, &gv) in dx.iter_mut().zip(g) {
                        *dst += gv;
                    }
                }
            }
            Op::Transpose { x } => {
                let (m, n) = (nodes[*x].shape[0], nodes[*x].shape[1]);
                if Self::ensure_grad(grads, nodes, *x) {
                    let dx = grads[*x].as_mut().unwrap();
                    // out is [n, m]; g[j, i] flows to dx[i, j]
                    for j in 0..n {
                        for i in 0..m {
                            dx[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Conv1d { x, kernel, bias, stride, groups } => {
                let (cin, len) = (nodes[*x].shape[0], nodes[*x].shape[1]);
                let (cout, width) = (nodes[*kernel].shape[0], nodes[*kernel].shape[2]);
                let (stride, groups) = (*stride, *groups);
                let want_x = Self::ensure_grad(grads, nodes, *x);
                let want_w = Self::ensure_grad(grads, nodes, *kernel);
                let want_b = Self::ensure_grad(grads, nodes, *bias);
                // split disjoint mutable borrows via raw pointers into grads
                let (x_id, k_id, b_id) = (*x, *kernel, *bias);
                let mut dx_buf = if want_x { grads[x_id].take() } else { None };
                let mut dw_buf = if want_w { grads[k_id].take() } else { None };
                let mut db_buf = if want_b { grads[b_id].take() } else { None };
                kernels::conv1d_backward(
                    &nodes[x_id].data,
                    &nodes[k_id].data,
                    g,
                    cin,
                    len,
                    cout,
                    width,
                    stride,
                    groups,
                    dx_buf.as_deref_mut(),
                    dw_buf.as_deref_mut(),
                    db_buf.as_deref_mut(),
                );
                if let Some(b) = dx_buf {
                    grads[x_id] = Some(b);
                }
                if let Some(b) = dw_buf {
                    grads[k_id] = Some(b);
                }
                if let Some(b) = db_buf {
                    grads[b_id] = Some(b);
                }
            }
            Op::PadCols { x, left } => {
                let (c, l) = (nodes[*x].shape[0], nodes[*x].shape[1]);
                let lo = nodes[id].shape[1];
                let left = *left;
                if Self::ensure_grad(grads, nodes, *x) {
                    let dx = grads[*x].as_mut().unwrap();
                    for i in 0..c {
                        for j in 0..l {
                            dx[i * l + j] += g[i * lo + left + j];
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (n, d) = (nodes[*x].shape[0], nodes[*x].shape[1]);
                let len = nodes[id].shape[1];
                let start = *start;
                if Self::ensure_grad(grads, nodes, *x) {
                    let dx = grads[*x].as_mut().unwrap();
                    for i in 0..n {
                        for j in 0..len {
                            dx[i * d + start + j] += g[i * len + j];
                        }
                    }
                }
                let _ = n;
            }
            Op::ConcatCols { parts } => {
                let parts = parts.clone();
                let n = nodes[id].shape[0];
                let total = nodes[id].shape[1];
                let mut col = 0usize;
                for p in parts {
                    let d = nodes[p].shape[1];
                    if Self::ensure_grad(grads, nodes, p) {
                        let dp = grads[p].as_mut().unwrap();
                        for i in 0..n {
                            for j in 0..d {
                                dp[i * d + j] += g[i * total + col + j];
                            }
                        }
                    }
                    col += d;
                }
            }
            Op::Gelu { x } => {
                if Self::ensure_grad(grads, nodes, *x) {
                    let xd = &nodes[*x].data;
                    let dx = grads[*x].as_mut().unwrap();
                    for i in 0..dx.len() {
                        dx[i] += g[i] * kernels::gelu_derivative(xd[i]);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, cache } => {
                let (n, d) = rows_cols(&nodes[*x].shape);
                let inv_d = S::from_f64(1.0 / d as f64);
                let want_x = Self::ensure_grad(grads, nodes, *x);
                let want_g = Self::ensure_grad(grads, nodes, *gamma);
                let want_b = Self::ensure_grad(grads, nodes, *beta);
                let (x_id, g_id, b_id) = (*x, *gamma, *beta);
                let xd = &nodes[x_id].data;
                let gd = &nodes[g_id].data;
                let cache = cache.clone();
                let mut dx_buf = if want_x { grads[x_id].take() } else { None };
                let mut dg_buf = if want_g { grads[g_id].take() } else { None };
                let mut db_buf = if want_b { grads[b_id].take() } else { None };
                for i in 0..n {
                    let mean = cache[2 * i];
                    let rstd = cache[2 * i + 1];
                    let row = &xd[i * d..(i + 1) * d];
                    let gout = &g[i * d..(i + 1) * d];
                    if let Some(dg) = dg_buf.as_deref_mut() {
                        for j in 0..d {
                            dg[j] += gout[j] * (row[j] - mean) * rstd;
                        }
                    }
                    if let Some(db) = db_buf.as_deref_mut() {
                        for j in 0..d {
                            db[j] += gout[j];
                        }
                    }
                    if let Some(dx) = dx_buf.as_deref_mut() {
                        let mut m1 = S::ZERO;
                        let mut m2 = S::ZERO;
                        for j in 0..d {
                            let xhat = (row[j] - mean) * rstd;
                            let dxhat = gout[j] * gd[j];
                            m1 += dxhat;
                            m2 += dxhat * xhat;
                        }
                        m1 *= inv_d;
                        m2 *= inv_d;
                        let dst = &mut dx[i * d..(i + 1) * d];
                        for j in 0..d {
                            let xhat = (row[j] - mean) * rstd;
                            let dxhat = gout[j] * gd[j];
                            dst[j] += rstd * (dxhat - m1 - xhat * m2);
                        }
                    }
                }
                if let Some(b) = dx_buf {
                    grads[x_id] = Some(b);
                }
                if let Some(b) = dg_buf {
                    grads[g_id] = Some(b);
                }
                if let Some(b) = db_buf {
                    grads[b_id] = Some(b);
                }
            }
            Op::Softmax { x } => {
                let (n, d) = rows_cols(&nodes[id].shape);
                if Self::ensure_grad(grads, nodes, *x) {
                    let y = &nodes[id].data;
                    let dx = grads[*x].as_mut().unwrap();
                    for i in 0..n {
                        let yr = &y[i * d..(i + 1) * d];
                        let gr = &g[i * d..(i + 1) * d];
                        let mut dot = S::ZERO;
                        for j in 0..d {
                            dot += gr[j] * yr[j];
                        }
                        let dst = &mut dx[i * d..(i + 1) * d];
                        for j in 0..d {
                            dst[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::MeanAxis { x, axis } => {
                let (n, d) = (nodes[*x].shape[0], nodes[*x].shape[1]);
                let axis = *axis;
                if Self::ensure_grad(grads, nodes, *x) {
                    let dx = grads[*x].as_mut().unwrap();
                    if axis == 0 {
                        let inv = S::from_f64(1.0 / n as f64);
                        for i in 0..n {
                            for j in 0..d {
                                dx[i * d + j] += g[j] * inv;
                            }
                        }
                    } else {
                        let inv = S::from_f64(1.0 / d as f64);
                        for i in 0..n {
                            for j in 0..d {
                                dx[i * d + j] += g[i] * inv;
                            }
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                if Self::ensure_grad(grads, nodes, *x) {
                    let dx = grads[*x].as_mut().unwrap();
                    for dst in dx.iter_mut() {
                        *dst += g[0];
                    }
                }
            }
            Op::MeanAll { x } => {
                if Self::ensure_grad(grads, nodes, *x) {
                    let dx = grads[*x].as_mut().unwrap();
                    let inv = S::from_f64(1.0 / dx.len() as f64);
                    for dst in dx.iter_mut() {
                        *dst += g[0] * inv;
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let d = nodes[*x].shape[1];
                let idx = idx.clone();
                if Self::ensure_grad(grads, nodes, *x) {
                    let dx = grads[*x].as_mut().unwrap();
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..d {
                            dx[i * d + j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::ReplaceRows { x, v, rows } => {
                let d = nodes[*x].shape[1];
                let rows = rows.clone();
                if Self::ensure_grad(grads, nodes, *x) {
                    let dx = grads[*x].as_mut().unwrap();
                    let mut replaced = vec![false; nodes[*x].shape[0]];
                    for &r in &rows {
                        replaced[r] = true;
                    }
                    for (i, &rep) in replaced.iter().enumerate() {
                        if !rep {
                            for j in 0..d {
                                dx[i * d + j] += g[i * d + j];
                            }
                        }
                    }
                }
                if Self::ensure_grad(grads, nodes, *v) {
                    let dv = grads[*v].as_mut().unwrap();
                    for &r in &rows {
                        for j in 0..d {
                            dv[j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::CosineRows { a, b, cache } => {
                let (p, d) = rows_cols(&nodes[*a].shape);
                let cache = cache.clone();
                let want_a = Self::ensure_grad(grads, nodes, *a);
                let want_b = Self::ensure_grad(grads, nodes, *b);
                let (a_id, b_id) = (*a, *b);
                let ad = &nodes[a_id].data;
                let bd = &nodes[b_id].data;
                let mut da_buf = if want_a { grads[a_id].take() } else { None };
                let mut db_buf = if want_b { grads[b_id].take() } else { None };
                for i in 0..p {
                    let (dot, na, nb) = cache[i];
                    if na == S::ZERO || nb == S::ZERO {
                        continue; // defined value 0 with zero surrogate gradient
                    }
                    let gv = g[i];
                    let ra = &ad[i * d..(i + 1) * d];
                    let rb = &bd[i * d..(i + 1) * d];
                    let inv_nanb = S::ONE / (na * nb);
                    let cos = dot * inv_nanb;
                    if let Some(da) = da_buf.as_deref_mut() {
                        let inv_na2 = S::ONE / (na * na);
                        let dst = &mut da[i * d..(i + 1) * d];
                        for j in 0..d {
                            dst[j] += gv * (rb[j] * inv_nanb - cos * ra[j] * inv_na2);
                        }
                    }
                    if let Some(db) = db_buf.as_deref_mut() {
                        let inv_nb2 = S::ONE / (nb * nb);
                        let dst = &mut db[i * d..(i + 1) * d];
                        for j in 0..d {
                            dst[j] += gv * (ra[j] * inv_nanb - cos * rb[j] * inv_nb2);
                        }
                    }
                }
                if let Some(buf) = da_buf {
                    grads[a_id] = Some(buf);
                }
                if let Some(buf) = db_buf {
                    grads[b_id] = Some(buf);
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let (n, c) = rows_cols(&nodes[*logits].shape);
                if Self::ensure_grad(grads, nodes, *logits) {
                    let dl = grads[*logits].as_mut().unwrap();
                    let scale = g[0] * S::from_f64(1.0 / n as f64);
                    for i in 0..n {
                        for j in 0..c {
                            let indicator = if j == targets[i] { S::ONE } else { S::ZERO };
                            dl[i * c + j] += scale * (probs[i * c + j] - indicator);
                        }
                    }
                }
            }
            Op::StraightThrough { soft } => {
                if Self::ensure_grad(grads, nodes, *soft) {
                    let ds = grads[*soft].as_mut().unwrap();
                    for (dst, &gv) in ds.iter_mut().zip(g) {
                        *dst += gv;
                    }
                }
            }
            Op::Ln { x } => {
                if Self::ensure_grad(grads, nodes, *x) {
                    let xd = &nodes[*x].data;
                    let dx = grads[*x].as_mut().unwrap();
                    for i in 0..dx.len() {
                        dx[i] += g[i] / xd[i];
                    }
                }
            }
            Op::Exp { x } => {
                if Self::ensure_grad(grads, nodes, *x) {
                    let y = &nodes[id].data;
                    let dx = grads[*x].as_mut().unwrap();
                    for i in 0..dx.len() {
                        dx[i] += g[i] * y[i];
                    }
                }
            }
            Op::Reshape { x } => {
                if Self::ensure_grad(grads, nodes, *x) {
                    let dx = grads[*x].as_mut().unwrap();
                    for (dst, &gv) in dx.iter_mut().zip(g) {
                        *dst += gv;
                    }
                }
            }
        }
    }
}
