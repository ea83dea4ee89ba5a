//! Differentiable operations and their backward rules.

use super::{axis_split, kernels, Tensor};
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Guard applied to vector norms so that zero vectors stay zero.
pub const L2_EPS: f64 = 1e-12;

pub(crate) enum Op {
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddRow,
    Relu,
    Gelu,
    Softmax { axis: usize },
    LogSoftmax { axis: usize },
    LayerNorm { eps: f64 },
    L2Normalize { axis: usize },
    Concat { axis: usize },
    Mean { axis: usize },
    SumAll,
    Narrow { axis: usize, start: usize },
    Reshape,
    GatherRows { indices: Vec<usize> },
    Attention { seq_len: usize, heads: usize },
}

fn check_axis(op: &'static str, t: &Tensor, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(Error::Contract(format!(
            "{op}: axis {axis} out of range for shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

fn softmax_into(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |a: usize| (o * len + a) * inner + i;
            let max = (0..len).map(|a| x[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for a in 0..len {
                let e = (x[idx(a)] - max).exp();
                out[idx(a)] = e;
                sum += e;
            }
            for a in 0..len {
                out[idx(a)] /= sum;
            }
        }
    }
    out
}

/// Scaled dot-product attention weights of one (sequence, head) block of a
/// packed `[N·s × 3d]` projection: `softmax(q kᵀ / √hd)`, row-major `[s × s]`.
fn attention_block(qkv: &[f64], d: usize, hd: usize, s: usize, base: usize, h: usize) -> Vec<f64> {
    let width = 3 * d;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut a = vec![0.0; s * s];
    for i in 0..s {
        let q = &qkv[(base + i) * width + h * hd..][..hd];
        for j in 0..s {
            let k = &qkv[(base + j) * width + d + h * hd..][..hd];
            a[i * s + j] = q.iter().zip(k).map(|(x, y)| x * y).sum::<f64>() * scale;
        }
    }
    softmax_into(&a, &[s, s], 1)
}

impl Tensor {
    /// Multi-head self-attention over stacked sequences. `self` is the packed
    /// `[N·s × 3d]` projection with query, key and value blocks side by side,
    /// each split into `heads` column groups. Returns `[N·s × d]` with head
    /// outputs concatenated along columns.
    pub fn multi_head_attention(&self, seq_len: usize, heads: usize) -> Result<Tensor> {
        let shape = self.shape();
        if self.rank() != 2 || heads == 0 || seq_len == 0 || !shape[1].is_multiple_of(3 * heads) || !shape[0].is_multiple_of(seq_len) {
            return Err(Error::dim("multi_head_attention", shape, &[seq_len, 3 * heads]));
        }
        let (rows, d) = (shape[0], shape[1] / 3);
        let hd = d / heads;
        let qkv = self.data();
        let mut out = vec![0.0; rows * d];
        for b in 0..rows / seq_len {
            let base = b * seq_len;
            for h in 0..heads {
                let a = attention_block(qkv, d, hd, seq_len, base, h);
                for i in 0..seq_len {
                    let o = &mut out[(base + i) * d + h * hd..][..hd];
                    for j in 0..seq_len {
                        let w = a[i * seq_len + j];
                        let v = &qkv[(base + j) * 3 * d + 2 * d + h * hd..][..hd];
                        o.iter_mut().zip(v).for_each(|(o, v)| *o += w * v);
                    }
                }
            }
        }
        Ok(Tensor::from_op(vec![rows, d], out, Op::Attention { seq_len, heads }, vec![self.clone()]))
    }

    /// Matrix product of `[m×k]` and `[k×p]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(Error::dim("matmul", a, b));
        }
        let (m, k, p) = (a[0], a[1], b[1]);
        let data = kernels::matmul(self.data(), other.data(), m, k, p);
        Ok(Tensor::from_op(vec![m, p], data, Op::MatMul, vec![self.clone(), other.clone()]))
    }

    /// Transpose of a 2-D tensor.
    pub fn t(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Contract(format!("transpose of rank-{} tensor", self.rank())));
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let data = kernels::transpose(self.data(), r, c);
        Ok(Tensor::from_op(vec![c, r], data, Op::Transpose, vec![self.clone()]))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Add, vec![self.clone(), other.clone()]))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Sub, vec![self.clone(), other.clone()]))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Mul, vec![self.clone(), other.clone()]))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * factor).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Scale(factor), vec![self.clone()])
    }

    /// Adds a vector along the last axis of `self` (bias broadcast).
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let width = *self.shape().last().unwrap_or(&1);
        if row.rank() != 1 || row.shape()[0] != width {
            return Err(Error::dim("add_row", self.shape(), row.shape()));
        }
        let r = row.data();
        let data = self
            .data()
            .chunks(width)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(a, b)| a + b))
            .collect();
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::AddRow, vec![self.clone(), row.clone()]))
    }

    pub fn relu(&self) -> Tensor {
        let data = self.data().iter().map(|&v| v.max(0.0)).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Relu, vec![self.clone()])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self) -> Tensor {
        let data = self.data().iter().map(|&v| gelu(v)).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Gelu, vec![self.clone()])
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis("softmax", self, axis)?;
        let data = softmax_into(self.data(), self.shape(), axis);
        Ok(Tensor::from_op(self.shape().to_vec(), data, Op::Softmax { axis }, vec![self.clone()]))
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis("log_softmax", self, axis)?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let max = (0..len).map(|a| x[idx(a)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = max + (0..len).map(|a| (x[idx(a)] - max).exp()).sum::<f64>().ln();
                for a in 0..len {
                    out[idx(a)] = x[idx(a)] - lse;
                }
            }
        }
        Ok(Tensor::from_op(self.shape().to_vec(), out, Op::LogSoftmax { axis }, vec![self.clone()]))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gamma * x̂ + beta`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let width = *self.shape().last().ok_or_else(|| Error::Contract("layer_norm of scalar".into()))?;
        if gamma.shape() != [width] || beta.shape() != [width] {
            return Err(Error::dim("layer_norm", self.shape(), gamma.shape()));
        }
        let (g, b) = (gamma.data(), beta.data());
        let mut out = Vec::with_capacity(self.numel());
        for row in self.data().chunks(width) {
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            out.extend(row.iter().enumerate().map(|(j, v)| (v - mean) * rstd * g[j] + b[j]));
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::LayerNorm { eps },
            vec![self.clone(), gamma.clone(), beta.clone()],
        ))
    }

    /// Scales every vector along `axis` to unit Euclidean norm. Vectors with
    /// norm below [`L2_EPS`] are divided by the guard instead, so zero stays zero.
    pub fn l2_normalize(&self, axis: usize) -> Result<Tensor> {
        check_axis("l2_normalize", self, axis)?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |a: usize| (o * len + a) * inner + i;
                let norm = (0..len).map(|a| x[idx(a)] * x[idx(a)]).sum::<f64>().sqrt();
                let denom = norm.max(L2_EPS);
                for a in 0..len {
                    out[idx(a)] = x[idx(a)] / denom;
                }
            }
        }
        Ok(Tensor::from_op(self.shape().to_vec(), out, Op::L2Normalize { axis }, vec![self.clone()]))
    }

    /// Joins tensors along `axis`; every other extent must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        check_axis("concat", first, axis)?;
        for p in &parts[1..] {
            let compatible = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", first.shape(), p.shape()));
            }
        }
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let block = p.shape()[axis] * inner;
                data.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
            }
        }
        Ok(Tensor::from_op(shape, data, Op::Concat { axis }, parts.to_vec()))
    }

    /// Stacks equal-shape tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let lifted = parts
            .iter()
            .map(|p| {
                let mut shape = vec![1];
                shape.extend_from_slice(p.shape());
                p.reshape(&shape)
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::concat(&lifted, 0)
    }

    /// Mean along `axis`; the axis is removed from the shape.
    pub fn mean(&self, axis: usize) -> Result<Tensor> {
        check_axis("mean", self, axis)?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &x[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Tensor::from_op(shape, out, Op::Mean { axis }, vec![self.clone()]))
    }

    pub fn sum_all(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::from_op(Vec::new(), vec![s], Op::SumAll, vec![self.clone()])
    }

    /// Slice `len` entries along `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        check_axis("narrow", self, axis)?;
        if len == 0 || start + len > self.shape()[axis] {
            return Err(Error::Contract(format!(
                "narrow [{start}, {}) out of range for axis {axis} of {:?}",
                start + len,
                self.shape()
            )));
        }
        let (outer, full, inner) = axis_split(self.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(shape, data, Op::Narrow { axis, start }, vec![self.clone()]))
    }

    /// Single entry of a rank-1 tensor as a scalar.
    pub fn select(&self, index: usize) -> Result<Tensor> {
        if self.rank() != 1 {
            return Err(Error::Contract(format!("select on shape {:?}", self.shape())));
        }
        self.narrow(0, index, 1)?.reshape(&[])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::dim("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(shape.to_vec(), self.to_vec(), Op::Reshape, vec![self.clone()]))
    }

    /// Rows of a 2-D tensor picked by index (embedding lookup).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::Contract(format!("gather_rows on shape {:?}", self.shape())));
        }
        let (rows, width) = (self.shape()[0], self.shape()[1]);
        if indices.is_empty() {
            return Err(Error::Contract("gather_rows with no indices".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            if i >= rows {
                return Err(Error::Contract(format!("row index {i} out of range for {rows} rows")));
            }
            data.extend_from_slice(&self.data()[i * width..(i + 1) * width]);
        }
        Ok(Tensor::from_op(
            vec![indices.len(), width],
            data,
            Op::GatherRows { indices: indices.to_vec() },
            vec![self.clone()],
        ))
    }
}

/// Gradients of `out` with respect to each parent, `None` where the parent
/// does not require one.
pub(crate) fn backward_op(op: &Op, parents: &[Tensor], out: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let want = |i: usize| parents[i].requires_grad();
    match op {
        Op::MatMul => {
            let (a, b) = (&parents[0], &parents[1]);
            let (m, k, p) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let da = want(0).then(|| kernels::matmul_bt(g, b.data(), m, p, k));
            let db = want(1).then(|| kernels::matmul_at(a.data(), g, m, k, p));
            vec![da, db]
        }
        Op::Transpose => {
            let (r, c) = (out.shape()[0], out.shape()[1]);
            vec![Some(kernels::transpose(g, r, c))]
        }
        Op::Add => vec![want(0).then(|| g.to_vec()), want(1).then(|| g.to_vec())],
        Op::Sub => vec![
            want(0).then(|| g.to_vec()),
            want(1).then(|| g.iter().map(|v| -v).collect()),
        ],
        Op::Mul => {
            let (a, b) = (parents[0].data(), parents[1].data());
            vec![
                want(0).then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
                want(1).then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
            ]
        }
        Op::Scale(f) => vec![Some(g.iter().map(|v| v * f).collect())],
        Op::AddRow => {
            let width = parents[1].numel();
            let db = want(1).then(|| {
                let mut acc = vec![0.0; width];
                for chunk in g.chunks(width) {
                    acc.iter_mut().zip(chunk).for_each(|(a, v)| *a += v);
                }
                acc
            });
            vec![want(0).then(|| g.to_vec()), db]
        }
        Op::Relu => {
            let x = parents[0].data();
            vec![Some(g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect())]
        }
        Op::Gelu => {
            let x = parents[0].data();
            vec![Some(g.iter().zip(x).map(|(g, &x)| g * gelu_grad(x)).collect())]
        }
        Op::Softmax { axis } => {
            let y = out.data();
            let (outer, len, inner) = axis_split(out.shape(), *axis);
            let mut dx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |a: usize| (o * len + a) * inner + i;
                    let dot: f64 = (0..len).map(|a| g[idx(a)] * y[idx(a)]).sum();
                    for a in 0..len {
                        dx[idx(a)] = y[idx(a)] * (g[idx(a)] - dot);
                    }
                }
            }
            vec![Some(dx)]
        }
        Op::LogSoftmax { axis } => {
            let y = out.data();
            let (outer, len, inner) = axis_split(out.shape(), *axis);
            let mut dx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |a: usize| (o * len + a) * inner + i;
                    let gsum: f64 = (0..len).map(|a| g[idx(a)]).sum();
                    for a in 0..len {
                        dx[idx(a)] = g[idx(a)] - y[idx(a)].exp() * gsum;
                    }
                }
            }
            vec![Some(dx)]
        }
        Op::LayerNorm { eps } => {
            let (x, gamma) = (parents[0].data(), parents[1].data());
            let width = gamma.len();
            let mut dx = vec![0.0; x.len()];
            let mut dgamma = vec![0.0; width];
            let mut dbeta = vec![0.0; width];
            for (r, row) in x.chunks(width).enumerate() {
                let gr = &g[r * width..(r + 1) * width];
                let mean = row.iter().sum::<f64>() / width as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
                let rstd = 1.0 / (var + eps).sqrt();
                let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * rstd).collect();
                let dxhat: Vec<f64> = gr.iter().zip(gamma).map(|(g, w)| g * w).collect();
                let mean_dxhat = dxhat.iter().sum::<f64>() / width as f64;
                let mean_dxhat_xhat =
                    dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / width as f64;
                for j in 0..width {
                    dx[r * width + j] = rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    dgamma[j] += gr[j] * xhat[j];
                    dbeta[j] += gr[j];
                }
            }
            vec![want(0).then_some(dx), want(1).then_some(dgamma), want(2).then_some(dbeta)]
        }
        Op::L2Normalize { axis } => {
            let (x, y) = (parents[0].data(), out.data());
            let (outer, len, inner) = axis_split(out.shape(), *axis);
            let mut dx = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |a: usize| (o * len + a) * inner + i;
                    let norm = (0..len).map(|a| x[idx(a)] * x[idx(a)]).sum::<f64>().sqrt();
                    if norm > L2_EPS {
                        let dot: f64 = (0..len).map(|a| y[idx(a)] * g[idx(a)]).sum();
                        for a in 0..len {
                            dx[idx(a)] = (g[idx(a)] - y[idx(a)] * dot) / norm;
                        }
                    } else {
                        for a in 0..len {
                            dx[idx(a)] = g[idx(a)] / L2_EPS;
                        }
                    }
                }
            }
            vec![Some(dx)]
        }
        Op::Concat { axis } => {
            let (outer, total, inner) = axis_split(out.shape(), *axis);
            let mut offset = 0;
            parents
                .iter()
                .map(|p| {
                    let len = p.shape()[*axis];
                    let grad = p.requires_grad().then(|| {
                        let mut d = Vec::with_capacity(p.numel());
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g[base..base + len * inner]);
                        }
                        d
                    });
                    offset += len;
                    grad
                })
                .collect()
        }
        Op::Mean { axis } => {
            let (outer, len, inner) = axis_split(parents[0].shape(), *axis);
            let mut dx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for a in 0..len {
                    for i in 0..inner {
                        dx[(o * len + a) * inner + i] = g[o * inner + i] / len as f64;
                    }
                }
            }
            vec![Some(dx)]
        }
        Op::SumAll => vec![Some(vec![g[0]; parents[0].numel()])],
        Op::Narrow { axis, start } => {
            let (outer, full, inner) = axis_split(parents[0].shape(), *axis);
            let len = out.shape()[*axis];
            let mut dx = vec![0.0; parents[0].numel()];
            for o in 0..outer {
                let base = (o * full + start) * inner;
                dx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(dx)]
        }
        Op::Reshape => vec![Some(g.to_vec())],
        Op::Attention { seq_len, heads } => {
            let s = *seq_len;
            let qkv = parents[0].data();
            let (rows, d) = (out.shape()[0], out.shape()[1]);
            let hd = d / heads;
            let width = 3 * d;
            let scale = 1.0 / (hd as f64).sqrt();
            let mut dx = vec![0.0; qkv.len()];
            let mut ds = vec![0.0; s * s];
            for b in 0..rows / s {
                let base = b * s;
                for h in 0..*heads {
                    let a = attention_block(qkv, d, hd, s, base, h);
                    let (qo, ko, vo) = (h * hd, d + h * hd, 2 * d + h * hd);
                    for i in 0..s {
                        let gi = &g[(base + i) * d + h * hd..][..hd];
                        let mut dot = 0.0;
                        for j in 0..s {
                            let v = &qkv[(base + j) * width + vo..][..hd];
                            let da: f64 = gi.iter().zip(v).map(|(x, y)| x * y).sum();
                            ds[i * s + j] = da;
                            dot += a[i * s + j] * da;
                            let w = a[i * s + j];
                            let dv = &mut dx[(base + j) * width + vo..][..hd];
                            dv.iter_mut().zip(gi).for_each(|(t, g)| *t += w * g);
                        }
                        for j in 0..s {
                            ds[i * s + j] = a[i * s + j] * (ds[i * s + j] - dot) * scale;
                        }
                    }
                    for i in 0..s {
                        for j in 0..s {
                            let w = ds[i * s + j];
                            if w == 0.0 {
                                continue;
                            }
                            for c in 0..hd {
                                let k = qkv[(base + j) * width + ko + c];
                                let q = qkv[(base + i) * width + qo + c];
                                dx[(base + i) * width + qo + c] += w * k;
                                dx[(base + j) * width + ko + c] += w * q;
                            }
                        }
                    }
                }
            }
            vec![Some(dx)]
        }
        Op::GatherRows { indices } => {
            let width = parents[0].shape()[1];
            let mut dx = vec![0.0; parents[0].numel()];
            for (r, &i) in indices.iter().enumerate() {
                for j in 0..width {
                    dx[i * width + j] += g[r * width + j];
                }
            }
            vec![Some(dx)]
        }
    }
}
