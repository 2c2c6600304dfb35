use rand::Rng as _;

use super::kernels::{col2im, gemm, im2col, Layout};
use super::{invalid, shape_err, Tensor, TensorError};
use crate::rng::Rng;

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    Sum { a: Var },
    MatMul { a: Var, b: Var },
    Conv1d { x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize },
    MaxPool1d { x: Var, argmax: Vec<usize> },
    Relu { x: Var },
    Dropout { x: Var, mask: Vec<f64> },
    Dense { x: Var, w: Var, b: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Softmax { x: Var, axis: usize },
    Mean { x: Var, axis: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Reshape { x: Var },
    Permute { x: Var, src: Vec<usize> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<f64> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed primitives.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of the `requires_grad` leaves, produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` for constants and for leaves the loss does not depend on.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Splits a shape around `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Elementwise sum; `b` may be broadcast over leading axes of `a`
    /// (its shape must be a suffix of `a`'s shape).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err("add", sa, sb));
        }
        let shape = sa.to_vec();
        let bd = self.data(b);
        let n = bd.len();
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % n])
            .collect();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Add { a, b }, &[a, b]))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.data(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Scale { a, c }, &[a])
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { a }, &[a])
    }

    /// `[m, k] x [k, n]`, or batched `[B, m, k] x [B, k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (batch, m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([b1, m, k], [b2, k2, n]) if b1 == b2 && k == k2 => (*b1, *m, *k, *n),
            _ => return Err(shape_err("matmul", &sa, &sb)),
        };
        let mut out = vec![0.0; batch * m * n];
        let (ad, bd) = (self.data(a), self.data(b));
        for bi in 0..batch {
            gemm(
                1.0,
                &ad[bi * m * k..(bi + 1) * m * k],
                Layout::row_major(m, k),
                &bd[bi * k * n..(bi + 1) * k * n],
                Layout::row_major(k, n),
                0.0,
                &mut out[bi * m * n..(bi + 1) * m * n],
                Layout::row_major(m, n),
            );
        }
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul { a, b }, &[a, b]))
    }

    /// 1-D convolution (cross-correlation) of `x[B, C_in, L]` with
    /// `w[C_out, C_in, K]` and optional bias `b[C_out]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let ([batch, c_in, len], [c_out, c_in_w, kernel]) = (sx.as_slice(), sw.as_slice()) else {
            return Err(shape_err("conv1d", &sx, &sw));
        };
        let (batch, c_in, len, c_out, kernel) = (*batch, *c_in, *len, *c_out, *kernel);
        if c_in != *c_in_w {
            return Err(shape_err("conv1d", &sx, &sw));
        }
        if stride == 0 {
            return Err(invalid("conv1d", "stride must be positive"));
        }
        if len + 2 * padding < kernel {
            return Err(invalid(
                "conv1d",
                format!("kernel {kernel} longer than padded input {}", len + 2 * padding),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(shape_err("conv1d", &sw, self.shape(b)));
            }
        }
        let l_out = (len + 2 * padding - kernel) / stride + 1;
        let ck = c_in * kernel;
        let mut out = vec![0.0; batch * c_out * l_out];
        let mut col = vec![0.0; ck * l_out];
        let (xd, wd) = (self.data(x), self.data(w));
        for bi in 0..batch {
            im2col(
                &xd[bi * c_in * len..(bi + 1) * c_in * len],
                c_in,
                len,
                kernel,
                stride,
                padding,
                l_out,
                &mut col,
            );
            let dst = &mut out[bi * c_out * l_out..(bi + 1) * c_out * l_out];
            if let Some(b) = b {
                let bd = self.data(b);
                for (co, row) in dst.chunks_mut(l_out).enumerate() {
                    row.fill(bd[co]);
                }
            }
            gemm(
                1.0,
                wd,
                Layout::row_major(c_out, ck),
                &col,
                Layout::row_major(ck, l_out),
                1.0,
                dst,
                Layout::row_major(c_out, l_out),
            );
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(
            Tensor::from_parts(vec![batch, c_out, l_out], out),
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                padding,
            },
            &inputs,
        ))
    }

    /// Max pooling along the last axis. Ties resolve to the first maximum.
    pub fn max_pool1d(&mut self, x: Var, width: usize, stride: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let Some(&len) = sx.last() else {
            return Err(invalid("max_pool1d", "input must have at least one axis"));
        };
        if width == 0 || stride == 0 {
            return Err(invalid("max_pool1d", "width and stride must be positive"));
        }
        if width > len {
            return Err(invalid(
                "max_pool1d",
                format!("window {width} longer than input {len}"),
            ));
        }
        let l_out = (len - width) / stride + 1;
        let rows = sx.iter().product::<usize>() / len;
        let xd = self.data(x);
        let mut out = Vec::with_capacity(rows * l_out);
        let mut argmax = Vec::with_capacity(rows * l_out);
        for r in 0..rows {
            let row = &xd[r * len..(r + 1) * len];
            for t in 0..l_out {
                let start = t * stride;
                let mut best = start;
                for i in start + 1..start + width {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.push(row[best]);
                argmax.push(r * len + best);
            }
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = l_out;
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::MaxPool1d { x, argmax },
            &[x],
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Relu { x }, &[x])
    }

    /// Inverted dropout. Identity (no new node) when `train` is false or
    /// `rate` is zero.
    pub fn dropout(&mut self, x: Var, rate: f64, train: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() >= rate { 1.0 / keep } else { 0.0 })
            .collect();
        let out: Vec<f64> = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::Dropout { x, mask }, &[x]))
    }

    /// Affine map over the last axis: `x[..., in] . w[in, out] + b[out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let ([fan_in, fan_out], Some(&last)) = (sw.as_slice(), sx.last()) else {
            return Err(shape_err("dense", &sx, &sw));
        };
        let (fan_in, fan_out) = (*fan_in, *fan_out);
        if last != fan_in {
            return Err(shape_err("dense", &sx, &sw));
        }
        if self.shape(b) != [fan_out] {
            return Err(shape_err("dense", &sw, self.shape(b)));
        }
        let rows = sx.iter().product::<usize>() / fan_in;
        let bd = self.data(b);
        let mut out = Vec::with_capacity(rows * fan_out);
        for _ in 0..rows {
            out.extend_from_slice(bd);
        }
        gemm(
            1.0,
            self.data(x),
            Layout::row_major(rows, fan_in),
            self.data(w),
            Layout::row_major(fan_in, fan_out),
            1.0,
            &mut out,
            Layout::row_major(rows, fan_out),
        );
        let mut shape = sx;
        *shape.last_mut().unwrap() = fan_out;
        Ok(self.push(Tensor::from_parts(shape, out), Op::Dense { x, w, b }, &[x, w, b]))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let Some(&d) = sx.last() else {
            return Err(invalid("layer_norm", "input must have at least one axis"));
        };
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err("layer_norm", &sx, self.shape(gamma)));
        }
        if eps <= 0.0 {
            return Err(invalid("layer_norm", "eps must be positive"));
        }
        let rows = sx.iter().product::<usize>() / d;
        let (xd, gd, bd) = (self.data(x), self.data(gamma), self.data(beta));
        let mut xhat = Vec::with_capacity(rows * d);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * d);
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd.push(rs);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * rs;
                xhat.push(h);
                out.push(h * gd[j] + bd[j]);
            }
        }
        Ok(self.push(
            Tensor::from_parts(sx, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() {
            return Err(invalid("softmax", format!("axis {axis} out of range for {sx:?}")));
        }
        let (outer, n, inner) = split_axis(&sx, axis);
        let xd = self.data(x);
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let m = (0..n).map(|j| xd[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..n {
                    let e = (xd[idx(j)] - m).exp();
                    out[idx(j)] = e;
                    z += e;
                }
                for j in 0..n {
                    out[idx(j)] /= z;
                }
            }
        }
        Ok(self.push(Tensor::from_parts(sx, out), Op::Softmax { x, axis }, &[x]))
    }

    /// Mean over `axis`; the axis is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() {
            return Err(invalid("mean", format!("axis {axis} out of range for {sx:?}")));
        }
        let (outer, n, inner) = split_axis(&sx, axis);
        let xd = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = &xd[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (dst, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += s;
                }
            }
        }
        for v in &mut out {
            *v /= n as f64;
        }
        let mut shape = sx;
        shape.remove(axis);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Mean { x, axis }, &[x]))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(invalid("concat", "no inputs"));
        };
        let s0 = self.shape(first).to_vec();
        if axis >= s0.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {s0:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != s0.len()
                || s.iter()
                    .zip(&s0)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(shape_err("concat", &s0, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&s0, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let n = self.shape(v)[axis];
                out.extend_from_slice(&self.data(v)[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            xs,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).numel() || shape.contains(&0) {
            return Err(shape_err("reshape", self.shape(x), shape));
        }
        let data = self.data(x).to_vec();
        Ok(self.push(
            Tensor::from_parts(shape.to_vec(), data),
            Op::Reshape { x },
            &[x],
        ))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let mut seen = vec![false; sx.len()];
        if perm.len() != sx.len()
            || perm
                .iter()
                .any(|&p| p >= sx.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(invalid("permute", format!("{perm:?} is not a permutation of {sx:?}")));
        }
        let in_strides = strides(&sx);
        let out_shape: Vec<usize> = perm.iter().map(|&p| sx[p]).collect();
        let n = self.value(x).numel();
        let mut src = Vec::with_capacity(n);
        let mut idx = vec![0usize; out_shape.len()];
        for _ in 0..n {
            src.push(idx.iter().zip(perm).map(|(i, &p)| i * in_strides[p]).sum());
            for ax in (0..idx.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        let xd = self.data(x);
        let out: Vec<f64> = src.iter().map(|&s| xd[s]).collect();
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Permute { x, src },
            &[x],
        ))
    }

    /// Multi-head scaled dot-product attention over `[B, T, D]` inputs.
    ///
    /// Head `h` uses feature slice `h*D/heads .. (h+1)*D/heads`; the output
    /// concatenates heads back to `[B, T, D]`. No masking.
    pub fn scaled_dot_product_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
    ) -> Result<Var> {
        let sq = self.shape(q).to_vec();
        if self.shape(k) != sq.as_slice() || self.shape(v) != sq.as_slice() {
            return Err(shape_err("attention", &sq, self.shape(k)));
        }
        let [batch, t, d] = sq.as_slice() else {
            return Err(invalid("attention", format!("expected [B, T, D], got {sq:?}")));
        };
        let (batch, t, d) = (*batch, *t, *d);
        if heads == 0 || d % heads != 0 {
            return Err(invalid(
                "attention",
                format!("model width {d} not divisible by {heads} heads"),
            ));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut out = vec![0.0; batch * t * d];
        let mut probs = vec![0.0; batch * heads * t * t];
        let head = Layout::strided(t, dh, d);
        for b in 0..batch {
            for h in 0..heads {
                let base = b * t * d + h * dh;
                let p = &mut probs[(b * heads + h) * t * t..(b * heads + h + 1) * t * t];
                gemm(
                    scale,
                    &qd[base..],
                    head,
                    &kd[base..],
                    head.t(),
                    0.0,
                    p,
                    Layout::row_major(t, t),
                );
                for row in p.chunks_mut(t) {
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for s in row.iter_mut() {
                        *s = (*s - m).exp();
                        z += *s;
                    }
                    for s in row.iter_mut() {
                        *s /= z;
                    }
                }
                gemm(
                    1.0,
                    p,
                    Layout::row_major(t, t),
                    &vd[base..],
                    head,
                    0.0,
                    &mut out[base..],
                    head,
                );
            }
        }
        Ok(self.push(
            Tensor::from_parts(sq, out),
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let sl = self.shape(logits).to_vec();
        let [batch, classes] = sl.as_slice() else {
            return Err(invalid("cross_entropy", format!("expected [B, K] logits, got {sl:?}")));
        };
        let (batch, classes) = (*batch, *classes);
        if labels.len() != batch {
            return Err(shape_err("cross_entropy", &sl, &[labels.len()]));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(TensorError::LabelOutOfRange {
                index,
                label,
                classes,
            });
        }
        let xd = self.data(logits);
        let mut probs = vec![0.0; batch * classes];
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &xd[r * classes..(r + 1) * classes];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[label];
            for (p, v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        Ok(self.push(
            Tensor::scalar(total / batch as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse pass from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NotScalar { shape });
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(nodes.len(), || None);
        let mut leaves: Vec<Option<Tensor>> = Vec::new();
        leaves.resize_with(nodes.len(), || None);
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        let acc = |grads: &mut Vec<Option<Vec<f64>>>, v: Var, f: &dyn Fn(&mut [f64])| {
            if nodes[v.0].requires_grad {
                let g = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
                f(g);
            }
        };
        let add_into = |grads: &mut Vec<Option<Vec<f64>>>, v: Var, local: &[f64]| {
            acc(grads, v, &|g: &mut [f64]| {
                for (a, b) in g.iter_mut().zip(local) {
                    *a += b;
                }
            });
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let val = |v: Var| nodes[v.0].value.data();
            let shp = |v: Var| nodes[v.0].value.shape();
            match &node.op {
                Op::Leaf => {
                    leaves[i] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                }
                Op::Add { a, b } => {
                    add_into(&mut grads, *a, &g);
                    let n = nodes[b.0].value.numel();
                    acc(&mut grads, *b, &|gb: &mut [f64]| {
                        for (j, gv) in g.iter().enumerate() {
                            gb[j % n] += gv;
                        }
                    });
                }
                Op::Mul { a, b } => {
                    let (ad, bd) = (val(*a), val(*b));
                    let ga: Vec<f64> = g.iter().zip(bd).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(ad).map(|(x, y)| x * y).collect();
                    add_into(&mut grads, *a, &ga);
                    add_into(&mut grads, *b, &gb);
                }
                Op::Scale { a, c } => {
                    let ga: Vec<f64> = g.iter().map(|x| x * c).collect();
                    add_into(&mut grads, *a, &ga);
                }
                Op::Sum { a } => {
                    let g0 = g[0];
                    acc(&mut grads, *a, &|ga: &mut [f64]| ga.iter_mut().for_each(|x| *x += g0));
                }
                Op::MatMul { a, b } => {
                    let sa = shp(*a);
                    let (batch, m, k) = match sa {
                        [m, k] => (1, *m, *k),
                        [bt, m, k] => (*bt, *m, *k),
                        _ => unreachable!(),
                    };
                    let n = *shp(*b).last().unwrap();
                    let (ad, bd) = (val(*a), val(*b));
                    let mut ga = vec![0.0; ad.len()];
                    let mut gb = vec![0.0; bd.len()];
                    for bi in 0..batch {
                        let gs = &g[bi * m * n..(bi + 1) * m * n];
                        gemm(
                            1.0,
                            gs,
                            Layout::row_major(m, n),
                            &bd[bi * k * n..(bi + 1) * k * n],
                            Layout::row_major(k, n).t(),
                            0.0,
                            &mut ga[bi * m * k..(bi + 1) * m * k],
                            Layout::row_major(m, k),
                        );
                        gemm(
                            1.0,
                            &ad[bi * m * k..(bi + 1) * m * k],
                            Layout::row_major(m, k).t(),
                            gs,
                            Layout::row_major(m, n),
                            0.0,
                            &mut gb[bi * k * n..(bi + 1) * k * n],
                            Layout::row_major(k, n),
                        );
                    }
                    add_into(&mut grads, *a, &ga);
                    add_into(&mut grads, *b, &gb);
                }
                Op::Conv1d {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                } => {
                    let (batch, c_in, len) = match shp(*x) {
                        [b, c, l] => (*b, *c, *l),
                        _ => unreachable!(),
                    };
                    let (c_out, kernel) = (shp(*w)[0], shp(*w)[2]);
                    let l_out = node.value.shape()[2];
                    let ck = c_in * kernel;
                    let (xd, wd) = (val(*x), val(*w));
                    let need_x = nodes[x.0].requires_grad;
                    let mut gx = vec![0.0; if need_x { xd.len() } else { 0 }];
                    let mut gw = vec![0.0; wd.len()];
                    let mut gbias = vec![0.0; c_out];
                    let mut col = vec![0.0; ck * l_out];
                    let mut dcol = vec![0.0; ck * l_out];
                    for bi in 0..batch {
                        let gs = &g[bi * c_out * l_out..(bi + 1) * c_out * l_out];
                        for (co, row) in gs.chunks(l_out).enumerate() {
                            gbias[co] += row.iter().sum::<f64>();
                        }
                        let xs = &xd[bi * c_in * len..(bi + 1) * c_in * len];
                        im2col(xs, c_in, len, kernel, *stride, *padding, l_out, &mut col);
                        gemm(
                            1.0,
                            gs,
                            Layout::row_major(c_out, l_out),
                            &col,
                            Layout::row_major(ck, l_out).t(),
                            1.0,
                            &mut gw,
                            Layout::row_major(c_out, ck),
                        );
                        if need_x {
                            gemm(
                                1.0,
                                wd,
                                Layout::row_major(c_out, ck).t(),
                                gs,
                                Layout::row_major(c_out, l_out),
                                0.0,
                                &mut dcol,
                                Layout::row_major(ck, l_out),
                            );
                            col2im(
                                &dcol,
                                c_in,
                                len,
                                kernel,
                                *stride,
                                *padding,
                                l_out,
                                &mut gx[bi * c_in * len..(bi + 1) * c_in * len],
                            );
                        }
                    }
                    if need_x {
                        add_into(&mut grads, *x, &gx);
                    }
                    add_into(&mut grads, *w, &gw);
                    if let Some(b) = b {
                        add_into(&mut grads, *b, &gbias);
                    }
                }
                Op::MaxPool1d { x, argmax } => {
                    acc(&mut grads, *x, &|gx: &mut [f64]| {
                        for (&src, gv) in argmax.iter().zip(&g) {
                            gx[src] += gv;
                        }
                    });
                }
                Op::Relu { x } => {
                    let xd = val(*x);
                    acc(&mut grads, *x, &|gx: &mut [f64]| {
                        for ((a, &xv), gv) in gx.iter_mut().zip(xd).zip(&g) {
                            if xv > 0.0 {
                                *a += gv;
                            }
                        }
                    });
                }
                Op::Dropout { x, mask } => {
                    let gx: Vec<f64> = g.iter().zip(mask).map(|(a, m)| a * m).collect();
                    add_into(&mut grads, *x, &gx);
                }
                Op::Dense { x, w, b } => {
                    let (fan_in, fan_out) = (shp(*w)[0], shp(*w)[1]);
                    let rows = g.len() / fan_out;
                    let (xd, wd) = (val(*x), val(*w));
                    if nodes[x.0].requires_grad {
                        let mut gx = vec![0.0; xd.len()];
                        gemm(
                            1.0,
                            &g,
                            Layout::row_major(rows, fan_out),
                            wd,
                            Layout::row_major(fan_in, fan_out).t(),
                            0.0,
                            &mut gx,
                            Layout::row_major(rows, fan_in),
                        );
                        add_into(&mut grads, *x, &gx);
                    }
                    let mut gw = vec![0.0; wd.len()];
                    gemm(
                        1.0,
                        xd,
                        Layout::row_major(rows, fan_in).t(),
                        &g,
                        Layout::row_major(rows, fan_out),
                        0.0,
                        &mut gw,
                        Layout::row_major(fan_in, fan_out),
                    );
                    add_into(&mut grads, *w, &gw);
                    let mut gb = vec![0.0; fan_out];
                    for row in g.chunks(fan_out) {
                        for (a, v) in gb.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    add_into(&mut grads, *b, &gb);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let d = shp(*gamma)[0];
                    let gd = val(*gamma);
                    let mut gg = vec![0.0; d];
                    let mut gbeta = vec![0.0; d];
                    let mut gx = vec![0.0; g.len()];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                            gbeta[j] += gr[j];
                            let dh = gr[j] * gd[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for j in 0..d {
                            gx[r * d + j] = rs * (gr[j] * gd[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    add_into(&mut grads, *x, &gx);
                    add_into(&mut grads, *gamma, &gg);
                    add_into(&mut grads, *beta, &gbeta);
                }
                Op::Softmax { x, axis } => {
                    let y = node.value.data();
                    let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                    let mut gx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * n + j) * inner + i;
                            let dot: f64 = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..n {
                                gx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                    add_into(&mut grads, *x, &gx);
                }
                Op::Mean { x, axis } => {
                    let (outer, n, inner) = split_axis(shp(*x), *axis);
                    acc(&mut grads, *x, &|gx: &mut [f64]| {
                        for o in 0..outer {
                            for j in 0..n {
                                for i in 0..inner {
                                    gx[(o * n + j) * inner + i] += g[o * inner + i] / n as f64;
                                }
                            }
                        }
                    });
                }
                Op::Concat { xs, axis } => {
                    let total = node.value.shape()[*axis];
                    let (outer, _, inner) = split_axis(node.value.shape(), *axis);
                    let mut offset = 0;
                    for &v in xs {
                        let n = shp(v)[*axis];
                        let mut gv = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            gv.extend_from_slice(&g[start..start + n * inner]);
                        }
                        add_into(&mut grads, v, &gv);
                        offset += n;
                    }
                }
                Op::Reshape { x } => add_into(&mut grads, *x, &g),
                Op::Permute { x, src } => {
                    acc(&mut grads, *x, &|gx: &mut [f64]| {
                        for (&s, gv) in src.iter().zip(&g) {
                            gx[s] += gv;
                        }
                    });
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (batch, t, d) = match shp(*q) {
                        [b, t, d] => (*b, *t, *d),
                        _ => unreachable!(),
                    };
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let (qd, kd, vd) = (val(*q), val(*k), val(*v));
                    let mut gq = vec![0.0; qd.len()];
                    let mut gk = vec![0.0; kd.len()];
                    let mut gv = vec![0.0; vd.len()];
                    let mut dp = vec![0.0; t * t];
                    let head = Layout::strided(t, dh, d);
                    let sq = Layout::row_major(t, t);
                    for b in 0..batch {
                        for h in 0..*heads {
                            let base = b * t * d + h * dh;
                            let p = &probs[(b * heads + h) * t * t..(b * heads + h + 1) * t * t];
                            gemm(1.0, &g[base..], head, &vd[base..], head.t(), 0.0, &mut dp, sq);
                            gemm(1.0, p, sq.t(), &g[base..], head, 1.0, &mut gv[base..], head);
                            for (prow, drow) in p.chunks(t).zip(dp.chunks_mut(t)) {
                                let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                                for (ds, &pv) in drow.iter_mut().zip(prow) {
                                    *ds = pv * (*ds - dot);
                                }
                            }
                            gemm(scale, &dp, sq, &kd[base..], head, 1.0, &mut gq[base..], head);
                            gemm(scale, &dp, sq.t(), &qd[base..], head, 1.0, &mut gk[base..], head);
                        }
                    }
                    add_into(&mut grads, *q, &gq);
                    add_into(&mut grads, *k, &gk);
                    add_into(&mut grads, *v, &gv);
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let batch = labels.len();
                    let classes = probs.len() / batch;
                    let scale = g[0] / batch as f64;
                    let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (r, &l) in labels.iter().enumerate() {
                        gl[r * classes + l] -= scale;
                    }
                    add_into(&mut grads, *logits, &gl);
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}
