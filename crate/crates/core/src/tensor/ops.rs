//! Forward tensor operations. Each op records its parents so `backward` can
//! replay the graph in reverse.

use super::autodiff::{Op, NORM_EPS};
use super::{numel_of, strides_of, Result, Scalar, Tensor, TensorError};

/// `c += a b` for row-major `a[m,k]`, `b[k,n]`, `c[m,n]`. Rows are processed
/// four at a time so each `b` row load feeds four accumulation streams.
pub(crate) fn matmul_acc<S: Scalar>(c: &mut [S], a: &[S], b: &[S], m: usize, k: usize, n: usize) {
    let mut i = 0;
    while i + 4 <= m {
        let (a0, a1, a2, a3) = (
            &a[i * k..(i + 1) * k],
            &a[(i + 1) * k..(i + 2) * k],
            &a[(i + 2) * k..(i + 3) * k],
            &a[(i + 3) * k..(i + 4) * k],
        );
        let block = &mut c[i * n..(i + 4) * n];
        for p in 0..k {
            let (v0, v1, v2, v3) = (a0[p], a1[p], a2[p], a3[p]);
            let brow = &b[p * n..(p + 1) * n];
            let (c0, rest) = block.split_at_mut(n);
            let (c1, rest) = rest.split_at_mut(n);
            let (c2, c3) = rest.split_at_mut(n);
            for (((&bv, r0), (r1, r2)), r3) in brow
                .iter()
                .zip(c0.iter_mut())
                .zip(c1.iter_mut().zip(c2.iter_mut()))
                .zip(c3.iter_mut())
            {
                *r0 = *r0 + v0 * bv;
                *r1 = *r1 + v1 * bv;
                *r2 = *r2 + v2 * bv;
                *r3 = *r3 + v3 * bv;
            }
        }
        i += 4;
    }
    while i < m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
        i += 1;
    }
}

pub(crate) fn matmul_raw<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    matmul_acc(&mut c, a, b, m, k, n);
    c
}

/// `c += a b^T` for `a[m,k]`, `b[n,k]`: plain dot products over `k`.
pub(crate) fn matmul_nt_acc<S: Scalar>(
    c: &mut [S],
    a: &[S],
    b: &[S],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (cv, brow) in crow.iter_mut().zip(b.chunks_exact(k)) {
            let mut acc = S::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc = acc + av * bv;
            }
            *cv = *cv + acc;
        }
    }
}

/// `c += a^T b` for `a[m,k]`, `b[m,n]`, `c[k,n]`.
pub(crate) fn matmul_tn_acc<S: Scalar>(
    c: &mut [S],
    a: &[S],
    b: &[S],
    m: usize,
    k: usize,
    n: usize,
) {
    for p in 0..m {
        let arow = &a[p * k..(p + 1) * k];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// Copy head `h0..h0+dh` of `src[b, t, :]` rows into a dense `[t_len, dh]`
/// scratch buffer.
pub(crate) fn gather_head<S: Scalar>(
    src: &[S],
    b: usize,
    t_len: usize,
    c: usize,
    h0: usize,
    dh: usize,
    dst: &mut [S],
) {
    for t in 0..t_len {
        let base = (b * t_len + t) * c + h0;
        dst[t * dh..(t + 1) * dh].copy_from_slice(&src[base..base + dh]);
    }
}

pub(crate) fn scatter_head_add<S: Scalar>(
    dst: &mut [S],
    b: usize,
    t_len: usize,
    c: usize,
    h0: usize,
    dh: usize,
    src: &[S],
) {
    for t in 0..t_len {
        let base = (b * t_len + t) * c + h0;
        for j in 0..dh {
            dst[base + j] = dst[base + j] + src[t * dh + j];
        }
    }
}

/// Fused multi-head attention forward. Returns the output `[B,Tq,C]` and the
/// post-softmax weights `[B*heads, Tq, Tk]` (kept for the backward pass).
pub(crate) fn attention_forward<S: Scalar>(
    q: &[S],
    k: &[S],
    v: &[S],
    b: usize,
    tq: usize,
    tk: usize,
    c: usize,
    heads: usize,
) -> (Vec<S>, Vec<S>) {
    let dh = c / heads;
    let scale = S::from_f64(1.0 / (dh as f64).sqrt());
    let mut out = vec![S::zero(); b * tq * c];
    let mut weights = vec![S::zero(); b * heads * tq * tk];
    let mut qh = vec![S::zero(); tq * dh];
    let mut kh = vec![S::zero(); tk * dh];
    let mut vh = vec![S::zero(); tk * dh];
    let mut oh = vec![S::zero(); tq * dh];
    for bi in 0..b {
        for h in 0..heads {
            let h0 = h * dh;
            gather_head(q, bi, tq, c, h0, dh, &mut qh);
            gather_head(k, bi, tk, c, h0, dh, &mut kh);
            gather_head(v, bi, tk, c, h0, dh, &mut vh);
            let w = &mut weights[(bi * heads + h) * tq * tk..][..tq * tk];
            matmul_nt_acc(w, &qh, &kh, tq, dh, tk);
            for row in w.chunks_exact_mut(tk) {
                let mut max = S::neg_infinity();
                for r in row.iter_mut() {
                    *r = *r * scale;
                    if *r > max {
                        max = *r;
                    }
                }
                let mut sum = S::zero();
                for r in row.iter_mut() {
                    *r = (*r - max).exp();
                    sum = sum + *r;
                }
                for r in row.iter_mut() {
                    *r = *r / sum;
                }
            }
            for slot in oh.iter_mut() {
                *slot = S::zero();
            }
            matmul_acc(&mut oh, w, &vh, tq, tk, dh);
            scatter_head_add(&mut out, bi, tq, c, h0, dh, &oh);
        }
    }
    (out, weights)
}

pub(crate) fn silu_raw<S: Scalar>(x: S) -> S {
    x * (S::one() / (S::one() + (-x).exp()))
}

/// Output spatial extent of a convolution along one axis.
pub(crate) fn conv_out_extent(extent: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (extent + 2 * padding - kernel) / stride + 1
}

/// Unfold `x[C,H,W]` into `[C*k*k, Ho*Wo]` patch columns (zero padding).
pub(crate) fn im2col<S: Scalar>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Vec<S> {
    let ho = conv_out_extent(h, k, stride, padding);
    let wo = conv_out_extent(w, k, stride, padding);
    let mut cols = vec![S::zero(); c * k * k * ho * wo];
    let span = ho * wo;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[(ch * k * k + ky * k + kx) * span..][..span];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Fold `[C*k*k, Ho*Wo]` patch columns back into `x[C,H,W]`, accumulating.
pub(crate) fn col2im<S: Scalar>(
    cols: &[S],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Vec<S> {
    let ho = conv_out_extent(h, k, stride, padding);
    let wo = conv_out_extent(w, k, stride, padding);
    let span = ho * wo;
    let mut x = vec![S::zero(); c * h * w];
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[(ch * k * k + ky * k + kx) * span..][..span];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            let idx = iy as usize * w + ix as usize;
                            plane[idx] = plane[idx] + row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

pub(crate) fn softmax_last_raw<S: Scalar>(data: &[S], row: usize) -> Vec<S> {
    let mut out = vec![S::zero(); data.len()];
    for (src, dst) in data.chunks_exact(row).zip(out.chunks_exact_mut(row)) {
        let mut max = src[0];
        for &v in src {
            if v > max {
                max = v;
            }
        }
        let mut sum = S::zero();
        for (d, &v) in dst.iter_mut().zip(src) {
            let e = (v - max).exp();
            *d = e;
            sum = sum + e;
        }
        for d in dst.iter_mut() {
            *d = *d / sum;
        }
    }
    out
}

pub(crate) fn permute_raw<S: Scalar>(
    data: &[S],
    shape: &[usize],
    perm: &[usize],
) -> (Vec<usize>, Vec<S>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides_of(shape);
    let out_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = out_shape.len();
    let mut out = Vec::with_capacity(data.len());
    let mut coords = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..data.len() {
        out.push(data[src]);
        for d in (0..rank).rev() {
            coords[d] += 1;
            src += out_strides[d];
            if coords[d] < out_shape[d] {
                break;
            }
            src -= out_strides[d] * out_shape[d];
            coords[d] = 0;
        }
    }
    (out_shape, out)
}

fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl<S: Scalar> Tensor<S> {
    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("add", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Add(self.clone(), other.clone()),
        ))
    }

    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("sub", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Sub(self.clone(), other.clone()),
        ))
    }

    pub fn mul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("mul", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Mul(self.clone(), other.clone()),
        ))
    }

    /// Fused affine map over the last axis: `x[..., Cin] -> x w + b`.
    pub fn linear(&self, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
        let cin = *self.shape().last().ok_or(TensorError::Dimension {
            op: "linear",
            msg: "input needs at least one axis".into(),
        })?;
        if weight.shape().len() != 2 || weight.shape()[0] != cin {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        let cout = weight.shape()[1];
        if bias.shape() != [cout] {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: weight.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let rows = self.numel() / cin;
        // Start from the tiled bias so the product accumulates on top.
        let mut data = Vec::with_capacity(rows * cout);
        for _ in 0..rows {
            data.extend_from_slice(bias.data());
        }
        matmul_acc(&mut data, self.data(), weight.data(), rows, cin, cout);
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = cout;
        Ok(Tensor::from_op(
            shape,
            data,
            Op::Linear {
                x: self.clone(),
                w: weight.clone(),
                b: bias.clone(),
            },
        ))
    }

    pub fn add_scalar(&self, value: S) -> Tensor<S> {
        let data = self.data().iter().map(|&a| a + value).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::AddScalar(self.clone()))
    }

    pub fn mul_scalar(&self, value: S) -> Tensor<S> {
        let data = self.data().iter().map(|&a| a * value).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::MulScalar(self.clone(), value),
        )
    }

    pub fn silu(&self) -> Tensor<S> {
        let data = self.data().iter().map(|&x| silu_raw(x)).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Silu(self.clone()))
    }

    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        if self.shape().len() != 2 || other.shape().len() != 2 {
            return Err(TensorError::Dimension {
                op: "matmul",
                msg: format!(
                    "expected 2-D operands, got {:?} and {:?}",
                    self.shape(),
                    other.shape()
                ),
            });
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (other.shape()[0], other.shape()[1]);
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let data = matmul_raw(self.data(), other.data(), m, k, n);
        Ok(Tensor::from_op(
            vec![m, n],
            data,
            Op::Matmul(self.clone(), other.clone()),
        ))
    }

    /// Batched matrix product `[B,m,k] x [B,k,n] -> [B,m,n]`.
    pub fn bmm(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        if self.shape().len() != 3 || other.shape().len() != 3 {
            return Err(TensorError::Dimension {
                op: "bmm",
                msg: format!(
                    "expected 3-D operands, got {:?} and {:?}",
                    self.shape(),
                    other.shape()
                ),
            });
        }
        let (b, m, k) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (b2, k2, n) = (other.shape()[0], other.shape()[1], other.shape()[2]);
        if b != b2 || k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "bmm",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let mut data = vec![S::zero(); b * m * n];
        for i in 0..b {
            matmul_acc(
                &mut data[i * m * n..(i + 1) * m * n],
                &self.data()[i * m * k..(i + 1) * m * k],
                &other.data()[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
            );
        }
        Ok(Tensor::from_op(
            vec![b, m, n],
            data,
            Op::Bmm(self.clone(), other.clone()),
        ))
    }

    /// Cross-correlation of `x[B,C,H,W]` with `w[C',C,k,k]`.
    pub fn conv2d(&self, weight: &Tensor<S>, stride: usize, padding: usize) -> Result<Tensor<S>> {
        if self.shape().len() != 4 || weight.shape().len() != 4 {
            return Err(TensorError::Dimension {
                op: "conv2d",
                msg: format!(
                    "expected 4-D input and weight, got {:?} and {:?}",
                    self.shape(),
                    weight.shape()
                ),
            });
        }
        let (b, c, h, w) = (
            self.shape()[0],
            self.shape()[1],
            self.shape()[2],
            self.shape()[3],
        );
        let (co, ci, kh, kw) = (
            weight.shape()[0],
            weight.shape()[1],
            weight.shape()[2],
            weight.shape()[3],
        );
        if kh != kw {
            return Err(TensorError::Dimension {
                op: "conv2d",
                msg: format!("kernel must be square, got {kh}x{kw}"),
            });
        }
        if ci != c {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(TensorError::Dimension {
                op: "conv2d",
                msg: "stride must be positive".into(),
            });
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(TensorError::Dimension {
                op: "conv2d",
                msg: format!("kernel {kh} larger than padded input {h}x{w}"),
            });
        }
        let ho = conv_out_extent(h, kh, stride, padding);
        let wo = conv_out_extent(w, kw, stride, padding);
        let mut data = vec![S::zero(); b * co * ho * wo];
        for bi in 0..b {
            let cols = im2col(
                &self.data()[bi * c * h * w..(bi + 1) * c * h * w],
                c,
                h,
                w,
                kh,
                stride,
                padding,
            );
            matmul_acc(
                &mut data[bi * co * ho * wo..(bi + 1) * co * ho * wo],
                weight.data(),
                &cols,
                co,
                c * kh * kw,
                ho * wo,
            );
        }
        Ok(Tensor::from_op(
            vec![b, co, ho, wo],
            data,
            Op::Conv2d {
                x: self.clone(),
                w: weight.clone(),
                stride,
                padding,
            },
        ))
    }

    /// Group normalization over `x[B,C,H,W]` with per-channel affine.
    pub fn group_norm(
        &self,
        groups: usize,
        gamma: &Tensor<S>,
        beta: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        if self.shape().len() != 4 {
            return Err(TensorError::Dimension {
                op: "group_norm",
                msg: format!("expected 4-D input, got {:?}", self.shape()),
            });
        }
        let (b, c, h, w) = (
            self.shape()[0],
            self.shape()[1],
            self.shape()[2],
            self.shape()[3],
        );
        if groups == 0 || c % groups != 0 {
            return Err(TensorError::Dimension {
                op: "group_norm",
                msg: format!("channels {c} not divisible by groups {groups}"),
            });
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "group_norm",
                lhs: gamma.shape().to_vec(),
                rhs: vec![c],
            });
        }
        let group_c = c / groups;
        let group_n = group_c * h * w;
        let eps = S::from_f64(NORM_EPS);
        let mut data = vec![S::zero(); self.numel()];
        for bi in 0..b {
            for g in 0..groups {
                let start = bi * c * h * w + g * group_n;
                let src = &self.data()[start..start + group_n];
                let mut mean = S::zero();
                for &v in src {
                    mean = mean + v;
                }
                mean = mean / S::from_f64(group_n as f64);
                let mut var = S::zero();
                for &v in src {
                    let d = v - mean;
                    var = var + d * d;
                }
                var = var / S::from_f64(group_n as f64);
                let inv_std = S::one() / (var + eps).sqrt();
                let dst = &mut data[start..start + group_n];
                for (i, (d, &v)) in dst.iter_mut().zip(src).enumerate() {
                    let ch = g * group_c + i / (h * w);
                    *d = (v - mean) * inv_std * gamma.data()[ch] + beta.data()[ch];
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::GroupNorm {
                x: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                groups,
            },
        ))
    }

    /// Layer normalization over the last axis with affine parameters.
    pub fn layer_norm(&self, gamma: &Tensor<S>, beta: &Tensor<S>) -> Result<Tensor<S>> {
        let d = *self.shape().last().ok_or(TensorError::Dimension {
            op: "layer_norm",
            msg: "input must have at least one axis".into(),
        })?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: gamma.shape().to_vec(),
                rhs: vec![d],
            });
        }
        let eps = S::from_f64(NORM_EPS);
        let inv_d = S::one() / S::from_f64(d as f64);
        let mut data = vec![S::zero(); self.numel()];
        for (src, dst) in self.data().chunks_exact(d).zip(data.chunks_exact_mut(d)) {
            let mut mean = S::zero();
            for &v in src {
                mean = mean + v;
            }
            mean = mean * inv_d;
            let mut var = S::zero();
            for &v in src {
                let diff = v - mean;
                var = var + diff * diff;
            }
            var = var * inv_d;
            let inv_std = S::one() / (var + eps).sqrt();
            for (i, (o, &v)) in dst.iter_mut().zip(src).enumerate() {
                *o = (v - mean) * inv_std * gamma.data()[i] + beta.data()[i];
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::LayerNorm {
                x: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
            },
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&self) -> Result<Tensor<S>> {
        let d = *self.shape().last().ok_or(TensorError::Dimension {
            op: "softmax",
            msg: "input must have at least one axis".into(),
        })?;
        let data = softmax_last_raw(self.data(), d);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::SoftmaxLast(self.clone()),
        ))
    }

    /// Materialized axis permutation.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<S>> {
        let rank = self.shape().len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::Dimension {
                op: "permute",
                msg: format!("{perm:?} is not a permutation of 0..{rank}"),
            });
        }
        let (out_shape, data) = permute_raw(self.data(), self.shape(), perm);
        Ok(Tensor::from_op(
            out_shape,
            data,
            Op::Permute {
                x: self.clone(),
                perm: perm.to_vec(),
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<S>> {
        if numel_of(shape) != self.numel() {
            return Err(TensorError::Dimension {
                op: "reshape",
                msg: format!("cannot view {:?} as {:?}", self.shape(), shape),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data().to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    /// Add `bias[D]` to every row of `x[..., D]`.
    pub fn add_bias(&self, bias: &Tensor<S>) -> Result<Tensor<S>> {
        let d = *self.shape().last().unwrap_or(&0);
        if bias.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let mut data = self.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            for (v, &b) in row.iter_mut().zip(bias.data()) {
                *v = *v + b;
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::AddBias {
                x: self.clone(),
                bias: bias.clone(),
            },
        ))
    }

    /// Add `bias[C]` to every `(b, h, w)` position of `x[B,C,H,W]`.
    pub fn add_channel_bias(&self, bias: &Tensor<S>) -> Result<Tensor<S>> {
        if self.shape().len() != 4 || bias.shape() != [self.shape()[1]] {
            return Err(TensorError::ShapeMismatch {
                op: "add_channel_bias",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let (b, c, h, w) = (
            self.shape()[0],
            self.shape()[1],
            self.shape()[2],
            self.shape()[3],
        );
        let hw = h * w;
        let mut data = self.data().to_vec();
        for bi in 0..b {
            for ch in 0..c {
                let bias_v = bias.data()[ch];
                for v in &mut data[(bi * c + ch) * hw..(bi * c + ch + 1) * hw] {
                    *v = *v + bias_v;
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::AddChannelBias {
                x: self.clone(),
                bias: bias.clone(),
            },
        ))
    }

    /// Gather rows of an embedding table: `table[V,D]` by `ids -> [n,D]`.
    pub fn embedding(&self, ids: &[usize]) -> Result<Tensor<S>> {
        if self.shape().len() != 2 {
            return Err(TensorError::Dimension {
                op: "embedding",
                msg: format!("table must be 2-D, got {:?}", self.shape()),
            });
        }
        let (v, d) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(TensorError::Dimension {
                op: "embedding",
                msg: format!("id {bad} out of vocabulary of size {v}"),
            });
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&self.data()[id * d..(id + 1) * d]);
        }
        Ok(Tensor::from_op(
            vec![ids.len(), d],
            data,
            Op::Embedding {
                table: self.clone(),
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn sum_all(&self) -> Tensor<S> {
        let mut s = S::zero();
        for &v in self.data() {
            s = s + v;
        }
        Tensor::from_op(vec![], vec![s], Op::SumAll(self.clone()))
    }

    pub fn mean_all(&self) -> Tensor<S> {
        let mut s = S::zero();
        for &v in self.data() {
            s = s + v;
        }
        let n = S::from_f64(self.numel() as f64);
        Tensor::from_op(vec![], vec![s / n], Op::MeanAll(self.clone()))
    }

    /// Tile the tensor across new leading axes: `x[s...] -> [leading..., s...]`.
    pub fn broadcast_leading(&self, leading: &[usize]) -> Tensor<S> {
        let repeat = numel_of(leading);
        let mut data = Vec::with_capacity(repeat * self.numel());
        for _ in 0..repeat {
            data.extend_from_slice(self.data());
        }
        let mut shape = leading.to_vec();
        shape.extend_from_slice(self.shape());
        Tensor::from_op(
            shape,
            data,
            Op::BroadcastLeading {
                x: self.clone(),
                repeat,
            },
        )
    }

    /// Repeat each element across new trailing axes: `x[s...] -> [s..., trailing...]`.
    pub fn broadcast_trailing(&self, trailing: &[usize]) -> Tensor<S> {
        let repeat = numel_of(trailing);
        let mut data = Vec::with_capacity(self.numel() * repeat);
        for &v in self.data() {
            for _ in 0..repeat {
                data.push(v);
            }
        }
        let mut shape = self.shape().to_vec();
        shape.extend_from_slice(trailing);
        Tensor::from_op(
            shape,
            data,
            Op::BroadcastTrailing {
                x: self.clone(),
                repeat,
            },
        )
    }

    /// Nearest-neighbour 2x spatial upsampling of `x[B,C,H,W]`.
    pub fn upsample2x(&self) -> Result<Tensor<S>> {
        if self.shape().len() != 4 {
            return Err(TensorError::Dimension {
                op: "upsample2x",
                msg: format!("expected 4-D input, got {:?}", self.shape()),
            });
        }
        let (b, c, h, w) = (
            self.shape()[0],
            self.shape()[1],
            self.shape()[2],
            self.shape()[3],
        );
        let mut data = vec![S::zero(); b * c * 4 * h * w];
        let (h2, w2) = (2 * h, 2 * w);
        for plane in 0..b * c {
            let src = &self.data()[plane * h * w..(plane + 1) * h * w];
            let dst = &mut data[plane * h2 * w2..(plane + 1) * h2 * w2];
            for y in 0..h2 {
                for x in 0..w2 {
                    dst[y * w2 + x] = src[(y / 2) * w + x / 2];
                }
            }
        }
        Ok(Tensor::from_op(
            vec![b, c, h2, w2],
            data,
            Op::Upsample2x(self.clone()),
        ))
    }
}

/// Concatenate tensors along `axis`; all other extents must match.
pub fn concat<S: Scalar>(parts: &[Tensor<S>], axis: usize) -> Result<Tensor<S>> {
    let first = parts.first().ok_or(TensorError::Dimension {
        op: "concat",
        msg: "need at least one tensor".into(),
    })?;
    let rank = first.shape().len();
    if axis >= rank {
        return Err(TensorError::Dimension {
            op: "concat",
            msg: format!("axis {axis} out of range for rank {rank}"),
        });
    }
    let mut axis_total = 0;
    for p in parts {
        if p.shape().len() != rank
            || p.shape()
                .iter()
                .enumerate()
                .any(|(d, &e)| d != axis && e != first.shape()[d])
        {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        axis_total += p.shape()[axis];
    }
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = axis_total;

    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(numel_of(&out_shape));
    for o in 0..outer {
        for p in parts {
            let block = p.shape()[axis] * inner;
            data.extend_from_slice(&p.data()[o * block..(o + 1) * block]);
        }
    }
    Ok(Tensor::from_op(
        out_shape,
        data,
        Op::Concat {
            parts: parts.to_vec(),
            axis,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::check_gradients;
    use super::super::{attention, concat, Tensor, TensorError};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(got: &[f64], want: &[f64], tol: f64) {
        assert_eq!(got.len(), want.len());
        for (i, (g, w)) in got.iter().zip(want).enumerate() {
            assert!((g - w).abs() <= tol, "index {i}: got {g}, want {w}");
        }
    }

    #[test]
    fn matmul_identity_is_identity() {
        let eye = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::<f64>::from_vec(&[2, 2], vec![3.0, -1.0, 2.5, 7.0]).unwrap();
        let out = eye.matmul(&a).unwrap();
        assert_eq!(out.data(), a.data());
    }

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2, 1], vec![0.0, 1.0]).unwrap();
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.shape(), &[2, 1]);
        assert_eq!(out.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_inner_extent_mismatch_errors() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 2]);
        assert!(matches!(
            a.matmul(&b),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let a = Tensor::<f64>::randn(&[3, 4], &mut rng).with_requires_grad(true);
            let b = Tensor::<f64>::randn(&[4, 2], &mut rng).with_requires_grad(true);
            let report = check_gradients(
                &|leaves: &[Tensor<f64>]| Ok(leaves[0].matmul(&leaves[1])?.sum_all()),
                &[a, b],
                1e-4,
            )
            .unwrap();
            assert!(report.max_rel_err < 1e-6, "rel {}", report.max_rel_err);
        }
    }

    #[test]
    fn conv2d_one_by_one_kernel_is_per_pixel_linear() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::<f64>::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let y = x.conv2d(&w, 1, 0).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn conv2d_ones_kernel_on_constant_image() {
        let c = 0.5;
        let x = Tensor::<f64>::full(&[1, 1, 4, 4], c);
        let w = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let y = x.conv2d(&w, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        // Interior taps see the full 3x3 window; zero padding shrinks borders.
        let d = y.data();
        assert!((d[5] - 9.0 * c).abs() < 1e-12);
        assert!((d[0] - 4.0 * c).abs() < 1e-12);
        assert!((d[1] - 6.0 * c).abs() < 1e-12);
    }

    #[test]
    fn conv2d_channel_mismatch_errors() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let w = Tensor::<f64>::zeros(&[2, 2, 3, 3]);
        assert!(x.conv2d(&w, 1, 1).is_err());
    }

    #[test]
    fn conv2d_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(stride, padding) in &[(1usize, 1usize), (2, 1), (1, 0)] {
            let x = Tensor::<f64>::randn(&[2, 2, 5, 5], &mut rng).with_requires_grad(true);
            let w = Tensor::<f64>::randn(&[3, 2, 3, 3], &mut rng).with_requires_grad(true);
            let report = check_gradients(
                &|l: &[Tensor<f64>]| Ok(l[0].conv2d(&l[1], stride, padding)?.sum_all()),
                &[x, w],
                1e-4,
            )
            .unwrap();
            assert!(report.max_rel_err < 1e-5, "rel {}", report.max_rel_err);
        }
    }

    #[test]
    fn group_norm_constant_input_returns_beta() {
        let x = Tensor::<f64>::full(&[1, 4, 2, 2], 3.7);
        let gamma = Tensor::<f64>::full(&[4], 2.0);
        let beta = Tensor::<f64>::from_vec(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let y = x.group_norm(2, &gamma, &beta).unwrap();
        for c in 0..4 {
            for i in 0..4 {
                let v = y.data()[c * 4 + i];
                let want = 0.1 * (c as f64 + 1.0);
                assert!((v - want).abs() < 1e-9, "channel {c}: {v}");
            }
        }
    }

    #[test]
    fn group_norm_two_element_group() {
        // mean 0, variance 1; the epsilon in the denominator shaves a hair off.
        let x = Tensor::<f64>::from_vec(&[1, 2, 1, 1], vec![-1.0, 1.0]).unwrap();
        let gamma = Tensor::<f64>::full(&[2], 1.0);
        let beta = Tensor::<f64>::zeros(&[2]);
        let y = x.group_norm(1, &gamma, &beta).unwrap();
        let want = 1.0 / (1.0 + 1e-5f64).sqrt();
        assert_close(y.data(), &[-want, want], 1e-12);
    }

    #[test]
    fn group_norm_zero_mean_per_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::randn(&[2, 6, 4, 4], &mut rng);
        let gamma = Tensor::<f64>::full(&[6], 1.0);
        let beta = Tensor::<f64>::zeros(&[6]);
        let y = x.group_norm(3, &gamma, &beta).unwrap();
        let group_n = 2 * 16;
        for b in 0..2 {
            for g in 0..3 {
                let start = b * 6 * 16 + g * group_n;
                let mean: f64 =
                    y.data()[start..start + group_n].iter().sum::<f64>() / group_n as f64;
                assert!(mean.abs() < 1e-6, "group mean {mean}");
            }
        }
    }

    #[test]
    fn group_norm_divisibility_violation_errors() {
        let x = Tensor::<f64>::zeros(&[1, 5, 2, 2]);
        let gamma = Tensor::<f64>::full(&[5], 1.0);
        let beta = Tensor::<f64>::zeros(&[5]);
        assert!(x.group_norm(2, &gamma, &beta).is_err());
    }

    #[test]
    fn group_norm_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::randn(&[2, 4, 3, 3], &mut rng).with_requires_grad(true);
        let gamma = Tensor::<f64>::randn(&[4], &mut rng).with_requires_grad(true);
        let beta = Tensor::<f64>::randn(&[4], &mut rng).with_requires_grad(true);
        let report = check_gradients(
            &|l: &[Tensor<f64>]| {
                let y = l[0].group_norm(2, &l[1], &l[2])?;
                Ok(y.mul(&y)?.sum_all())
            },
            &[x, gamma, beta],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-5, "rel {}", report.max_rel_err);
    }

    #[test]
    fn attention_single_step_returns_values_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = Tensor::<f64>::randn(&[2, 1, 4], &mut rng);
        let k = Tensor::<f64>::randn(&[2, 1, 4], &mut rng);
        let v = Tensor::<f64>::randn(&[2, 1, 4], &mut rng);
        let out = attention(&q, &k, &v).unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn attention_uniform_scores_average_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = Tensor::<f64>::zeros(&[1, 3, 2]);
        let k = Tensor::<f64>::randn(&[1, 3, 2], &mut rng);
        let v = Tensor::<f64>::from_vec(&[1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = attention(&q, &k, &v).unwrap();
        assert_close(out.data(), &[3.0, 4.0, 3.0, 4.0, 3.0, 4.0], 1e-12);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let q = Tensor::<f64>::randn(&[2, 5, 3], &mut rng);
            let k = Tensor::<f64>::randn(&[2, 5, 3], &mut rng);
            let kt = k.permute(&[0, 2, 1]).unwrap();
            let scale = 1.0 / (3.0f64).sqrt();
            let weights = q.bmm(&kt).unwrap().mul_scalar(scale).softmax_last().unwrap();
            for row in weights.data().chunks_exact(5) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
            }
        }
    }

    #[test]
    fn attention_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let q = Tensor::<f64>::randn(&[2, 3, 4], &mut rng).with_requires_grad(true);
            let k = Tensor::<f64>::randn(&[2, 3, 4], &mut rng).with_requires_grad(true);
            let v = Tensor::<f64>::randn(&[2, 3, 4], &mut rng).with_requires_grad(true);
            let report = check_gradients(
                &|l: &[Tensor<f64>]| {
                    let y = attention(&l[0], &l[1], &l[2])?;
                    Ok(y.mul(&y)?.sum_all())
                },
                &[q, k, v],
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_err < 1e-5, "rel {}", report.max_rel_err);
        }
    }

    #[test]
    fn attention_dimension_mismatch_errors() {
        let q = Tensor::<f64>::zeros(&[1, 2, 4]);
        let k = Tensor::<f64>::zeros(&[1, 2, 3]);
        let v = Tensor::<f64>::zeros(&[1, 2, 3]);
        assert!(attention(&q, &k, &v).is_err());
    }

    #[test]
    fn concat_and_permute_round_trip_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Tensor::<f64>::randn(&[2, 3, 2], &mut rng).with_requires_grad(true);
        let b = Tensor::<f64>::randn(&[2, 1, 2], &mut rng).with_requires_grad(true);
        let report = check_gradients(
            &|l: &[Tensor<f64>]| {
                let c = concat(&[l[0].clone(), l[1].clone()], 1)?;
                let p = c.permute(&[1, 0, 2])?;
                Ok(p.mul(&p)?.sum_all())
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "rel {}", report.max_rel_err);
    }

    #[test]
    fn misc_op_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Tensor::<f64>::randn(&[2, 2, 2, 2], &mut rng).with_requires_grad(true);
        let cb = Tensor::<f64>::randn(&[2], &mut rng).with_requires_grad(true);
        let report = check_gradients(
            &|l: &[Tensor<f64>]| {
                let y = l[0].upsample2x()?.silu().add_channel_bias(&l[1])?;
                Ok(y.mul(&y)?.mean_all())
            },
            &[x, cb],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "rel {}", report.max_rel_err);

        let table = Tensor::<f64>::randn(&[5, 3], &mut rng).with_requires_grad(true);
        let report = check_gradients(
            &|l: &[Tensor<f64>]| {
                let e = l[0].embedding(&[0, 2, 2, 4])?;
                Ok(e.mul(&e)?.sum_all())
            },
            &[table],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "rel {}", report.max_rel_err);

        let v = Tensor::<f64>::randn(&[3], &mut rng).with_requires_grad(true);
        let report = check_gradients(
            &|l: &[Tensor<f64>]| {
                let y = l[0].broadcast_leading(&[2, 2]).broadcast_trailing(&[2]);
                Ok(y.mul(&y)?.sum_all())
            },
            &[v],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "rel {}", report.max_rel_err);

        let x = Tensor::<f64>::randn(&[4, 3], &mut rng).with_requires_grad(true);
        let g = Tensor::<f64>::randn(&[3], &mut rng).with_requires_grad(true);
        let b = Tensor::<f64>::randn(&[3], &mut rng).with_requires_grad(true);
        let report = check_gradients(
            &|l: &[Tensor<f64>]| {
                let y = l[0].layer_norm(&l[1], &l[2])?.add_bias(&l[2])?;
                Ok(y.mul(&y)?.sum_all())
            },
            &[x, g, b],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-5, "rel {}", report.max_rel_err);
    }

    #[test]
    fn embedding_rejects_out_of_vocab_ids() {
        let table = Tensor::<f64>::zeros(&[4, 2]);
        assert!(table.embedding(&[0, 4]).is_err());
    }
}
