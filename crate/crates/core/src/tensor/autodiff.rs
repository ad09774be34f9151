//! Reverse-mode differentiation over the recorded op graph.

use std::collections::HashMap;

use super::ops::{attention_forward, col2im, gather_head, im2col, matmul_acc, matmul_nt_acc, matmul_tn_acc, permute_raw, scatter_head_add};
use super::{Result, Scalar, Tensor, TensorError};

pub(crate) const NORM_EPS: f64 = 1e-5;

pub(crate) enum Op<S: Scalar> {
    Leaf,
    Add(Tensor<S>, Tensor<S>),
    Sub(Tensor<S>, Tensor<S>),
    Mul(Tensor<S>, Tensor<S>),
    AddScalar(Tensor<S>),
    MulScalar(Tensor<S>, S),
    Silu(Tensor<S>),
    Matmul(Tensor<S>, Tensor<S>),
    Bmm(Tensor<S>, Tensor<S>),
    Linear {
        x: Tensor<S>,
        w: Tensor<S>,
        b: Tensor<S>,
    },
    Attention {
        q: Tensor<S>,
        k: Tensor<S>,
        v: Tensor<S>,
        heads: usize,
        /// Post-softmax weights `[B*heads, Tq, Tk]` from the forward pass.
        weights: Vec<S>,
    },
    Conv2d {
        x: Tensor<S>,
        w: Tensor<S>,
        stride: usize,
        padding: usize,
    },
    GroupNorm {
        x: Tensor<S>,
        gamma: Tensor<S>,
        beta: Tensor<S>,
        groups: usize,
    },
    LayerNorm {
        x: Tensor<S>,
        gamma: Tensor<S>,
        beta: Tensor<S>,
    },
    SoftmaxLast(Tensor<S>),
    Permute {
        x: Tensor<S>,
        perm: Vec<usize>,
    },
    Reshape(Tensor<S>),
    Concat {
        parts: Vec<Tensor<S>>,
        axis: usize,
    },
    AddBias {
        x: Tensor<S>,
        bias: Tensor<S>,
    },
    AddChannelBias {
        x: Tensor<S>,
        bias: Tensor<S>,
    },
    Embedding {
        table: Tensor<S>,
        ids: Vec<usize>,
    },
    SumAll(Tensor<S>),
    MeanAll(Tensor<S>),
    BroadcastLeading {
        x: Tensor<S>,
        repeat: usize,
    },
    BroadcastTrailing {
        x: Tensor<S>,
        repeat: usize,
    },
    Upsample2x(Tensor<S>),
}

impl<S: Scalar> Op<S> {
    pub(crate) fn parents(&self) -> Vec<&Tensor<S>> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::AddScalar(x)
            | Op::MulScalar(x, _)
            | Op::Silu(x)
            | Op::SoftmaxLast(x)
            | Op::Reshape(x)
            | Op::SumAll(x)
            | Op::MeanAll(x)
            | Op::Upsample2x(x) => vec![x],
            Op::Matmul(a, b) | Op::Bmm(a, b) => vec![a, b],
            Op::Linear { x, w, b } => vec![x, w, b],
            Op::Attention { q, k, v, .. } => vec![q, k, v],
            Op::Conv2d { x, w, .. } => vec![x, w],
            Op::GroupNorm { x, gamma, beta, .. } | Op::LayerNorm { x, gamma, beta } => {
                vec![x, gamma, beta]
            }
            Op::Permute { x, .. }
            | Op::BroadcastLeading { x, .. }
            | Op::BroadcastTrailing { x, .. } => vec![x],
            Op::Concat { parts, .. } => parts.iter().collect(),
            Op::AddBias { x, bias } | Op::AddChannelBias { x, bias } => vec![x, bias],
            Op::Embedding { table, .. } => vec![table],
        }
    }
}

struct GradSink<S: Scalar> {
    pending: HashMap<u64, Vec<S>>,
}

impl<S: Scalar> GradSink<S> {
    fn add(&mut self, target: &Tensor<S>, delta: Vec<S>) {
        if !target.inner.needs_grad {
            return;
        }
        match self.pending.entry(target.inner.id) {
            std::collections::hash_map::Entry::Occupied(mut e) => {
                for (a, b) in e.get_mut().iter_mut().zip(&delta) {
                    *a = *a + *b;
                }
            }
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(delta);
            }
        }
    }
}

impl<S: Scalar> Tensor<S> {
    /// Accumulate `d loss / d leaf` into every gradient-tracked leaf reachable
    /// from this scalar. Gradients add up across calls; reset with
    /// [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarRoot {
                shape: self.shape().to_vec(),
            });
        }
        if !self.inner.needs_grad {
            return Ok(());
        }
        let order = topo_order(self);
        let mut sink = GradSink {
            pending: HashMap::with_capacity(order.len()),
        };
        sink.pending.insert(self.inner.id, vec![S::one()]);
        for node in order.iter().rev() {
            let Some(grad) = sink.pending.remove(&node.inner.id) else {
                continue;
            };
            if node.inner.requires_grad {
                node.accumulate_grad(&grad);
            }
            backprop_one(node, &grad, &mut sink);
        }
        Ok(())
    }
}

/// Post-order over the needs-grad subgraph; reversed it is a topological
/// order (children before parents is impossible since edges point from new
/// nodes to strictly older ones).
fn topo_order<S: Scalar>(root: &Tensor<S>) -> Vec<Tensor<S>> {
    let mut order = Vec::new();
    let mut visited = std::collections::HashSet::new();
    let mut stack: Vec<(Tensor<S>, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.inner.id);
    while !stack.is_empty() {
        let i = stack.len() - 1;
        let node = stack[i].0.clone();
        let idx = stack[i].1;
        let parents = node.inner.op.parents();
        if idx < parents.len() {
            stack[i].1 += 1;
            let p = parents[idx].clone();
            if p.inner.needs_grad && visited.insert(p.inner.id) {
                stack.push((p, 0));
            }
        } else {
            stack.pop();
            order.push(node);
        }
    }
    order
}

fn backprop_one<S: Scalar>(out: &Tensor<S>, grad: &[S], sink: &mut GradSink<S>) {
    match &out.inner.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            sink.add(a, grad.to_vec());
            sink.add(b, grad.to_vec());
        }
        Op::Sub(a, b) => {
            sink.add(a, grad.to_vec());
            sink.add(b, grad.iter().map(|&g| -g).collect());
        }
        Op::Mul(a, b) => {
            sink.add(
                a,
                grad.iter().zip(b.data()).map(|(&g, &v)| g * v).collect(),
            );
            sink.add(
                b,
                grad.iter().zip(a.data()).map(|(&g, &v)| g * v).collect(),
            );
        }
        Op::AddScalar(x) => sink.add(x, grad.to_vec()),
        Op::MulScalar(x, v) => sink.add(x, grad.iter().map(|&g| g * *v).collect()),
        Op::Silu(x) => {
            let dx = grad
                .iter()
                .zip(x.data())
                .map(|(&g, &xv)| {
                    let sig = S::one() / (S::one() + (-xv).exp());
                    g * sig * (S::one() + xv * (S::one() - sig))
                })
                .collect();
            sink.add(x, dx);
        }
        Op::Matmul(a, b) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            // dA = G B^T, dB = A^T G; both kernels read B/A in place.
            let mut da = vec![S::zero(); m * k];
            matmul_nt_acc(&mut da, grad, b.data(), m, n, k);
            let mut db = vec![S::zero(); k * n];
            matmul_tn_acc(&mut db, a.data(), grad, m, k, n);
            sink.add(a, da);
            sink.add(b, db);
        }
        Op::Bmm(a, b) => {
            let (bs, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
            let n = b.shape()[2];
            let mut da = vec![S::zero(); a.numel()];
            let mut db = vec![S::zero(); b.numel()];
            for i in 0..bs {
                let g = &grad[i * m * n..(i + 1) * m * n];
                let ab = &a.data()[i * m * k..(i + 1) * m * k];
                let bb = &b.data()[i * k * n..(i + 1) * k * n];
                matmul_nt_acc(&mut da[i * m * k..(i + 1) * m * k], g, bb, m, n, k);
                matmul_tn_acc(&mut db[i * k * n..(i + 1) * k * n], ab, g, m, k, n);
            }
            sink.add(a, da);
            sink.add(b, db);
        }
        Op::Linear { x, w, b } => {
            let cin = *x.shape().last().unwrap();
            let cout = b.numel();
            let rows = x.numel() / cin;
            if x.inner.needs_grad {
                let mut dx = vec![S::zero(); x.numel()];
                matmul_nt_acc(&mut dx, grad, w.data(), rows, cout, cin);
                sink.add(x, dx);
            }
            if w.inner.needs_grad {
                let mut dw = vec![S::zero(); w.numel()];
                matmul_tn_acc(&mut dw, x.data(), grad, rows, cin, cout);
                sink.add(w, dw);
            }
            if b.inner.needs_grad {
                let mut db = vec![S::zero(); cout];
                for row in grad.chunks_exact(cout) {
                    for (a, &g) in db.iter_mut().zip(row) {
                        *a = *a + g;
                    }
                }
                sink.add(b, db);
            }
        }
        Op::Attention {
            q,
            k,
            v,
            heads,
            weights,
        } => {
            let (bs, tq, c) = (q.shape()[0], q.shape()[1], q.shape()[2]);
            let tk = k.shape()[1];
            let heads = *heads;
            let dh = c / heads;
            let scale = S::from_f64(1.0 / (dh as f64).sqrt());
            let mut dq = vec![S::zero(); q.numel()];
            let mut dk = vec![S::zero(); k.numel()];
            let mut dv = vec![S::zero(); v.numel()];
            let mut gh = vec![S::zero(); tq * dh];
            let mut qh = vec![S::zero(); tq * dh];
            let mut kh = vec![S::zero(); tk * dh];
            let mut vh = vec![S::zero(); tk * dh];
            let mut dah = vec![S::zero(); tq * tk];
            let mut dqh = vec![S::zero(); tq * dh];
            let mut dkh = vec![S::zero(); tk * dh];
            let mut dvh = vec![S::zero(); tk * dh];
            for bi in 0..bs {
                for h in 0..heads {
                    let h0 = h * dh;
                    gather_head(grad, bi, tq, c, h0, dh, &mut gh);
                    gather_head(q.data(), bi, tq, c, h0, dh, &mut qh);
                    gather_head(k.data(), bi, tk, c, h0, dh, &mut kh);
                    gather_head(v.data(), bi, tk, c, h0, dh, &mut vh);
                    let a = &weights[(bi * heads + h) * tq * tk..][..tq * tk];
                    // dv = A^T g
                    for slot in dvh.iter_mut() {
                        *slot = S::zero();
                    }
                    matmul_tn_acc(&mut dvh, a, &gh, tq, tk, dh);
                    // dA = g v^T, then the softmax Jacobian and score scale.
                    for slot in dah.iter_mut() {
                        *slot = S::zero();
                    }
                    matmul_nt_acc(&mut dah, &gh, &vh, tq, dh, tk);
                    for (da_row, a_row) in dah.chunks_exact_mut(tk).zip(a.chunks_exact(tk)) {
                        let mut dot = S::zero();
                        for (&da, &av) in da_row.iter().zip(a_row) {
                            dot = dot + da * av;
                        }
                        for (da, &av) in da_row.iter_mut().zip(a_row) {
                            *da = av * (*da - dot) * scale;
                        }
                    }
                    for slot in dqh.iter_mut() {
                        *slot = S::zero();
                    }
                    matmul_acc(&mut dqh, &dah, &kh, tq, tk, dh);
                    for slot in dkh.iter_mut() {
                        *slot = S::zero();
                    }
                    matmul_tn_acc(&mut dkh, &dah, &qh, tq, tk, dh);
                    scatter_head_add(&mut dq, bi, tq, c, h0, dh, &dqh);
                    scatter_head_add(&mut dk, bi, tk, c, h0, dh, &dkh);
                    scatter_head_add(&mut dv, bi, tk, c, h0, dh, &dvh);
                }
            }
            sink.add(q, dq);
            sink.add(k, dk);
            sink.add(v, dv);
        }
        Op::Conv2d {
            x,
            w,
            stride,
            padding,
        } => {
            let (b, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
            let (co, _, k, _) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
            let span = out.shape()[2] * out.shape()[3];
            let ckk = c * k * k;
            let want_x = x.inner.needs_grad;
            let want_w = w.inner.needs_grad;
            let mut dw = vec![S::zero(); w.numel()];
            let mut dx = Vec::new();
            let mut dcols = vec![S::zero(); ckk * span];
            for bi in 0..b {
                let g = &grad[bi * co * span..(bi + 1) * co * span];
                if want_w {
                    // dW += G cols^T, with cols rebuilt rather than stored.
                    let cols = im2col(
                        &x.data()[bi * c * h * wd..(bi + 1) * c * h * wd],
                        c,
                        h,
                        wd,
                        k,
                        *stride,
                        *padding,
                    );
                    matmul_nt_acc(&mut dw, g, &cols, co, span, ckk);
                }
                if want_x {
                    // dcols = W^T G, folded back into the image grid.
                    for v in dcols.iter_mut() {
                        *v = S::zero();
                    }
                    matmul_tn_acc(&mut dcols, w.data(), g, co, ckk, span);
                    dx.extend(col2im(&dcols, c, h, wd, k, *stride, *padding));
                }
            }
            if want_w {
                sink.add(w, dw);
            }
            if want_x {
                sink.add(x, dx);
            }
        }
        Op::GroupNorm { x, gamma, beta, groups } => {
            let (b, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
            let group_c = c / groups;
            let group_n = group_c * h * wd;
            let hw = h * wd;
            let eps = S::from_f64(NORM_EPS);
            let inv_n = S::one() / S::from_f64(group_n as f64);
            let mut dx = vec![S::zero(); x.numel()];
            let mut dgamma = vec![S::zero(); c];
            let mut dbeta = vec![S::zero(); c];
            for bi in 0..b {
                for g in 0..*groups {
                    let start = bi * c * hw + g * group_n;
                    let src = &x.data()[start..start + group_n];
                    let gout = &grad[start..start + group_n];
                    let mut mean = S::zero();
                    for &v in src {
                        mean = mean + v;
                    }
                    mean = mean * inv_n;
                    let mut var = S::zero();
                    for &v in src {
                        let d = v - mean;
                        var = var + d * d;
                    }
                    var = var * inv_n;
                    let inv_std = S::one() / (var + eps).sqrt();
                    // dxhat plus the two reduction terms of the fused form.
                    let mut sum_dxhat = S::zero();
                    let mut sum_dxhat_xhat = S::zero();
                    for (i, (&go, &v)) in gout.iter().zip(src).enumerate() {
                        let ch = g * group_c + i / hw;
                        let xhat = (v - mean) * inv_std;
                        dgamma[ch] = dgamma[ch] + go * xhat;
                        dbeta[ch] = dbeta[ch] + go;
                        let dxhat = go * gamma.data()[ch];
                        sum_dxhat = sum_dxhat + dxhat;
                        sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                    }
                    for (i, (&go, &v)) in gout.iter().zip(src).enumerate() {
                        let ch = g * group_c + i / hw;
                        let xhat = (v - mean) * inv_std;
                        let dxhat = go * gamma.data()[ch];
                        dx[start + i] =
                            inv_std * (dxhat - inv_n * (sum_dxhat + xhat * sum_dxhat_xhat));
                    }
                }
            }
            sink.add(x, dx);
            sink.add(gamma, dgamma);
            sink.add(beta, dbeta);
        }
        Op::LayerNorm { x, gamma, beta } => {
            let d = *x.shape().last().unwrap();
            let eps = S::from_f64(NORM_EPS);
            let inv_d = S::one() / S::from_f64(d as f64);
            let mut dx = vec![S::zero(); x.numel()];
            let mut dgamma = vec![S::zero(); d];
            let mut dbeta = vec![S::zero(); d];
            for (row, (src, gout)) in x.data().chunks_exact(d).zip(grad.chunks_exact(d)).enumerate()
            {
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
                let mut sum_dxhat = S::zero();
                let mut sum_dxhat_xhat = S::zero();
                for (i, (&go, &v)) in gout.iter().zip(src).enumerate() {
                    let xhat = (v - mean) * inv_std;
                    dgamma[i] = dgamma[i] + go * xhat;
                    dbeta[i] = dbeta[i] + go;
                    let dxhat = go * gamma.data()[i];
                    sum_dxhat = sum_dxhat + dxhat;
                    sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                }
                for (i, (&go, &v)) in gout.iter().zip(src).enumerate() {
                    let xhat = (v - mean) * inv_std;
                    let dxhat = go * gamma.data()[i];
                    dx[row * d + i] =
                        inv_std * (dxhat - inv_d * (sum_dxhat + xhat * sum_dxhat_xhat));
                }
            }
            sink.add(x, dx);
            sink.add(gamma, dgamma);
            sink.add(beta, dbeta);
        }
        Op::SoftmaxLast(x) => {
            let d = *out.shape().last().unwrap();
            let mut dx = vec![S::zero(); x.numel()];
            for ((s, g), slot) in out
                .data()
                .chunks_exact(d)
                .zip(grad.chunks_exact(d))
                .zip(dx.chunks_exact_mut(d))
            {
                let mut dot = S::zero();
                for (&sv, &gv) in s.iter().zip(g) {
                    dot = dot + sv * gv;
                }
                for ((o, &sv), &gv) in slot.iter_mut().zip(s).zip(g) {
                    *o = sv * (gv - dot);
                }
            }
            sink.add(x, dx);
        }
        Op::Permute { x, perm } => {
            let mut inverse = vec![0usize; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inverse[p] = i;
            }
            let (_, dx) = permute_raw(grad, out.shape(), &inverse);
            sink.add(x, dx);
        }
        Op::Reshape(x) => sink.add(x, grad.to_vec()),
        Op::Concat { parts, axis } => {
            let outer: usize = out.shape()[..*axis].iter().product();
            let inner: usize = out.shape()[*axis + 1..].iter().product();
            let mut offsets = Vec::with_capacity(parts.len());
            let mut acc = 0usize;
            for p in parts {
                offsets.push(acc);
                acc += p.shape()[*axis] * inner;
            }
            let out_block = acc;
            for (p, &off) in parts.iter().zip(&offsets) {
                let block = p.shape()[*axis] * inner;
                let mut dp = Vec::with_capacity(p.numel());
                for o in 0..outer {
                    dp.extend_from_slice(&grad[o * out_block + off..o * out_block + off + block]);
                }
                sink.add(p, dp);
            }
        }
        Op::AddBias { x, bias } => {
            let d = bias.numel();
            let mut db = vec![S::zero(); d];
            for row in grad.chunks_exact(d) {
                for (a, &g) in db.iter_mut().zip(row) {
                    *a = *a + g;
                }
            }
            sink.add(x, grad.to_vec());
            sink.add(bias, db);
        }
        Op::AddChannelBias { x, bias } => {
            let (b, c, h, w) = (
                out.shape()[0],
                out.shape()[1],
                out.shape()[2],
                out.shape()[3],
            );
            let hw = h * w;
            let mut db = vec![S::zero(); c];
            for bi in 0..b {
                for ch in 0..c {
                    let mut s = S::zero();
                    for &g in &grad[(bi * c + ch) * hw..(bi * c + ch + 1) * hw] {
                        s = s + g;
                    }
                    db[ch] = db[ch] + s;
                }
            }
            sink.add(x, grad.to_vec());
            sink.add(bias, db);
        }
        Op::Embedding { table, ids } => {
            let d = table.shape()[1];
            let mut dt = vec![S::zero(); table.numel()];
            for (i, &id) in ids.iter().enumerate() {
                for (a, &g) in dt[id * d..(id + 1) * d].iter_mut().zip(&grad[i * d..(i + 1) * d]) {
                    *a = *a + g;
                }
            }
            sink.add(table, dt);
        }
        Op::SumAll(x) => sink.add(x, vec![grad[0]; x.numel()]),
        Op::MeanAll(x) => {
            let v = grad[0] / S::from_f64(x.numel() as f64);
            sink.add(x, vec![v; x.numel()]);
        }
        Op::BroadcastLeading { x, repeat } => {
            let n = x.numel();
            let mut dx = vec![S::zero(); n];
            for chunk in grad.chunks_exact(n).take(*repeat) {
                for (a, &g) in dx.iter_mut().zip(chunk) {
                    *a = *a + g;
                }
            }
            sink.add(x, dx);
        }
        Op::BroadcastTrailing { x, repeat } => {
            let mut dx = vec![S::zero(); x.numel()];
            for (a, chunk) in dx.iter_mut().zip(grad.chunks_exact(*repeat)) {
                let mut s = S::zero();
                for &g in chunk {
                    s = s + g;
                }
                *a = s;
            }
            sink.add(x, dx);
        }
        Op::Upsample2x(x) => {
            let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
            let (h2, w2) = (2 * h, 2 * w);
            let mut dx = vec![S::zero(); x.numel()];
            for plane in 0..b * c {
                let g = &grad[plane * h2 * w2..(plane + 1) * h2 * w2];
                let d = &mut dx[plane * h * w..(plane + 1) * h * w];
                for y in 0..h2 {
                    for xx in 0..w2 {
                        let idx = (y / 2) * w + xx / 2;
                        d[idx] = d[idx] + g[y * w2 + xx];
                    }
                }
            }
            sink.add(x, dx);
        }
    }
}

/// Scaled dot-product attention over `[B,T,D]` operands:
/// `softmax(q k^T / sqrt(D)) v`. Rows of the attention matrix sum to one.
pub fn attention<S: Scalar>(q: &Tensor<S>, k: &Tensor<S>, v: &Tensor<S>) -> Result<Tensor<S>> {
    multi_head_attention(q, k, v, 1)
}

/// Fused multi-head variant: feature widths split into `heads` independent
/// attention slices; scaling uses the per-head width.
pub fn multi_head_attention<S: Scalar>(
    q: &Tensor<S>,
    k: &Tensor<S>,
    v: &Tensor<S>,
    heads: usize,
) -> Result<Tensor<S>> {
    for (name, t) in [("q", q), ("k", k), ("v", v)] {
        if t.shape().len() != 3 {
            return Err(TensorError::Dimension {
                op: "attention",
                msg: format!("{name} must be [B,T,D], got {:?}", t.shape()),
            });
        }
    }
    let (b, tq, c) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let tk = k.shape()[1];
    // q attends over k/v's sequence axis, so q may have its own length but
    // batch and feature widths must line up and k/v share a length.
    if k.shape()[0] != b || k.shape()[2] != c {
        return Err(TensorError::ShapeMismatch {
            op: "attention",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    if v.shape() != [b, tk, c] {
        return Err(TensorError::ShapeMismatch {
            op: "attention",
            lhs: k.shape().to_vec(),
            rhs: v.shape().to_vec(),
        });
    }
    if heads == 0 || c % heads != 0 {
        return Err(TensorError::Dimension {
            op: "attention",
            msg: format!("feature width {c} not divisible by {heads} heads"),
        });
    }
    let (out, weights) = attention_forward(
        q.data(),
        k.data(),
        v.data(),
        b,
        tq,
        tk,
        c,
        heads,
    );
    Ok(Tensor::from_op(
        vec![b, tq, c],
        out,
        Op::Attention {
            q: q.clone(),
            k: k.clone(),
            v: v.clone(),
            heads,
            weights,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::check_gradients;
    use super::super::{Tensor, TensorError};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_of_sum_is_all_ones() {
        let x = Tensor::<f64>::param(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        x.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn backward_of_sum_of_squares_is_two_x() {
        let x = Tensor::<f64>::param(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        x.mul(&x).unwrap().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn backward_twice_without_reset_doubles_grads() {
        let x = Tensor::<f64>::param(&[2], vec![3.0, 4.0]).unwrap();
        let loss = x.sum_all();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_roots() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.mul_scalar(2.0);
        assert!(matches!(
            y.backward(),
            Err(TensorError::NonScalarRoot { .. })
        ));
    }

    #[test]
    fn shared_subexpression_accumulates_from_both_uses() {
        // loss = sum(x * x) computed via two separate consumers of x.
        let x = Tensor::<f64>::param(&[2], vec![2.0, 3.0]).unwrap();
        let a = x.mul_scalar(1.0);
        let b = x.mul_scalar(2.0);
        a.add(&b).unwrap().sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn composite_conv_norm_attention_chain_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::randn(&[2, 2, 4, 4], &mut rng).with_requires_grad(true);
        let w = Tensor::<f64>::randn(&[4, 2, 3, 3], &mut rng).with_requires_grad(true);
        let gamma = Tensor::<f64>::randn(&[4], &mut rng).with_requires_grad(true);
        let beta = Tensor::<f64>::randn(&[4], &mut rng).with_requires_grad(true);
        let report = check_gradients(
            &|l: &[Tensor<f64>]| {
                let h = l[0].conv2d(&l[1], 1, 1)?;
                let h = h.group_norm(2, &l[2], &l[3])?;
                // [B,C,H,W] -> [B, HW, C] token sequence for attention.
                let tokens = h.permute(&[0, 2, 3, 1])?.reshape(&[2, 16, 4])?;
                let out = super::attention(&tokens, &tokens, &tokens)?;
                Ok(out.mul(&out)?.mean_all())
            },
            &[x, w, gamma, beta],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "rel {}", report.max_rel_err);
    }

    #[test]
    fn frozen_leaves_do_not_receive_gradients() {
        let a = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        a.mul(&b).unwrap().sum_all().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![3.0, 4.0]);
        assert!(b.grad().is_none());
    }
}
