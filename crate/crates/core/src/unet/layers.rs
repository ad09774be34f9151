//! Building blocks of the denoiser: linear/conv/norm layers, multi-head
//! attention, residual blocks, and the factorized spatial and temporal
//! transformers.

use rand::Rng;

use crate::tensor::{concat, multi_head_attention, normal_pair, Scalar, Tensor};

use super::{Result, UnetError};

fn normal_vec<S: Scalar, R: Rng>(n: usize, std: f64, rng: &mut R) -> Vec<S> {
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let (a, b) = normal_pair(rng);
        data.push(S::from_f64(a * std));
        if data.len() < n {
            data.push(S::from_f64(b * std));
        }
    }
    data
}

pub(crate) type ParamsMut<'a, S> = Vec<(String, &'a mut Tensor<S>)>;
pub(crate) type ParamsRef<'a, S> = Vec<(String, &'a Tensor<S>)>;

/// Fully connected layer; weight is `[in, out]` so activations right-multiply.
pub struct Linear<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn new<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let std = (1.0 / fan_in as f64).sqrt();
        Linear {
            weight: Tensor::param(&[fan_in, fan_out], normal_vec(fan_in * fan_out, std, rng))
                .unwrap(),
            bias: Tensor::param(&[fan_out], vec![S::zero(); fan_out]).unwrap(),
        }
    }

    pub fn new_zero(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Tensor::param(&[fan_in, fan_out], vec![S::zero(); fan_in * fan_out]).unwrap(),
            bias: Tensor::param(&[fan_out], vec![S::zero(); fan_out]).unwrap(),
        }
    }

    /// Identity on the first `keep` input channels, zero on the rest.
    /// Requires `fan_out == keep`.
    pub fn new_identity_projection(fan_in: usize, keep: usize) -> Self {
        let mut w = vec![S::zero(); fan_in * keep];
        for i in 0..keep {
            w[i * keep + i] = S::one();
        }
        Linear {
            weight: Tensor::param(&[fan_in, keep], w).unwrap(),
            bias: Tensor::param(&[keep], vec![S::zero(); keep]).unwrap(),
        }
    }

    /// Affine map over the last axis of any-rank input.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(x.linear(&self.weight, &self.bias)?)
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, S>) {
        // Split borrows field by field.
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }

    pub(crate) fn params_ref<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, S>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }
}

pub struct Conv2dLayer<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    pub stride: usize,
    pub padding: usize,
}

impl<S: Scalar> Conv2dLayer<S> {
    pub fn new<R: Rng>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        Conv2dLayer {
            weight: Tensor::param(
                &[c_out, c_in, kernel, kernel],
                normal_vec(c_out * fan_in, std, rng),
            )
            .unwrap(),
            bias: Tensor::param(&[c_out], vec![S::zero(); c_out]).unwrap(),
            stride,
            padding,
        }
    }

    pub fn new_zero(c_in: usize, c_out: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv2dLayer {
            weight: Tensor::param(
                &[c_out, c_in, kernel, kernel],
                vec![S::zero(); c_out * c_in * kernel * kernel],
            )
            .unwrap(),
            bias: Tensor::param(&[c_out], vec![S::zero(); c_out]).unwrap(),
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(x.conv2d(&self.weight, self.stride, self.padding)?
            .add_channel_bias(&self.bias)?)
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, S>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }

    pub(crate) fn params_ref<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, S>) {
        out.push((format!("{prefix}.weight"), &self.weight));
        out.push((format!("{prefix}.bias"), &self.bias));
    }
}

/// Group normalization with learned per-channel affine.
pub struct GroupNormLayer<S: Scalar> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub groups: usize,
}

impl<S: Scalar> GroupNormLayer<S> {
    pub fn new(channels: usize, groups: usize) -> Self {
        GroupNormLayer {
            gamma: Tensor::param(&[channels], vec![S::one(); channels]).unwrap(),
            beta: Tensor::param(&[channels], vec![S::zero(); channels]).unwrap(),
            groups,
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(x.group_norm(self.groups, &self.gamma, &self.beta)?)
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, S>) {
        out.push((format!("{prefix}.gamma"), &mut self.gamma));
        out.push((format!("{prefix}.beta"), &mut self.beta));
    }

    pub(crate) fn params_ref<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, S>) {
        out.push((format!("{prefix}.gamma"), &self.gamma));
        out.push((format!("{prefix}.beta"), &self.beta));
    }
}

pub struct LayerNormLayer<S: Scalar> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
}

impl<S: Scalar> LayerNormLayer<S> {
    pub fn new(dim: usize) -> Self {
        LayerNormLayer {
            gamma: Tensor::param(&[dim], vec![S::one(); dim]).unwrap(),
            beta: Tensor::param(&[dim], vec![S::zero(); dim]).unwrap(),
        }
    }

    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(x.layer_norm(&self.gamma, &self.beta)?)
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, S>) {
        out.push((format!("{prefix}.gamma"), &mut self.gamma));
        out.push((format!("{prefix}.beta"), &mut self.beta));
    }

    pub(crate) fn params_ref<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, S>) {
        out.push((format!("{prefix}.gamma"), &self.gamma));
        out.push((format!("{prefix}.beta"), &self.beta));
    }
}

/// Multi-head scaled dot-product attention. Query features have width `dim`;
/// key/value inputs have width `ctx_dim` (equal to `dim` for self-attention).
/// The output projection starts at zero so a fresh block is an identity
/// residual.
pub struct MultiHeadAttention<S: Scalar> {
    pub q: Linear<S>,
    pub k: Linear<S>,
    pub v: Linear<S>,
    pub out: Linear<S>,
    pub heads: usize,
}

impl<S: Scalar> MultiHeadAttention<S> {
    pub fn new<R: Rng>(dim: usize, ctx_dim: usize, heads: usize, rng: &mut R) -> Self {
        MultiHeadAttention {
            q: Linear::new(dim, dim, rng),
            k: Linear::new(ctx_dim, dim, rng),
            v: Linear::new(ctx_dim, dim, rng),
            out: Linear::new_zero(dim, dim),
            heads,
        }
    }

    /// `x_q: [B,Tq,dim]`, `x_kv: [B,Tk,ctx_dim]` -> `[B,Tq,dim]`.
    pub fn forward(&self, x_q: &Tensor<S>, x_kv: &Tensor<S>) -> Result<Tensor<S>> {
        let q = self.q.forward(x_q)?;
        let k = self.k.forward(x_kv)?;
        let v = self.v.forward(x_kv)?;
        let att = multi_head_attention(&q, &k, &v, self.heads)?;
        self.out.forward(&att)
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, S>) {
        self.q.params_mut(&format!("{prefix}.q"), out);
        self.k.params_mut(&format!("{prefix}.k"), out);
        self.v.params_mut(&format!("{prefix}.v"), out);
        self.out.params_mut(&format!("{prefix}.out"), out);
    }

    pub(crate) fn params_ref<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, S>) {
        self.q.params_ref(&format!("{prefix}.q"), out);
        self.k.params_ref(&format!("{prefix}.k"), out);
        self.v.params_ref(&format!("{prefix}.v"), out);
        self.out.params_ref(&format!("{prefix}.out"), out);
    }
}

/// Convolutional residual block with the timestep embedding added between
/// the two convolutions.
pub struct ResBlock<S: Scalar> {
    pub norm1: GroupNormLayer<S>,
    pub conv1: Conv2dLayer<S>,
    pub time_proj: Linear<S>,
    pub norm2: GroupNormLayer<S>,
    pub conv2: Conv2dLayer<S>,
    pub skip: Option<Conv2dLayer<S>>,
}

impl<S: Scalar> ResBlock<S> {
    pub fn new<R: Rng>(
        c_in: usize,
        c_out: usize,
        time_dim: usize,
        groups: usize,
        rng: &mut R,
    ) -> Self {
        ResBlock {
            norm1: GroupNormLayer::new(c_in, groups),
            conv1: Conv2dLayer::new(c_in, c_out, 3, 1, 1, rng),
            time_proj: Linear::new(time_dim, c_out, rng),
            norm2: GroupNormLayer::new(c_out, groups),
            conv2: Conv2dLayer::new(c_out, c_out, 3, 1, 1, rng),
            skip: (c_in != c_out).then(|| Conv2dLayer::new(c_in, c_out, 1, 1, 0, rng)),
        }
    }

    /// `x: [L,Cin,H,W]`, `temb: [L,time_dim]`.
    pub fn forward(&self, x: &Tensor<S>, temb: &Tensor<S>) -> Result<Tensor<S>> {
        let (h_ext, w_ext) = (x.shape()[2], x.shape()[3]);
        let mut h = self.conv1.forward(&self.norm1.forward(x)?.silu())?;
        let t = self
            .time_proj
            .forward(&temb.silu())?
            .broadcast_trailing(&[h_ext, w_ext]);
        h = h.add(&t)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu())?;
        let shortcut = match &self.skip {
            Some(conv) => conv.forward(x)?,
            None => x.clone(),
        };
        Ok(h.add(&shortcut)?)
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, S>) {
        self.norm1.params_mut(&format!("{prefix}.norm1"), out);
        self.conv1.params_mut(&format!("{prefix}.conv1"), out);
        self.time_proj.params_mut(&format!("{prefix}.time_proj"), out);
        self.norm2.params_mut(&format!("{prefix}.norm2"), out);
        self.conv2.params_mut(&format!("{prefix}.conv2"), out);
        if let Some(skip) = &mut self.skip {
            skip.params_mut(&format!("{prefix}.skip"), out);
        }
    }

    pub(crate) fn params_ref<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, S>) {
        self.norm1.params_ref(&format!("{prefix}.norm1"), out);
        self.conv1.params_ref(&format!("{prefix}.conv1"), out);
        self.time_proj.params_ref(&format!("{prefix}.time_proj"), out);
        self.norm2.params_ref(&format!("{prefix}.norm2"), out);
        self.conv2.params_ref(&format!("{prefix}.conv2"), out);
        if let Some(skip) = &self.skip {
            skip.params_ref(&format!("{prefix}.skip"), out);
        }
    }
}

/// Concatenate the pose rows onto the channel axis of `y [HW,L,C]` and
/// project back to `C`. The projection starts as identity-on-C with a zero
/// pose block, so a fresh block passes `y` through untouched.
pub fn cmcm_project<S: Scalar>(
    y: &Tensor<S>,
    rt: &Tensor<S>,
    proj: &Linear<S>,
) -> Result<Tensor<S>> {
    let (hw, l, _c) = (y.shape()[0], y.shape()[1], y.shape()[2]);
    if rt.shape() != [l, 12] {
        return Err(UnetError::ShapeMismatch {
            what: "pose rows",
            expected: vec![l, 12],
            got: rt.shape().to_vec(),
        });
    }
    let rt_b = rt.broadcast_leading(&[hw]);
    let cat = concat(&[y.clone(), rt_b], 2)?;
    proj.forward(&cat)
}

/// The spec-facing view of [`cmcm_project`]: takes `y_t` in `[H,W,L,C]`
/// layout, broadcasts `rt` over the spatial grid, and returns the projected
/// activations in the same layout.
pub fn cmcm_inject<S: Scalar>(
    y_t: &Tensor<S>,
    rt: &Tensor<S>,
    proj: &Linear<S>,
) -> Result<Tensor<S>> {
    if y_t.shape().len() != 4 {
        return Err(UnetError::ShapeMismatch {
            what: "temporal activations",
            expected: vec![0, 0, 0, 0],
            got: y_t.shape().to_vec(),
        });
    }
    let (h, w, l, c) = (
        y_t.shape()[0],
        y_t.shape()[1],
        y_t.shape()[2],
        y_t.shape()[3],
    );
    let flat = y_t.reshape(&[h * w, l, c])?;
    Ok(cmcm_project(&flat, rt, proj)?.reshape(&[h, w, l, c])?)
}

/// Temporal transformer: two self-attention modules over the frame axis per
/// spatial location, with the camera-pose projection between them.
pub struct TemporalTransformer<S: Scalar> {
    pub norm1: LayerNormLayer<S>,
    pub attn1: MultiHeadAttention<S>,
    pub cmcm_proj: Option<Linear<S>>,
    pub norm2: LayerNormLayer<S>,
    pub attn2: MultiHeadAttention<S>,
}

impl<S: Scalar> TemporalTransformer<S> {
    pub fn new<R: Rng>(dim: usize, heads: usize, cmcm: bool, rng: &mut R) -> Self {
        TemporalTransformer {
            norm1: LayerNormLayer::new(dim),
            attn1: MultiHeadAttention::new(dim, dim, heads, rng),
            cmcm_proj: cmcm.then(|| Linear::new_identity_projection(dim + 12, dim)),
            norm2: LayerNormLayer::new(dim),
            attn2: MultiHeadAttention::new(dim, dim, heads, rng),
        }
    }

    /// `x: [L,C,H,W]`; `rt: [L,12]` (required when the block has a pose
    /// projection).
    pub fn forward(&self, x: &Tensor<S>, rt: Option<&Tensor<S>>) -> Result<Tensor<S>> {
        let (l, c, h, w) = (
            x.shape()[0],
            x.shape()[1],
            x.shape()[2],
            x.shape()[3],
        );
        // [L,C,H,W] -> [H,W,L,C] -> [HW,L,C]: one sequence per location.
        let y = x.permute(&[2, 3, 0, 1])?.reshape(&[h * w, l, c])?;
        let n1 = self.norm1.forward(&y)?;
        let y = y.add(&self.attn1.forward(&n1, &n1)?)?;
        let y = match (&self.cmcm_proj, rt) {
            (Some(proj), Some(rt)) => cmcm_project(&y, rt, proj)?,
            (Some(_), None) => {
                return Err(UnetError::MissingPose);
            }
            (None, _) => y,
        };
        let n2 = self.norm2.forward(&y)?;
        let y = y.add(&self.attn2.forward(&n2, &n2)?)?;
        Ok(y.reshape(&[h, w, l, c])?.permute(&[2, 3, 0, 1])?)
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, S>) {
        self.norm1.params_mut(&format!("{prefix}.norm1"), out);
        self.attn1.params_mut(&format!("{prefix}.attn1"), out);
        if let Some(p) = &mut self.cmcm_proj {
            p.params_mut(&format!("{prefix}.cmcm_proj"), out);
        }
        self.norm2.params_mut(&format!("{prefix}.norm2"), out);
        self.attn2.params_mut(&format!("{prefix}.attn2"), out);
    }

    pub(crate) fn params_ref<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, S>) {
        self.norm1.params_ref(&format!("{prefix}.norm1"), out);
        self.attn1.params_ref(&format!("{prefix}.attn1"), out);
        if let Some(p) = &self.cmcm_proj {
            p.params_ref(&format!("{prefix}.cmcm_proj"), out);
        }
        self.norm2.params_ref(&format!("{prefix}.norm2"), out);
        self.attn2.params_ref(&format!("{prefix}.attn2"), out);
    }
}

/// Spatial transformer: per-frame self-attention over the pixel grid,
/// cross-attention to the text tokens, and a small feed-forward tail.
pub struct SpatialTransformer<S: Scalar> {
    pub norm1: LayerNormLayer<S>,
    pub self_attn: MultiHeadAttention<S>,
    pub norm_cross: LayerNormLayer<S>,
    pub cross_attn: MultiHeadAttention<S>,
    pub norm_ff: LayerNormLayer<S>,
    pub ff1: Linear<S>,
    pub ff2: Linear<S>,
}

impl<S: Scalar> SpatialTransformer<S> {
    pub fn new<R: Rng>(dim: usize, ctx_dim: usize, heads: usize, rng: &mut R) -> Self {
        SpatialTransformer {
            norm1: LayerNormLayer::new(dim),
            self_attn: MultiHeadAttention::new(dim, dim, heads, rng),
            norm_cross: LayerNormLayer::new(dim),
            cross_attn: MultiHeadAttention::new(dim, ctx_dim, heads, rng),
            norm_ff: LayerNormLayer::new(dim),
            ff1: Linear::new(dim, dim * 2, rng),
            ff2: Linear::new_zero(dim * 2, dim),
        }
    }

    /// `x: [L,C,H,W]`, `text: [ntok, ctx_dim]` shared by every frame.
    pub fn forward(&self, x: &Tensor<S>, text: &Tensor<S>) -> Result<Tensor<S>> {
        let (l, c, h, w) = (
            x.shape()[0],
            x.shape()[1],
            x.shape()[2],
            x.shape()[3],
        );
        // [L,C,H,W] -> [L,HW,C]: one token per pixel per frame.
        let y = x.permute(&[0, 2, 3, 1])?.reshape(&[l, h * w, c])?;
        let n = self.norm1.forward(&y)?;
        let y = y.add(&self.self_attn.forward(&n, &n)?)?;
        let ctx = text.broadcast_leading(&[l]);
        let y = y.add(
            &self
                .cross_attn
                .forward(&self.norm_cross.forward(&y)?, &ctx)?,
        )?;
        let ff = self
            .ff2
            .forward(&self.ff1.forward(&self.norm_ff.forward(&y)?)?.silu())?;
        let y = y.add(&ff)?;
        Ok(y.reshape(&[l, h, w, c])?.permute(&[0, 3, 1, 2])?)
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, S>) {
        self.norm1.params_mut(&format!("{prefix}.norm1"), out);
        self.self_attn.params_mut(&format!("{prefix}.self_attn"), out);
        self.norm_cross.params_mut(&format!("{prefix}.norm_cross"), out);
        self.cross_attn.params_mut(&format!("{prefix}.cross_attn"), out);
        self.norm_ff.params_mut(&format!("{prefix}.norm_ff"), out);
        self.ff1.params_mut(&format!("{prefix}.ff1"), out);
        self.ff2.params_mut(&format!("{prefix}.ff2"), out);
    }

    pub(crate) fn params_ref<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, S>) {
        self.norm1.params_ref(&format!("{prefix}.norm1"), out);
        self.self_attn.params_ref(&format!("{prefix}.self_attn"), out);
        self.norm_cross.params_ref(&format!("{prefix}.norm_cross"), out);
        self.cross_attn.params_ref(&format!("{prefix}.cross_attn"), out);
        self.norm_ff.params_ref(&format!("{prefix}.norm_ff"), out);
        self.ff1.params_ref(&format!("{prefix}.ff1"), out);
        self.ff2.params_ref(&format!("{prefix}.ff2"), out);
    }
}

/// Trajectory-map encoder: convolution stacks with downsampling that produce
/// one feature map per encoder level. Every per-scale output convolution is
/// zero-initialized so a fresh adapter contributes exactly nothing.
pub struct OmcmAdapter<S: Scalar> {
    pub conv_in: Conv2dLayer<S>,
    pub refine: Vec<Conv2dLayer<S>>,
    pub down: Vec<Conv2dLayer<S>>,
    pub zero_out: Vec<Conv2dLayer<S>>,
}

impl<S: Scalar> OmcmAdapter<S> {
    /// `widths[s]` is both the internal and output channel count at scale
    /// `s`, mirroring the encoder levels.
    pub fn new<R: Rng>(widths: &[usize], rng: &mut R) -> Self {
        let mut refine = Vec::new();
        let mut down = Vec::new();
        let mut zero_out = Vec::new();
        for (s, &w) in widths.iter().enumerate() {
            if s > 0 {
                down.push(Conv2dLayer::new(widths[s - 1], w, 3, 2, 1, rng));
            }
            refine.push(Conv2dLayer::new(w, w, 3, 1, 1, rng));
            zero_out.push(Conv2dLayer::new_zero(w, w, 3, 1, 1));
        }
        OmcmAdapter {
            conv_in: Conv2dLayer::new(2, widths[0], 3, 1, 1, rng),
            refine,
            down,
            zero_out,
        }
    }

    /// `tm: [L,2,H,W]` (channels-first displacement volume) -> one feature
    /// map per scale at `(H,W), (H/2,W/2), ...`.
    pub fn features(&self, tm: &Tensor<S>) -> Result<Vec<Tensor<S>>> {
        let mut h = self.conv_in.forward(tm)?.silu();
        let mut out = Vec::with_capacity(self.refine.len());
        for s in 0..self.refine.len() {
            if s > 0 {
                h = self.down[s - 1].forward(&h)?.silu();
            }
            h = self.refine[s].forward(&h)?.silu();
            out.push(self.zero_out[s].forward(&h)?);
        }
        Ok(out)
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, S>) {
        self.conv_in.params_mut(&format!("{prefix}.conv_in"), out);
        for (s, c) in self.refine.iter_mut().enumerate() {
            c.params_mut(&format!("{prefix}.refine{s}"), out);
        }
        for (s, c) in self.down.iter_mut().enumerate() {
            c.params_mut(&format!("{prefix}.down{s}"), out);
        }
        for (s, c) in self.zero_out.iter_mut().enumerate() {
            c.params_mut(&format!("{prefix}.zero{s}"), out);
        }
    }

    pub(crate) fn params_ref<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, S>) {
        self.conv_in.params_ref(&format!("{prefix}.conv_in"), out);
        for (s, c) in self.refine.iter().enumerate() {
            c.params_ref(&format!("{prefix}.refine{s}"), out);
        }
        for (s, c) in self.down.iter().enumerate() {
            c.params_ref(&format!("{prefix}.down{s}"), out);
        }
        for (s, c) in self.zero_out.iter().enumerate() {
            c.params_ref(&format!("{prefix}.zero{s}"), out);
        }
    }
}

/// Sinusoidal embedding of a timestep index.
pub fn timestep_embedding<S: Scalar>(t: usize, dim: usize) -> Tensor<S> {
    let half = dim / 2;
    let mut data = vec![S::zero(); dim];
    for i in 0..half {
        let freq = (-(i as f64) * (10000.0f64).ln() / half as f64).exp();
        let angle = t as f64 * freq;
        data[i] = S::from_f64(angle.sin());
        data[half + i] = S::from_f64(angle.cos());
    }
    Tensor::from_vec(&[dim], data).unwrap()
}
