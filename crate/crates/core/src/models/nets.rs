//! Network definitions: mapping, synthesis, discriminator, encoder and the frozen feature extractor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::ArchConfig;
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const LRELU: f64 = 0.2;
const LRELU_GAIN: f64 = 1.386_750_490_563_073; // sqrt(2 / (1 + 0.2^2))
const RELU_GAIN: f64 = std::f64::consts::SQRT_2;
/// Scale used by the exact embed/readout debug pair; a power of two so the round trip is exact.
pub const DEBUG_EMBED_SCALE: f64 = 16.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingKind {
    Mlp,
    /// Debug mode: `w = z`.
    Identity,
}

/// Z -> W: two fully connected layers with a leaky-ReLU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct MappingNet<T> {
    pub kind: MappingKind,
    pub params: ParamStore<T>,
}

impl<T: Scalar> MappingNet<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut params = ParamStore::default();
        params.push_he("fc1.weight", &[dim, dim], LRELU_GAIN, rng);
        params.push_const("fc1.bias", &[dim], 0.0);
        params.push_he("fc2.weight", &[dim, dim], 1.0, rng);
        params.push_const("fc2.bias", &[dim], 0.0);
        Self { kind: MappingKind::Mlp, params }
    }

    pub fn identity() -> Self {
        Self { kind: MappingKind::Identity, params: ParamStore::default() }
    }

    /// `z: [N, d] -> w: [N, d]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], z: Var) -> Var {
        match self.kind {
            MappingKind::Identity => z,
            MappingKind::Mlp => {
                let h = g.linear(z, p[0], Some(p[1]));
                let h = g.leaky_relu(h, LRELU);
                g.linear(h, p[2], Some(p[3]))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisKind {
    /// Learned constant, style-modulated conv blocks, tanh output.
    Styled,
    /// Debug mode: writes `w / 16` into the first `d` pixel slots, zero elsewhere.
    DebugEmbed,
}

#[derive(Clone, Debug, PartialEq)]
struct StyleBlock {
    conv_w: usize,
    conv_b: usize,
    gamma_w: usize,
    gamma_b: usize,
    beta_w: usize,
    beta_b: usize,
    channels: usize,
}

/// Style-based synthesis: a learned 4x4 constant followed by conv blocks whose
/// normalized activations are scaled and shifted per channel by affine maps of `w`.
/// Every block after the first doubles the resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisNet<T> {
    pub kind: SynthesisKind,
    pub params: ParamStore<T>,
    blocks: Vec<StyleBlock>,
    constant: usize,
    rgb_w: usize,
    rgb_b: usize,
    image_size: usize,
    channels: usize,
}

impl<T: Scalar> SynthesisNet<T> {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Self {
        let d = arch.latent_dim;
        let widths = arch.synthesis_channels();
        let mut params = ParamStore::default();
        let constant = params.push("const", Tensor::randn(&[1, widths[0], 4, 4], 1.0, rng));
        let mut blocks = Vec::new();
        let mut cin = widths[0];
        for (i, &c) in widths.iter().enumerate() {
            let conv_w = params.push_he(&format!("block{i}.conv.weight"), &[c, cin, 3, 3], LRELU_GAIN, rng);
            let conv_b = params.push_const(&format!("block{i}.conv.bias"), &[c], 0.0);
            let gamma_w = params.push_he(&format!("block{i}.gamma.weight"), &[c, d], 0.25, rng);
            let gamma_b = params.push_const(&format!("block{i}.gamma.bias"), &[c], 1.0);
            let beta_w = params.push_he(&format!("block{i}.beta.weight"), &[c, d], 0.25, rng);
            let beta_b = params.push_const(&format!("block{i}.beta.bias"), &[c], 0.0);
            blocks.push(StyleBlock { conv_w, conv_b, gamma_w, gamma_b, beta_w, beta_b, channels: c });
            cin = c;
        }
        let rgb_w = params.push_he("to_rgb.weight", &[arch.channels, cin, 1, 1], 1.0, rng);
        let rgb_b = params.push_const("to_rgb.bias", &[arch.channels], 0.0);
        Self {
            kind: SynthesisKind::Styled,
            params,
            blocks,
            constant,
            rgb_w,
            rgb_b,
            image_size: arch.image_size,
            channels: arch.channels,
        }
    }

    pub fn debug_embed(arch: &ArchConfig) -> Self {
        let pixels = arch.channels * arch.image_size * arch.image_size;
        let d = arch.latent_dim;
        assert!(d <= pixels, "latent does not fit in the image");
        let mut e = Tensor::zeros(&[pixels, d]);
        for i in 0..d {
            e.data_mut()[i * d + i] = T::from_f64_lossy(1.0 / DEBUG_EMBED_SCALE);
        }
        let mut params = ParamStore::default();
        params.push("embed.weight", e);
        Self {
            kind: SynthesisKind::DebugEmbed,
            params,
            blocks: Vec::new(),
            constant: 0,
            rgb_w: 0,
            rgb_b: 0,
            image_size: arch.image_size,
            channels: arch.channels,
        }
    }

    /// `w: [N, d] -> image: [N, C, S, S]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], w: Var) -> Var {
        let n = g.value(w).dim(0);
        let (c, s) = (self.channels, self.image_size);
        match self.kind {
            SynthesisKind::DebugEmbed => {
                let flat = g.linear(w, p[0], None);
                g.reshape(flat, &[n, c, s, s])
            }
            SynthesisKind::Styled => {
                let mut x = g.repeat_batch(p[self.constant], n);
                for (i, b) in self.blocks.iter().enumerate() {
                    if i > 0 {
                        x = g.upsample2(x);
                    }
                    x = g.conv2d(x, p[b.conv_w], Some(p[b.conv_b]), 1, 1);
                    x = g.instance_norm(x, 1e-5);
                    let gamma = g.linear(w, p[b.gamma_w], Some(p[b.gamma_b]));
                    let beta = g.linear(w, p[b.beta_w], Some(p[b.beta_b]));
                    debug_assert_eq!(g.value(gamma).dim(1), b.channels);
                    x = g.mul_channels(x, gamma);
                    x = g.add_channels(x, beta);
                    x = g.leaky_relu(x, LRELU);
                }
                let rgb = g.conv2d(x, p[self.rgb_w], Some(p[self.rgb_b]), 1, 0);
                g.tanh(rgb)
            }
        }
    }
}

/// Conv stage: 3x3 conv + leaky-ReLU, optionally followed by 2x2 average pooling.
#[derive(Clone, Debug, PartialEq)]
struct ConvStage {
    w: usize,
    b: usize,
    pool: bool,
}

fn conv_stack<T: Scalar>(g: &mut Graph<T>, p: &[Var], stages: &[ConvStage], mut x: Var) -> Var {
    for st in stages {
        x = g.conv2d(x, p[st.w], Some(p[st.b]), 1, 1);
        x = g.leaky_relu(x, LRELU);
        if st.pool {
            x = g.avg_pool2(x);
        }
    }
    x
}

/// Real/fake critic: pooled conv stages down to 4x4, one more conv, then a linear score.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub params: ParamStore<T>,
    stages: Vec<ConvStage>,
    fc_w: usize,
    fc_b: usize,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Self {
        let mut params = ParamStore::default();
        let mut stages = Vec::new();
        let mut cin = arch.channels;
        let widths = arch.discriminator_channels();
        for (i, &c) in widths.iter().enumerate() {
            let w = params.push_he(&format!("stage{i}.weight"), &[c, cin, 3, 3], LRELU_GAIN, rng);
            let b = params.push_const(&format!("stage{i}.bias"), &[c], 0.0);
            stages.push(ConvStage { w, b, pool: i + 1 < widths.len() });
            cin = c;
        }
        let fc_w = params.push_he("fc.weight", &[1, cin * 16], 1.0, rng);
        let fc_b = params.push_const("fc.bias", &[1], 0.0);
        Self { params, stages, fc_w, fc_b }
    }

    /// `image: [N, C, S, S] -> score: [N, 1]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Var {
        let n = g.value(x).dim(0);
        let h = conv_stack(g, p, &self.stages, x);
        let len = g.value(h).len() / n;
        let h = g.reshape(h, &[n, len]);
        g.linear(h, p[self.fc_w], Some(p[self.fc_b]))
    }

    /// `d sum(D(x)) / dx`, recorded as differentiable operations of the weights so
    /// that a penalty on it can be backpropagated to the parameters. Activation
    /// slopes are taken as constants (exact almost everywhere).
    pub fn input_gradient(&self, g: &mut Graph<T>, p: &[Var], x: &Tensor<T>) -> Var {
        let n = x.dim(0);
        // forward pass on values only, keeping pre-activations for the slope masks
        let mut masks = Vec::with_capacity(self.stages.len());
        let mut h = g.constant(x.clone());
        for st in &self.stages {
            let pre = g.conv2d(h, p[st.w], Some(p[st.b]), 1, 1);
            let slope = T::from_f64_lossy(LRELU);
            masks.push(g.value(pre).map(|v| if v > T::zero() { T::one() } else { slope }));
            h = g.leaky_relu(pre, LRELU);
            if st.pool {
                h = g.avg_pool2(h);
            }
        }
        let (_, c, hh, ww) = g.value(h).dims4();
        let ones = g.constant(Tensor::full(&[n, 1], T::one()));
        let fc_t = g.transpose(p[self.fc_w]);
        let mut d = g.linear(ones, fc_t, None);
        d = g.reshape(d, &[n, c, hh, ww]);
        for (st, mask) in self.stages.iter().zip(masks).rev() {
            if st.pool {
                d = g.upsample2(d);
                d = g.scale(d, T::from_f64_lossy(0.25));
            }
            let m = g.constant(mask);
            d = g.mul(d, m);
            let wf = g.conv_weight_flip(p[st.w]);
            d = g.conv2d(d, wf, None, 1, 1);
        }
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Pooled conv blocks and a fully connected head emitting one `w`.
    Conv,
    /// Debug mode: exact inverse of [`SynthesisKind::DebugEmbed`].
    DebugReadout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T> {
    pub kind: EncoderKind,
    pub params: ParamStore<T>,
    stages: Vec<ConvStage>,
    head_w: usize,
    head_b: usize,
}

impl<T: Scalar> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Self {
        let mut params = ParamStore::default();
        let mut stages = Vec::new();
        let mut cin = arch.channels;
        let widths = arch.encoder_channels();
        let d = arch.latent_dim;
        for (i, &c) in widths.iter().enumerate() {
            let w = params.push_he(&format!("block{i}.weight"), &[c, cin, 3, 3], LRELU_GAIN, rng);
            let b = params.push_const(&format!("block{i}.bias"), &[c], 0.0);
            stages.push(ConvStage { w, b, pool: true });
            cin = c;
        }
        let side = arch.image_size >> widths.len();
        let head_w = params.push_he("head.weight", &[d, cin * side * side], 1.0, rng);
        let head_b = params.push_const("head.bias", &[d], 0.0);
        Self { kind: EncoderKind::Conv, params, stages, head_w, head_b }
    }

    pub fn debug_readout(arch: &ArchConfig) -> Self {
        let pixels = arch.channels * arch.image_size * arch.image_size;
        let d = arch.latent_dim;
        let mut r = Tensor::zeros(&[d, pixels]);
        for i in 0..d {
            r.data_mut()[i * pixels + i] = T::from_f64_lossy(DEBUG_EMBED_SCALE);
        }
        let mut params = ParamStore::default();
        params.push("readout.weight", r);
        Self { kind: EncoderKind::DebugReadout, params, stages: Vec::new(), head_w: 0, head_b: 0 }
    }

    /// `image: [N, C, S, S] -> w: [N, d]`.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Var {
        let n = g.value(x).dim(0);
        match self.kind {
            EncoderKind::DebugReadout => {
                let len = g.value(x).len() / n;
                let flat = g.reshape(x, &[n, len]);
                g.linear(flat, p[0], None)
            }
            EncoderKind::Conv => {
                let h = conv_stack(g, p, &self.stages, x);
                let len = g.value(h).len() / n;
                let h = g.reshape(h, &[n, len]);
                g.linear(h, p[self.head_w], Some(p[self.head_b]))
            }
        }
    }
}

/// Frozen random-weight conv stack: each layer is conv3x3 + ReLU, and every
/// layer after the first is preceded by 2x2 average pooling, so feature sides halve with depth.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor<T> {
    pub params: ParamStore<T>,
    layers: Vec<(usize, usize)>,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Self {
        let mut params = ParamStore::default();
        let mut layers = Vec::new();
        let mut cin = arch.channels;
        for (i, &c) in arch.feature_channels.iter().enumerate() {
            let w = params.push_he(&format!("layer{i}.weight"), &[c, cin, 3, 3], RELU_GAIN, rng);
            let b = params.push_const(&format!("layer{i}.bias"), &[c], 0.0);
            layers.push((w, b));
            cin = c;
        }
        Self { params, layers }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Feature maps of every layer, shallow to deep.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Vec<Var> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            if i > 0 {
                h = g.avg_pool2(h);
            }
            h = g.conv2d(h, p[w], Some(p[b]), 1, 1);
            h = g.relu(h);
            out.push(h);
        }
        out
    }
}
