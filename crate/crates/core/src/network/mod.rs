//! Residual super-resolution network.
//!
//! The coarse bands are interpolated onto the fine grid and stacked with the
//! fine bands. A first convolution with ReLU lifts the stack to `f`
//! features, `d` residual blocks follow, and a last convolution maps back to
//! the output bands. The interpolated target bands are added to the result,
//! so the convolutional part only predicts a correction.

mod conv;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use conv::{conv2d_same, relu, resblock_forward, ConvParams, KERNEL};
pub(crate) use conv::{conv_backward, conv_forward, relu_backward_in_place, relu_in_place, Frame};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::resample::{upsample_plane, Upsampling};
use crate::tensor::Tensor;

/// Fine band count (B2, B3, B4, B8).
pub const FINE_BANDS: usize = 4;

/// Which of the two networks a configuration describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// 20 m bands to the 10 m grid: inputs A + B, outputs B.
    T2x,
    /// 60 m bands to the 10 m grid: inputs A + B + C, outputs C.
    S6x,
}

impl Variant {
    pub fn input_channels(self) -> usize {
        match self {
            Variant::T2x => 10,
            Variant::S6x => 12,
        }
    }
    pub fn output_channels(self) -> usize {
        match self {
            Variant::T2x => 6,
            Variant::S6x => 2,
        }
    }
    pub fn scale(self) -> usize {
        match self {
            Variant::T2x => 2,
            Variant::S6x => 6,
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkConfig {
    /// Number of residual blocks.
    pub depth: usize,
    /// Feature width of every hidden layer.
    pub features: usize,
    pub input_channels: usize,
    pub output_channels: usize,
    /// Residual scaling applied inside every block.
    pub lambda: f64,
    pub scale: usize,
    pub upsampling: Upsampling,
}

impl NetworkConfig {
    pub fn new(variant: Variant, depth: usize, features: usize) -> Self {
        NetworkConfig {
            depth,
            features,
            input_channels: variant.input_channels(),
            output_channels: variant.output_channels(),
            lambda: 0.1,
            scale: variant.scale(),
            upsampling: Upsampling::Bilinear,
        }
    }

    pub fn t2x(depth: usize, features: usize) -> Self {
        Self::new(Variant::T2x, depth, features)
    }

    pub fn s6x(depth: usize, features: usize) -> Self {
        Self::new(Variant::S6x, depth, features)
    }

    /// The 6-block, 128-feature configuration.
    pub fn deep(variant: Variant) -> Self {
        Self::new(variant, 6, 128)
    }

    /// The 32-block, 256-feature configuration.
    pub fn very_deep(variant: Variant) -> Self {
        Self::new(variant, 32, 256)
    }

    pub fn variant(&self) -> Result<Variant> {
        match (self.input_channels, self.output_channels, self.scale) {
            (10, 6, 2) => Ok(Variant::T2x),
            (12, 2, 6) => Ok(Variant::S6x),
            (i, o, s) => Err(Error::InvalidConfig(format!("unsupported channel layout: {i} in, {o} out, scale {s}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.variant()?;
        if self.depth < 1 || self.features < 1 {
            return Err(Error::InvalidConfig(format!(
                "depth and features must be positive, got d={} f={}",
                self.depth, self.features
            )));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::InvalidConfig(format!("lambda must lie in (0, 1], got {}", self.lambda)));
        }
        Ok(())
    }

    /// Convolution layers: first, two per block, last.
    pub fn layer_count(&self) -> usize {
        2 * self.depth + 2
    }

    /// Channel index where the interpolated target bands start in the
    /// stacked network input; they are its last `output_channels` channels.
    pub fn skip_channel(&self) -> usize {
        self.input_channels - self.output_channels
    }

    /// `(f_out, f_in)` of every convolution in declaration order.
    pub fn conv_shapes(&self) -> Vec<(usize, usize)> {
        let f = self.features;
        let mut shapes = vec![(f, self.input_channels)];
        shapes.extend(core::iter::repeat_n((f, f), 2 * self.depth));
        shapes.push((self.output_channels, f));
        shapes
    }
}

/// Exact number of trainable parameters (weights and biases).
pub fn param_count(config: &NetworkConfig) -> usize {
    let k2 = KERNEL * KERNEL;
    let (f, d) = (config.features, config.depth);
    (k2 * config.input_channels * f + f)
        + d * 2 * (k2 * f * f + f)
        + (k2 * f * config.output_channels + config.output_channels)
}

/// Learned parameters in declaration order: first convolution, two per
/// residual block, last convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights<T> {
    pub first: ConvParams<T>,
    pub blocks: Vec<(ConvParams<T>, ConvParams<T>)>,
    pub last: ConvParams<T>,
}

impl<T: Real> NetworkWeights<T> {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let f = config.features;
        NetworkWeights {
            first: ConvParams::zeros(f, config.input_channels),
            blocks: (0..config.depth).map(|_| (ConvParams::zeros(f, f), ConvParams::zeros(f, f))).collect(),
            last: ConvParams::zeros(config.output_channels, f),
        }
    }

    /// Builds weights from convolutions listed in declaration order.
    pub fn from_convs(config: &NetworkConfig, convs: Vec<ConvParams<T>>) -> Result<Self> {
        let shapes = config.conv_shapes();
        if convs.len() != shapes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} convolutions for a {}-layer network",
                convs.len(),
                shapes.len()
            )));
        }
        let mut it = convs.into_iter();
        let first = it.next().expect("length checked");
        let mut blocks = Vec::with_capacity(config.depth);
        for _ in 0..config.depth {
            let a = it.next().expect("length checked");
            let b = it.next().expect("length checked");
            blocks.push((a, b));
        }
        let last = it.next().expect("length checked");
        let w = NetworkWeights { first, blocks, last };
        w.check(config)?;
        Ok(w)
    }

    pub fn convs(&self) -> impl Iterator<Item = &ConvParams<T>> {
        core::iter::once(&self.first)
            .chain(self.blocks.iter().flat_map(|(a, b)| [a, b]))
            .chain(core::iter::once(&self.last))
    }

    pub fn convs_mut(&mut self) -> impl Iterator<Item = &mut ConvParams<T>> {
        core::iter::once(&mut self.first)
            .chain(self.blocks.iter_mut().flat_map(|(a, b)| [a, b]))
            .chain(core::iter::once(&mut self.last))
    }

    /// Every parameter buffer in declaration order (kernel, then bias, per layer).
    pub fn buffers(&self) -> impl Iterator<Item = &[T]> {
        self.convs().flat_map(|c| [c.kernel(), c.bias()])
    }

    pub fn buffers_mut(&mut self) -> impl Iterator<Item = &mut [T]> {
        self.convs_mut().flat_map(|c| {
            let (kernel, bias) = c.buffers_mut();
            [kernel, bias]
        })
    }

    pub fn param_count(&self) -> usize {
        self.buffers().map(|b| b.len()).sum()
    }

    /// Errors unless every layer has the shape `config` prescribes.
    pub fn check(&self, config: &NetworkConfig) -> Result<()> {
        let shapes = config.conv_shapes();
        let actual: Vec<(usize, usize)> = self.convs().map(|c| (c.f_out(), c.f_in())).collect();
        if shapes != actual {
            return Err(Error::ShapeMismatch(format!(
                "weights have layer shapes {actual:?}, configuration needs {shapes:?}"
            )));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> NetworkWeights<U> {
        NetworkWeights {
            first: self.first.cast(),
            blocks: self.blocks.iter().map(|(a, b)| (a.cast(), b.cast())).collect(),
            last: self.last.cast(),
        }
    }

    pub fn fill_zero(&mut self) {
        self.buffers_mut().for_each(|b| b.fill(T::zero()));
    }

    /// Adds `other` elementwise.
    pub fn add_assign(&mut self, other: &NetworkWeights<T>) {
        for (dst, src) in self.buffers_mut().zip(other.buffers()) {
            dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
        }
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over the parameter bits.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.buffers().flatten() {
            h ^= v.as_f64().to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// He-uniform initialization: kernels uniform in `+-sqrt(6 / fan_in)` with
/// `fan_in = f_in * 9`, zero biases. Deterministic in `seed`.
pub fn init_he_uniform(config: &NetworkConfig, seed: u64) -> NetworkWeights<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = NetworkWeights::<f32>::zeros(config);
    for conv in weights.convs_mut() {
        let bound = he_uniform_bound(conv.f_in()) as f32;
        for w in conv.kernel_mut() {
            *w = rng.gen_range(-bound..bound);
        }
    }
    weights
}

/// Initial weights for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitScheme {
    /// He-uniform for every layer.
    #[default]
    HeUniform,
    /// He-uniform except an all-zero output layer, so the untrained network
    /// reproduces the interpolated target bands exactly.
    ZeroLast,
}

pub fn init_weights(config: &NetworkConfig, seed: u64, scheme: InitScheme) -> NetworkWeights<f32> {
    let mut weights = init_he_uniform(config, seed);
    if scheme == InitScheme::ZeroLast {
        let (k, b) = weights.last.buffers_mut();
        k.fill(0.0);
        b.fill(0.0);
    }
    weights
}

pub fn he_uniform_bound(f_in: usize) -> f64 {
    Float::sqrt(6.0 / (f_in * KERNEL * KERNEL) as f64)
}

fn expect_shape<T: Real>(name: &str, t: &Tensor<T>, h: usize, w: usize, c: usize) -> Result<()> {
    if t.shape() != (h, w, c) {
        return Err(Error::ShapeMismatch(format!("{name} is {:?}, expected {:?}", t.shape(), (h, w, c))));
    }
    Ok(())
}

fn upsample_tensor<T: Real>(t: &Tensor<T>, s: usize, kernel: Upsampling) -> Tensor<T> {
    let (h, w, c) = t.shape();
    let planes: Vec<Vec<T>> = (0..c).map(|ch| upsample_plane(&t.plane(ch), w, h, s, kernel)).collect();
    Tensor::from_planes(h * s, w * s, &planes).expect("upsampled geometry")
}

/// Interpolates the coarse inputs onto the fine grid and stacks
/// `[y_a, up(y_b), up(y_c)]`. All inputs are expected in network units
/// (already divided by the value scale).
pub fn prepare_input<T: Real>(
    config: &NetworkConfig,
    y_a: &Tensor<T>,
    y_b: &Tensor<T>,
    y_c: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let variant = config.variant()?;
    let (h, w) = (y_a.height(), y_a.width());
    expect_shape("y_a", y_a, h, w, FINE_BANDS)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::ShapeMismatch(format!("fine input {h}x{w} is not divisible by 2")));
    }
    expect_shape("y_b", y_b, h / 2, w / 2, 6)?;
    let up_b = upsample_tensor(y_b, 2, config.upsampling);
    match (variant, y_c) {
        (Variant::T2x, None) => Tensor::concat_channels(&[y_a, &up_b]),
        (Variant::T2x, Some(_)) => Err(Error::ShapeMismatch("the 2x network takes no 60 m input".into())),
        (Variant::S6x, None) => Err(Error::MissingInput("y_c")),
        (Variant::S6x, Some(y_c)) => {
            if h % 6 != 0 || w % 6 != 0 {
                return Err(Error::ShapeMismatch(format!("fine input {h}x{w} is not divisible by 6")));
            }
            expect_shape("y_c", y_c, h / 6, w / 6, 2)?;
            let up_c = upsample_tensor(y_c, 6, config.upsampling);
            Tensor::concat_channels(&[y_a, &up_b, &up_c])
        }
    }
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    fingerprint: u64,
    input: Frame<T>,
    /// `acts[0]` is the first layer's output, `acts[i + 1]` block `i`'s output.
    acts: Vec<Frame<T>>,
    /// Post-ReLU hidden activation of each block.
    hidden: Vec<Frame<T>>,
}

fn run<T: Real>(
    config: &NetworkConfig,
    weights: &NetworkWeights<T>,
    input: Frame<T>,
    keep: bool,
) -> (Frame<T>, Option<ForwardCache<T>>) {
    let (h, w, f) = (input.height, input.width, config.features);
    let lambda = T::from_f64(config.lambda);
    let mut x = Frame::zeros(h, w, f);
    conv_forward(&input, &weights.first, &mut x);
    relu_in_place(&mut x);
    let mut acts = Vec::new();
    let mut hiddens = Vec::new();
    let mut hidden = Frame::zeros(h, w, f);
    let mut next = Frame::zeros(h, w, f);
    for (p1, p2) in &weights.blocks {
        conv_forward(&x, p1, &mut hidden);
        relu_in_place(&mut hidden);
        conv_forward(&hidden, p2, &mut next);
        for (o, &z) in next.data.iter_mut().zip(&x.data) {
            *o = lambda * *o + z;
        }
        if keep {
            hiddens.push(hidden.clone());
            acts.push(core::mem::replace(&mut x, next.clone()));
        } else {
            core::mem::swap(&mut x, &mut next);
        }
    }
    let mut out = Frame::zeros(h, w, config.output_channels);
    conv_forward(&x, &weights.last, &mut out);
    let cache = keep.then(|| {
        acts.push(x);
        ForwardCache { fingerprint: weights.fingerprint(), input, acts, hidden: hiddens }
    });
    (out, cache)
}

fn check_prepared<T: Real>(config: &NetworkConfig, weights: &NetworkWeights<T>, x0: &Tensor<T>) -> Result<()> {
    config.validate()?;
    weights.check(config)?;
    if x0.channels() != config.input_channels {
        return Err(Error::ShapeMismatch(format!(
            "stacked input has {} channels, network expects {}",
            x0.channels(),
            config.input_channels
        )));
    }
    Ok(())
}

fn add_skip<T: Real>(config: &NetworkConfig, x0: &Tensor<T>, correction: &mut Tensor<T>) {
    let (skip, cin, cout) = (config.skip_channel(), config.input_channels, config.output_channels);
    for (out_px, in_px) in correction.data_mut().chunks_exact_mut(cout).zip(x0.data().chunks_exact(cin)) {
        for (o, &s) in out_px.iter_mut().zip(&in_px[skip..]) {
            *o += s;
        }
    }
}

/// Convolutional part only: the additive correction to the interpolated
/// target bands, for a stacked input from [`prepare_input`].
pub fn forward_correction<T: Real>(
    config: &NetworkConfig,
    weights: &NetworkWeights<T>,
    x0: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_prepared(config, weights, x0)?;
    Ok(run(config, weights, Frame::from_tensor(x0), false).0.to_tensor())
}

/// Full prediction (correction plus interpolated target bands) for a
/// stacked input.
pub fn forward_prepared<T: Real>(
    config: &NetworkConfig,
    weights: &NetworkWeights<T>,
    x0: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut out = forward_correction(config, weights, x0)?;
    add_skip(config, x0, &mut out);
    Ok(out)
}

/// Like [`forward_prepared`] but keeps the activations for [`backward`].
pub fn forward_with_cache<T: Real>(
    config: &NetworkConfig,
    weights: &NetworkWeights<T>,
    x0: &Tensor<T>,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    check_prepared(config, weights, x0)?;
    let (out, cache) = run(config, weights, Frame::from_tensor(x0), true);
    let mut out = out.to_tensor();
    add_skip(config, x0, &mut out);
    Ok((out, cache.expect("cache requested")))
}

/// Prediction for raw network inputs: `W x H x 4`, `W/2 x H/2 x 6` and, for
/// the 6x network, `W/6 x H/6 x 2`. Returns `W x H x output_channels`.
pub fn forward<T: Real>(
    config: &NetworkConfig,
    weights: &NetworkWeights<T>,
    y_a: &Tensor<T>,
    y_b: &Tensor<T>,
    y_c: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let x0 = prepare_input(config, y_a, y_b, y_c)?;
    forward_prepared(config, weights, &x0)
}

/// Reverse-mode pass. Adds the loss gradient with respect to every
/// parameter into `grads` and returns the gradient with respect to the
/// stacked input when `want_input_grad` is set. The interpolated target
/// channels receive both the convolutional path and the skip connection.
pub fn backward_into<T: Real>(
    config: &NetworkConfig,
    weights: &NetworkWeights<T>,
    cache: &ForwardCache<T>,
    grad_out: &Tensor<T>,
    grads: &mut NetworkWeights<T>,
    want_input_grad: bool,
) -> Result<Option<Tensor<T>>> {
    weights.check(config)?;
    grads.check(config)?;
    let (h, w) = (cache.input.height, cache.input.width);
    if cache.acts.len() != config.depth + 1 || cache.fingerprint != weights.fingerprint() {
        return Err(Error::StaleCache);
    }
    expect_shape("output gradient", grad_out, h, w, config.output_channels)?;
    let f = config.features;
    let lambda = T::from_f64(config.lambda);

    let g_out = Frame::from_tensor(grad_out);
    let mut g = Frame::zeros(h, w, f);
    conv_backward(&cache.acts[config.depth], &weights.last, &g_out, &mut grads.last, Some(&mut g));

    let mut g_scaled = Frame::zeros(h, w, f);
    let mut g_hidden = Frame::zeros(h, w, f);
    let mut g_in = Frame::zeros(h, w, f);
    for i in (0..config.depth).rev() {
        let (p1, p2) = &weights.blocks[i];
        let (d1, d2) = &mut grads.blocks[i];
        for (s, &v) in g_scaled.data.iter_mut().zip(&g.data) {
            *s = lambda * v;
        }
        g_hidden.fill_zero();
        conv_backward(&cache.hidden[i], p2, &g_scaled, d2, Some(&mut g_hidden));
        relu_backward_in_place(&cache.hidden[i], &mut g_hidden);
        g_in.fill_zero();
        conv_backward(&cache.acts[i], p1, &g_hidden, d1, Some(&mut g_in));
        for (a, &v) in g_in.data.iter_mut().zip(&g.data) {
            *a += v;
        }
        core::mem::swap(&mut g, &mut g_in);
    }
    relu_backward_in_place(&cache.acts[0], &mut g);
    if !want_input_grad {
        conv_backward(&cache.input, &weights.first, &g, &mut grads.first, None);
        return Ok(None);
    }
    let mut g_x0 = Frame::zeros(h, w, config.input_channels);
    conv_backward(&cache.input, &weights.first, &g, &mut grads.first, Some(&mut g_x0));
    let mut g_x0 = g_x0.to_tensor();
    let (skip, cin, cout) = (config.skip_channel(), config.input_channels, config.output_channels);
    for (gx, go) in g_x0.data_mut().chunks_exact_mut(cin).zip(grad_out.data().chunks_exact(cout)) {
        for (a, &b) in gx[skip..].iter_mut().zip(go) {
            *a += b;
        }
    }
    Ok(Some(g_x0))
}

/// Gradients of the loss with respect to all parameters and the stacked input.
pub fn backward<T: Real>(
    config: &NetworkConfig,
    weights: &NetworkWeights<T>,
    cache: &ForwardCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(NetworkWeights<T>, Tensor<T>)> {
    let mut grads = NetworkWeights::zeros(config);
    let g_x0 = backward_into(config, weights, cache, grad_out, &mut grads, true)?;
    Ok((grads, g_x0.expect("input gradient requested")))
}
