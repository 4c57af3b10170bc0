//! 3x3 zero-padded cross-correlation, ReLU and the residual block.
//!
//! Activations live in [`Frame`]s: tensors with a one-pixel zero border.
//! Reading a frame with the padded row stride `w + 2` turns every kernel tap
//! into a constant offset, so each tap of a convolution is a single strided
//! matrix product over all pixels at once. The two extra columns per row
//! that this produces land on the border and are cleared afterwards.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::{gemm_acc, MatMut, MatRef, Real};
use crate::tensor::Tensor;

/// Spatial kernel size; fixed.
pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Weights `f_out x f_in x 3 x 3` and biases `f_out` of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    f_out: usize,
    f_in: usize,
    kernel: Vec<T>,
    bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn new(f_out: usize, f_in: usize, kernel: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if kernel.len() != f_out * f_in * TAPS || bias.len() != f_out {
            return Err(Error::ShapeMismatch(format!(
                "conv {f_in}->{f_out} needs {} weights and {f_out} biases, got {} and {}",
                f_out * f_in * TAPS,
                kernel.len(),
                bias.len()
            )));
        }
        Ok(ConvParams { f_out, f_in, kernel, bias })
    }

    pub fn zeros(f_out: usize, f_in: usize) -> Self {
        ConvParams { f_out, f_in, kernel: vec![T::zero(); f_out * f_in * TAPS], bias: vec![T::zero(); f_out] }
    }

    pub fn f_out(&self) -> usize {
        self.f_out
    }
    pub fn f_in(&self) -> usize {
        self.f_in
    }
    pub fn kernel(&self) -> &[T] {
        &self.kernel
    }
    pub fn bias(&self) -> &[T] {
        &self.bias
    }
    pub fn kernel_mut(&mut self) -> &mut [T] {
        &mut self.kernel
    }
    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    pub fn buffers_mut(&mut self) -> (&mut [T], &mut [T]) {
        (&mut self.kernel, &mut self.bias)
    }

    /// Weight for output channel `o`, input channel `i`, tap row `dy`, tap column `dx`.
    pub fn weight(&self, o: usize, i: usize, dy: usize, dx: usize) -> T {
        self.kernel[((o * self.f_in + i) * KERNEL + dy) * KERNEL + dx]
    }

    pub fn cast<U: Real>(&self) -> ConvParams<U> {
        ConvParams {
            f_out: self.f_out,
            f_in: self.f_in,
            kernel: self.kernel.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
            bias: self.bias.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// Tensor with a one pixel zero border, `(h + 2) x (w + 2) x c`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Frame<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> Frame<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Frame { height, width, channels, data: vec![T::zero(); (height + 2) * (width + 2) * channels] }
    }

    pub fn from_tensor(t: &Tensor<T>) -> Self {
        let (h, w, c) = t.shape();
        let mut f = Frame::zeros(h, w, c);
        let stride = w + 2;
        for y in 0..h {
            let dst = ((y + 1) * stride + 1) * c;
            f.data[dst..dst + w * c].copy_from_slice(&t.data()[y * w * c..(y + 1) * w * c]);
        }
        f
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let stride = w + 2;
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            let src = ((y + 1) * stride + 1) * c;
            data.extend_from_slice(&self.data[src..src + w * c]);
        }
        Tensor::from_vec(h, w, c, data).expect("frame geometry")
    }

    fn stride(&self) -> usize {
        self.width + 2
    }

    /// Padded index of interior pixel (0, 0).
    fn origin(&self) -> usize {
        self.width + 3
    }

    /// Number of padded-stride positions spanning the interior.
    fn span(&self) -> usize {
        self.height * self.stride() - 2
    }

    pub fn same_geometry(&self, other: &Frame<T>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn zero_border(&mut self) {
        let (h, c, stride) = (self.height, self.channels, self.stride());
        let zero = T::zero();
        self.data[..stride * c].fill(zero);
        self.data[(h + 1) * stride * c..].fill(zero);
        for y in 1..=h {
            let row = y * stride * c;
            self.data[row..row + c].fill(zero);
            self.data[row + (stride - 1) * c..row + stride * c].fill(zero);
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.fill(T::zero());
    }
}

fn tap_shift(tap: usize, stride: usize) -> usize {
    (tap / KERNEL) * stride + tap % KERNEL
}

#[cfg(feature = "parallel")]
const PARALLEL_MIN_ROWS: usize = 8192;
#[cfg(feature = "parallel")]
const ROWS_PER_TASK: usize = 2048;

/// Runs `f(first_row, chunk)` over row chunks of `region` (`cols` values per
/// row). Chunks are disjoint and each is computed identically regardless of
/// scheduling, so results do not depend on the thread count.
fn for_each_row_chunk<T: Real>(
    region: &mut [T],
    #[allow(unused_variables)] cols: usize,
    f: impl Fn(usize, &mut [T]) + Sync + Send,
) {
    #[cfg(feature = "parallel")]
    {
        let rows = region.len() / cols;
        if rows >= PARALLEL_MIN_ROWS {
            use rayon::prelude::*;
            region.par_chunks_mut(ROWS_PER_TASK * cols).enumerate().for_each(|(i, chunk)| f(i * ROWS_PER_TASK, chunk));
            return;
        }
    }
    f(0, region);
}

/// `out = conv(input)`; `out` must have the input's geometry and `f_out` channels.
pub(crate) fn conv_forward<T: Real>(input: &Frame<T>, p: &ConvParams<T>, out: &mut Frame<T>) {
    debug_assert_eq!(input.channels, p.f_in);
    debug_assert!(input.same_geometry(out) && out.channels == p.f_out);
    let (cin, cout) = (p.f_in, p.f_out);
    let (stride, origin, span) = (input.stride(), input.origin(), input.span());
    out.fill_zero();
    let region = &mut out.data[origin * cout..(origin + span) * cout];
    for row in region.chunks_exact_mut(cout) {
        row.copy_from_slice(&p.bias);
    }
    let x = &input.data;
    let kernel = &p.kernel;
    for_each_row_chunk(region, cout, |first, chunk| {
        let rows = chunk.len() / cout;
        for tap in 0..TAPS {
            gemm_acc(
                rows,
                cin,
                cout,
                MatRef { data: x, offset: (first + tap_shift(tap, stride)) * cin, row_stride: cin, col_stride: 1 },
                MatRef { data: kernel, offset: tap, row_stride: TAPS, col_stride: cin * TAPS },
                MatMut { data: chunk, offset: 0, row_stride: cout, col_stride: 1 },
            );
        }
    });
    out.zero_border();
}

/// Accumulates parameter gradients into `grads` and, when requested, the
/// input gradient into `grad_in`. `grad_out` must have a zero border.
pub(crate) fn conv_backward<T: Real>(
    input: &Frame<T>,
    p: &ConvParams<T>,
    grad_out: &Frame<T>,
    grads: &mut ConvParams<T>,
    grad_in: Option<&mut Frame<T>>,
) {
    let (cin, cout) = (p.f_in, p.f_out);
    let (stride, origin, span) = (input.stride(), input.origin(), input.span());
    for row in grad_out.data.chunks_exact(cout) {
        for (b, &g) in grads.bias.iter_mut().zip(row) {
            *b += g;
        }
    }
    for tap in 0..TAPS {
        gemm_acc(
            cout,
            span,
            cin,
            MatRef { data: &grad_out.data, offset: origin * cout, row_stride: 1, col_stride: cout },
            MatRef { data: &input.data, offset: tap_shift(tap, stride) * cin, row_stride: cin, col_stride: 1 },
            MatMut { data: &mut grads.kernel, offset: tap, row_stride: cin * TAPS, col_stride: TAPS },
        );
    }
    if let Some(grad_in) = grad_in {
        debug_assert!(grad_in.same_geometry(input) && grad_in.channels == cin);
        for tap in 0..TAPS {
            gemm_acc(
                span,
                cout,
                cin,
                MatRef { data: &grad_out.data, offset: origin * cout, row_stride: cout, col_stride: 1 },
                MatRef { data: &p.kernel, offset: tap, row_stride: cin * TAPS, col_stride: TAPS },
                MatMut {
                    data: &mut grad_in.data,
                    offset: tap_shift(tap, stride) * cin,
                    row_stride: cin,
                    col_stride: 1,
                },
            );
        }
        grad_in.zero_border();
    }
}

pub(crate) fn relu_in_place<T: Real>(frame: &mut Frame<T>) {
    let zero = T::zero();
    frame.data.iter_mut().for_each(|v| {
        if *v < zero {
            *v = zero
        }
    });
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub(crate) fn relu_backward_in_place<T: Real>(activation: &Frame<T>, grad: &mut Frame<T>) {
    let zero = T::zero();
    for (g, &a) in grad.data.iter_mut().zip(&activation.data) {
        if a <= zero {
            *g = zero;
        }
    }
}

fn check_channels<T: Real>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<()> {
    if x.channels() != p.f_in {
        return Err(Error::ShapeMismatch(format!(
            "convolution expects {} input channels, got {}",
            p.f_in,
            x.channels()
        )));
    }
    Ok(())
}

/// Same-size 3x3 cross-correlation with zero padding plus bias.
pub fn conv2d_same<T: Real>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    check_channels(x, p)?;
    let input = Frame::from_tensor(x);
    let mut out = Frame::zeros(x.height(), x.width(), p.f_out);
    conv_forward(&input, p, &mut out);
    Ok(out.to_tensor())
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// `z + lambda * conv2(relu(conv1(z)))`; no activation after the second convolution.
pub fn resblock_forward<T: Real>(
    z: &Tensor<T>,
    p1: &ConvParams<T>,
    p2: &ConvParams<T>,
    lambda: T,
) -> Result<Tensor<T>> {
    check_channels(z, p1)?;
    if p1.f_out != p2.f_in || p2.f_out != z.channels() {
        return Err(Error::ShapeMismatch(format!(
            "residual block {}->{}->{} does not preserve {} channels",
            p1.f_in,
            p1.f_out,
            p2.f_out,
            z.channels()
        )));
    }
    let input = Frame::from_tensor(z);
    let mut hidden = Frame::zeros(z.height(), z.width(), p1.f_out);
    conv_forward(&input, p1, &mut hidden);
    relu_in_place(&mut hidden);
    let mut out = Frame::zeros(z.height(), z.width(), p2.f_out);
    conv_forward(&hidden, p2, &mut out);
    for (o, &x) in out.data.iter_mut().zip(&input.data) {
        *o = lambda * *o + x;
    }
    Ok(out.to_tensor())
}
