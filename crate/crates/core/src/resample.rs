//! Degradation model (Gaussian blur followed by block averaging) and the
//! interpolation kernels used to bring coarse bands onto the fine grid.
//!
//! Upsampling is center aligned: output pixel `i` of a factor-`s` upsample
//! sits at `(i + 0.5) / s - 0.5` in source coordinates. Weights depend only
//! on the phase `i % s`, so upsampling a crop that carries one source pixel
//! of margin reproduces the corresponding part of the full upsample bit for
//! bit. Tiled inference relies on this.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::band::{BandGroup, BandId, BandImage, MultiResScene, ALLOWED_GSD};
use crate::error::{Error, Result};
use crate::real::Real;

/// Interpolation kernel for coarse-to-fine resampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Upsampling {
    #[default]
    Bilinear,
    /// Keys cubic convolution with `a = -0.5`.
    Bicubic,
}

impl Upsampling {
    pub fn code(self) -> u8 {
        match self {
            Upsampling::Bilinear => 0,
            Upsampling::Bicubic => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Upsampling::Bilinear),
            1 => Some(Upsampling::Bicubic),
            _ => None,
        }
    }
}

const KEYS_A: f64 = -0.5;

pub(crate) fn keys_weight(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((KEYS_A + 2.0) * x - (KEYS_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((KEYS_A * x - 5.0 * KEYS_A) * x + 8.0 * KEYS_A) * x - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Per-phase taps: source offsets (relative to `i / s`) of the first tap
/// and of the sample left of the output position, plus the tap weights.
struct PhaseTaps<T> {
    first: isize,
    reference: isize,
    weights: Vec<T>,
}

fn phase_taps<T: Real>(s: usize, kernel: Upsampling) -> Vec<PhaseTaps<T>> {
    (0..s)
        .map(|p| {
            let t = (p as f64 + 0.5) / s as f64 - 0.5;
            // `base` is the source sample left of the output position.
            let (base, frac) = if t < 0.0 { (-1isize, 1.0 + t) } else { (0isize, t) };
            match kernel {
                Upsampling::Bilinear => PhaseTaps {
                    first: base,
                    reference: base,
                    weights: vec![T::from_f64(1.0 - frac), T::from_f64(frac)],
                },
                Upsampling::Bicubic => PhaseTaps {
                    first: base - 1,
                    reference: base,
                    weights: [1.0 + frac, frac, 1.0 - frac, 2.0 - frac]
                        .iter()
                        .map(|&d| T::from_f64(keys_weight(d)))
                        .collect(),
                },
            }
        })
        .collect()
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// 1-D upsampling of `n` samples read through `get`. Written as `x_ref + sum w_k (x_k - x_ref)` with `x_ref` the sample
/// left of the output position, so flat input stays exactly flat.
fn upsample_axis<T: Real>(
    src: &[T],
    n: usize,
    s: usize,
    taps: &[PhaseTaps<T>],
    get: impl Fn(&[T], usize) -> T,
    out: &mut Vec<T>,
) {
    for i in 0..n * s {
        let q = (i / s) as isize;
        let tap = &taps[i % s];
        let reference = get(src, clamp_index(q + tap.reference, n));
        let mut acc = T::zero();
        for (k, &w) in tap.weights.iter().enumerate() {
            let v = get(src, clamp_index(q + tap.first + k as isize, n));
            acc += w * (v - reference);
        }
        out.push(reference + acc);
    }
}

/// Upsamples a row-major `width x height` plane by the integer factor `s`.
pub fn upsample_plane<T: Real>(src: &[T], width: usize, height: usize, s: usize, kernel: Upsampling) -> Vec<T> {
    assert_eq!(src.len(), width * height, "plane size");
    assert!(s >= 1, "upsampling factor must be positive");
    let taps = phase_taps::<T>(s, kernel);
    let out_w = width * s;
    let out_h = height * s;
    let mut rows = Vec::with_capacity(height * out_w);
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        upsample_axis(row, width, s, &taps, |r, i| r[i], &mut rows);
    }
    let mut out = vec![T::zero(); out_h * out_w];
    let mut column = Vec::with_capacity(out_h);
    for x in 0..out_w {
        column.clear();
        upsample_axis(&rows, height, s, &taps, |r, i| r[i * out_w + x], &mut column);
        for (y, &v) in column.iter().enumerate() {
            out[y * out_w + x] = v;
        }
    }
    out
}

fn upsampled_gsd(image: &BandImage, s: usize) -> Result<u16> {
    let gsd = image.gsd() as usize;
    if s < 2 || !gsd.is_multiple_of(s) || !ALLOWED_GSD.contains(&((gsd / s) as u16)) {
        return Err(Error::InvariantViolation(format!("cannot upsample {} m by {s}", image.gsd())));
    }
    Ok((gsd / s) as u16)
}

fn upsample_band(image: &BandImage, s: usize, kernel: Upsampling) -> Result<BandImage> {
    let gsd = upsampled_gsd(image, s)?;
    let src: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let out = upsample_plane(&src, image.width(), image.height(), s, kernel);
    BandImage::new(
        image.band(),
        gsd,
        image.width() * s,
        image.height() * s,
        out.into_iter().map(|v| v as f32).collect(),
    )
}

/// Center-aligned bilinear interpolation, border samples clamped.
pub fn bilinear_upsample(image: &BandImage, s: usize) -> Result<BandImage> {
    upsample_band(image, s, Upsampling::Bilinear)
}

/// Keys bicubic interpolation (`a = -0.5`), border samples clamped.
pub fn bicubic_upsample(image: &BandImage, s: usize) -> Result<BandImage> {
    upsample_band(image, s, Upsampling::Bicubic)
}

/// Gaussian standard deviation (in pixels) matching a modulation transfer
/// function value at Nyquist: `sqrt(-2 ln(mtf) / pi^2)`.
pub fn mtf_to_sigma(mtf: f64) -> Result<f64> {
    if !(mtf > 0.0 && mtf < 1.0) {
        return Err(Error::DomainError(format!("mtf must lie in (0, 1), got {mtf}")));
    }
    Ok(Float::sqrt(-2.0 * Float::ln(mtf) / (core::f64::consts::PI * core::f64::consts::PI)))
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = Float::ceil(4.0 * sigma) as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|x| Float::exp(-((x * x) as f64) / (2.0 * sigma * sigma))).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= total);
    k
}

/// Mirror index without repeating the edge sample (`-1 -> 1`, `n -> n-2`).
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Separable Gaussian blur with reflect padding; same dimensions out.
pub fn gaussian_blur(image: &BandImage, sigma: f64) -> Result<BandImage> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::DomainError(format!("blur sigma must be positive, got {sigma}")));
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (image.width(), image.height());
    let src = image.data();
    let mut rows = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, &wt)| wt * src[y * w + reflect_index(x as isize + k as isize - radius, w)] as f64)
                .sum();
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let v: f64 = kernel
                .iter()
                .enumerate()
                .map(|(k, &wt)| wt * rows[reflect_index(y as isize + k as isize - radius, h) * w + x])
                .sum();
            out.push(v as f32);
        }
    }
    image.with_data(out)
}

/// Mean over non-overlapping `s x s` blocks; output GSD is `s` times coarser.
pub fn area_downsample(image: &BandImage, s: usize) -> Result<BandImage> {
    let (w, h) = (image.width(), image.height());
    if s == 0 || w % s != 0 || h % s != 0 {
        return Err(Error::DimensionMismatch(format!("{w}x{h} is not divisible by {s}")));
    }
    let gsd = image.gsd() as usize * s;
    if gsd > u16::MAX as usize || !ALLOWED_GSD.contains(&(gsd as u16)) {
        return Err(Error::InvariantViolation(format!("cannot downsample {} m by {s}", image.gsd())));
    }
    let (ow, oh) = (w / s, h / s);
    let src = image.data();
    let n = (s * s) as f64;
    let mut out = Vec::with_capacity(ow * oh);
    for by in 0..oh {
        for bx in 0..ow {
            // f32 inputs summed in f64 are exact, so one rounding at the end.
            let mut acc = 0.0f64;
            for y in by * s..(by + 1) * s {
                for x in bx * s..(bx + 1) * s {
                    acc += src[y * w + x] as f64;
                }
            }
            out.push((acc / n) as f32);
        }
    }
    BandImage::new(image.band(), gsd as u16, ow, oh, out)
}

/// Blur width and scale used to synthesize a coarser copy of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationSpec {
    scale: usize,
    sigma: f64,
    per_band_sigma: Option<BTreeMap<BandId, f64>>,
}

impl DegradationSpec {
    /// `sigma` defaults to `1 / scale` pixels of the input raster.
    pub fn new(scale: usize, sigma: Option<f64>) -> Result<Self> {
        if scale < 2 {
            return Err(Error::InvalidConfig(format!("scale must be at least 2, got {scale}")));
        }
        let sigma = sigma.unwrap_or(1.0 / scale as f64);
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
        }
        Ok(DegradationSpec { scale, sigma, per_band_sigma: None })
    }

    pub fn with_per_band_sigma(mut self, sigmas: BTreeMap<BandId, f64>) -> Result<Self> {
        if let Some((b, s)) = sigmas.iter().find(|(_, s)| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidConfig(format!("sigma for {b} must be positive, got {s}")));
        }
        self.per_band_sigma = Some(sigmas);
        Ok(self)
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sigma_for(&self, band: BandId) -> Result<f64> {
        match &self.per_band_sigma {
            None => Ok(self.sigma),
            Some(map) => {
                map.get(&band).copied().ok_or_else(|| Error::InvalidConfig(format!("no sigma given for {band}")))
            }
        }
    }

    /// Bands that serve as ground truth: the 60 m group for a factor of 6,
    /// the 20 m group otherwise.
    pub fn target_group(&self) -> BandGroup {
        if self.scale == 6 {
            BandGroup::C
        } else {
            BandGroup::B
        }
    }
}

/// Degraded scene plus the ground truth bands on its finest grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPair {
    pub input: MultiResScene,
    pub targets: Vec<BandImage>,
}

/// Blurs and block-averages every band by `spec.scale()`.
///
/// The targets are the target group resampled to the grid of the degraded
/// A bands: the original rasters when the scale equals the group's ratio
/// (2 for the 20 m bands, 6 for the 60 m bands), otherwise a copy degraded
/// by the remaining factor with the same blur.
pub fn simulate_scene(scene: &MultiResScene, spec: &DegradationSpec) -> Result<SimulatedPair> {
    let s = spec.scale();
    let unit = if scene.set_c().is_some() { 6 * s } else { 2 * s };
    if !scene.width().is_multiple_of(unit) || !scene.height().is_multiple_of(unit) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} scene is not divisible by {unit} for a factor-{s} degradation",
            scene.width(),
            scene.height()
        )));
    }
    let degrade = |group: &[BandImage], factor: usize| -> Result<Vec<BandImage>> {
        group.iter().map(|im| area_downsample(&gaussian_blur(im, spec.sigma_for(im.band())?)?, factor)).collect()
    };
    let group = spec.target_group();
    if !s.is_multiple_of(group.ratio()) {
        return Err(Error::InvalidConfig(format!(
            "factor {s} is not a multiple of the {:?} group ratio {}",
            group,
            group.ratio()
        )));
    }
    let originals = match group {
        BandGroup::C => scene.set_c().ok_or(Error::MissingBand(BandId::B1))?,
        _ => scene.set_b(),
    };
    let remaining = s / group.ratio();
    let targets = if remaining == 1 { originals.to_vec() } else { degrade(originals, remaining)? };
    let base = scene.base_gsd() as usize * s;
    if !ALLOWED_GSD.contains(&(base.min(u16::MAX as usize) as u16)) {
        return Err(Error::InvariantViolation(format!("base gsd {base} m unsupported")));
    }
    let input = MultiResScene::new(
        base as u16,
        degrade(scene.set_a(), s)?,
        degrade(scene.set_b(), s)?,
        scene.set_c().map(|c| degrade(c, s)).transpose()?,
    )?;
    Ok(SimulatedPair { input, targets })
}
