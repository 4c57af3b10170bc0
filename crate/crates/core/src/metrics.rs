//! Reconstruction quality measures: RMSE and SRE per band, the spectral
//! angle over the band stack, and the windowed universal image quality
//! index. Inputs are in native reflectance units; all arithmetic is f64.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use crate::band::{BandId, BandImage};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Edge length of the square UIQ window (stride 1).
pub const UIQ_WINDOW: usize = 8;

fn same_shape(pred: &BandImage, truth: &BandImage) -> Result<()> {
    if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    Ok(())
}

fn mse(pred: &[f32], truth: &[f32]) -> f64 {
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| {
            let d = p as f64 - t as f64;
            d * d
        })
        .sum();
    sum / pred.len() as f64
}

/// Root mean squared error.
pub fn rmse(pred: &BandImage, truth: &BandImage) -> Result<f64> {
    same_shape(pred, truth)?;
    Ok(Float::sqrt(mse(pred.data(), truth.data())))
}

/// Signal to reconstruction error ratio. An exact reconstruction has no
/// finite value and is reported as [`Sre::Perfect`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sre {
    Db(f64),
    Perfect,
}

impl Sre {
    pub fn db(self) -> Option<f64> {
        match self {
            Sre::Db(v) => Some(v),
            Sre::Perfect => None,
        }
    }
}

/// `10 log10(mu_truth^2 / mse)` in decibels.
pub fn sre(pred: &BandImage, truth: &BandImage) -> Result<Sre> {
    same_shape(pred, truth)?;
    let n = truth.data().len() as f64;
    let mu = truth.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    if mu == 0.0 {
        return Err(Error::DegenerateTruth);
    }
    let e = mse(pred.data(), truth.data());
    if e == 0.0 {
        return Ok(Sre::Perfect);
    }
    Ok(Sre::Db(10.0 * Float::log10(mu * mu / e)))
}

/// Mean spectral angle and the number of pixels left out because either
/// spectrum has zero norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamResult {
    /// Mean angle in degrees; `None` when every pixel was excluded.
    pub degrees: Option<f64>,
    pub excluded: usize,
}

fn spectral_angle(
    pixels: usize,
    pred: impl Fn(usize, &mut Vec<f64>),
    truth: impl Fn(usize, &mut Vec<f64>),
) -> SamResult {
    let (mut p, mut t) = (Vec::new(), Vec::new());
    let mut total = 0.0;
    let mut excluded = 0;
    for i in 0..pixels {
        p.clear();
        t.clear();
        pred(i, &mut p);
        truth(i, &mut t);
        let np = Float::sqrt(p.iter().map(|a| a * a).sum::<f64>());
        let nt = Float::sqrt(t.iter().map(|a| a * a).sum::<f64>());
        if np == 0.0 || nt == 0.0 {
            excluded += 1;
            continue;
        }
        // Half-angle form; unlike acos of the cosine it stays accurate for
        // nearly parallel spectra.
        let (mut diff, mut sum) = (0.0, 0.0);
        for (a, b) in p.iter().zip(&t) {
            let (u, v) = (a / np, b / nt);
            diff += (u - v) * (u - v);
            sum += (u + v) * (u + v);
        }
        total += (2.0 * Float::atan2(Float::sqrt(diff), Float::sqrt(sum))).to_degrees();
    }
    let valid = pixels - excluded;
    SamResult { degrees: (valid > 0).then(|| total / valid as f64), excluded }
}

/// Spectral angle mapper over the channels of two equally shaped tensors.
pub fn sam<T: Real>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<SamResult> {
    if pred.shape() != truth.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", pred.shape(), truth.shape())));
    }
    let c = pred.channels();
    if c < 2 {
        return Err(Error::ShapeMismatch("spectral angle needs at least 2 bands".into()));
    }
    let (p, t) = (pred.data(), truth.data());
    Ok(spectral_angle(
        pred.height() * pred.width(),
        |i, out| out.extend(p[i * c..(i + 1) * c].iter().map(|v| v.as_f64())),
        |i, out| out.extend(t[i * c..(i + 1) * c].iter().map(|v| v.as_f64())),
    ))
}

fn same_grid(bands: &[BandImage]) -> bool {
    bands.windows(2).all(|p| (p[0].width(), p[0].height()) == (p[1].width(), p[1].height()))
}

/// [`sam`] over two aligned band stacks sharing one pixel grid.
pub fn sam_bands(pred: &[BandImage], truth: &[BandImage]) -> Result<SamResult> {
    check_aligned(pred, truth)?;
    if pred.len() < 2 {
        return Err(Error::ShapeMismatch("spectral angle needs at least 2 bands".into()));
    }
    if !same_grid(truth) {
        return Err(Error::DimensionMismatch("spectral angle needs all bands on one grid".into()));
    }
    Ok(spectral_angle(
        truth[0].data().len(),
        |i, out| out.extend(pred.iter().map(|b| b.data()[i] as f64)),
        |i, out| out.extend(truth.iter().map(|b| b.data()[i] as f64)),
    ))
}

/// Mean of the per-window quality index over all `8 x 8` windows at
/// stride 1. Windows in which either image is constant are skipped. When
/// both window means are zero the luminance factor is taken as 1.
pub fn uiq(pred: &BandImage, truth: &BandImage) -> Result<f64> {
    same_shape(pred, truth)?;
    let (w, h) = (truth.width(), truth.height());
    if w < UIQ_WINDOW || h < UIQ_WINDOW {
        return Err(Error::ShapeMismatch(format!(
            "{w}x{h} image is smaller than the {UIQ_WINDOW}x{UIQ_WINDOW} window"
        )));
    }
    let (x, y) = (pred.data(), truth.data());
    let n = (UIQ_WINDOW * UIQ_WINDOW) as f64;
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut px = [0.0f64; UIQ_WINDOW * UIQ_WINDOW];
    let mut py = [0.0f64; UIQ_WINDOW * UIQ_WINDOW];
    for wy in 0..=h - UIQ_WINDOW {
        for wx in 0..=w - UIQ_WINDOW {
            for r in 0..UIQ_WINDOW {
                let row = (wy + r) * w + wx;
                for c in 0..UIQ_WINDOW {
                    px[r * UIQ_WINDOW + c] = x[row + c] as f64;
                    py[r * UIQ_WINDOW + c] = y[row + c] as f64;
                }
            }
            let mx = px.iter().sum::<f64>() / n;
            let my = py.iter().sum::<f64>() / n;
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for (&a, &b) in px.iter().zip(&py) {
                let (da, db) = (a - mx, b - my);
                vx += da * da;
                vy += db * db;
                cxy += da * db;
            }
            if vx == 0.0 || vy == 0.0 {
                continue;
            }
            let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
            let means = mx * mx + my * my;
            let luminance = if means == 0.0 { 1.0 } else { 2.0 * mx * my / means };
            total += 2.0 * cxy / (vx + vy) * luminance;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::AllWindowsDegenerate);
    }
    Ok(total / counted as f64)
}

fn check_aligned(pred: &[BandImage], truth: &[BandImage]) -> Result<()> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::BandMismatch(format!("{} predicted vs {} true bands", pred.len(), truth.len())));
    }
    for (p, t) in pred.iter().zip(truth) {
        if p.band() != t.band() {
            return Err(Error::BandMismatch(format!("{} predicted where {} is expected", p.band(), t.band())));
        }
        if (p.width(), p.height()) != (t.width(), t.height()) {
            return Err(Error::BandMismatch(format!(
                "{}: {}x{} vs {}x{}",
                p.band(),
                p.width(),
                p.height(),
                t.width(),
                t.height()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandMetrics {
    pub band: BandId,
    pub rmse: f64,
    pub sre: Sre,
    pub uiq: f64,
}

/// Per-band scores, the stack SAM and unweighted means across bands.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub bands: Vec<BandMetrics>,
    /// Absent for single-band evaluations and for bands on different grids.
    pub sam: Option<SamResult>,
    pub mean_rmse: f64,
    /// Mean over the bands with a finite SRE; `None` if there are none.
    pub mean_sre: Option<f64>,
    /// Bands reconstructed exactly, left out of `mean_sre`.
    pub sre_perfect: usize,
    pub mean_uiq: f64,
}

pub fn evaluate(pred: &[BandImage], truth: &[BandImage]) -> Result<MetricsReport> {
    check_aligned(pred, truth)?;
    let bands = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| Ok(BandMetrics { band: t.band(), rmse: rmse(p, t)?, sre: sre(p, t)?, uiq: uiq(p, t)? }))
        .collect::<Result<Vec<_>>>()?;
    let k = bands.len() as f64;
    let finite: Vec<f64> = bands.iter().filter_map(|b| b.sre.db()).collect();
    Ok(MetricsReport {
        sam: if pred.len() >= 2 && same_grid(truth) { Some(sam_bands(pred, truth)?) } else { None },
        mean_rmse: bands.iter().map(|b| b.rmse).sum::<f64>() / k,
        mean_sre: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
        sre_perfect: bands.len() - finite.len(),
        mean_uiq: bands.iter().map(|b| b.uiq).sum::<f64>() / k,
        bands,
    })
}
