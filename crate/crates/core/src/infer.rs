//! Full-scene prediction by overlapping tiles.
//!
//! Tiles are laid out on a grid along each axis. Each tile contributes only
//! its interior, so every output pixel comes from exactly one tile and still
//! sees `overlap_lowres * s` pixels of real context on inner edges. The last
//! tile of a row or column is shifted back to end at the scene edge rather
//! than running into padding, which keeps tiled and whole-scene results in
//! agreement right up to the border.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::band::{crop_plane, BandImage, MultiResScene};
use crate::error::{Error, Result};
use crate::network::{forward_correction, NetworkConfig, NetworkWeights, Variant};
use crate::real::Real;
use crate::resample::{reflect_index, upsample_plane, Upsampling};
use crate::tensor::Tensor;

/// Coarse pixels read beyond a tile when interpolating it; covers the
/// widest interpolation kernel.
const INTERP_MARGIN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PadMode {
    #[default]
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TilingSpec {
    /// Tile edge in output pixels, rounded down to a multiple of the
    /// network's scale.
    pub tile: usize,
    /// Context kept on each inner tile edge, in coarse input pixels.
    pub overlap_lowres: usize,
    pub pad_mode: PadMode,
}

impl Default for TilingSpec {
    fn default() -> Self {
        TilingSpec { tile: 512, overlap_lowres: 2, pad_mode: PadMode::Reflect }
    }
}

/// One tile on one axis: the tile covers `origin..origin + size`, and its
/// output is kept for `keep_start..keep_end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub origin: usize,
    pub size: usize,
    pub keep_start: usize,
    pub keep_end: usize,
}

/// Partition of `0..len` into tiles of edge `tile` (clipped to `len`) with
/// `overlap` pixels of context on inner edges.
pub fn tile_spans(len: usize, tile: usize, overlap: usize) -> Result<Vec<Span>> {
    let size = tile.min(len);
    if size >= len {
        return Ok(vec![Span { origin: 0, size: len, keep_start: 0, keep_end: len }]);
    }
    if size <= 2 * overlap {
        return Err(Error::TileTooSmall { tile, overlap });
    }
    let step = size - 2 * overlap;
    let mut spans = Vec::new();
    let mut origin = 0;
    let mut keep_start = 0;
    loop {
        if origin + size >= len {
            let origin = len - size;
            spans.push(Span { origin, size, keep_start, keep_end: len });
            return Ok(spans);
        }
        let keep_end = origin + size - overlap;
        spans.push(Span { origin, size, keep_start, keep_end });
        keep_start = keep_end;
        origin += step;
    }
}

/// A tile about to be processed or just finished, in output pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileInfo {
    pub index: usize,
    pub count: usize,
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileEvent {
    Started(TileInfo),
    Finished(TileInfo),
}

/// Interpolates the `tw x th` window at fine-grid offset `(x0, y0)` of a
/// coarse plane upsampled by `r`. Reads only a small neighbourhood, yet the
/// result equals the same window of the whole-plane interpolation exactly.
fn upsample_window<T: Real>(
    plane: &[T],
    pw: usize,
    ph: usize,
    r: usize,
    kernel: Upsampling,
    (x0, y0, tw, th): (usize, usize, usize, usize),
) -> Vec<T> {
    debug_assert!(x0 % r == 0 && y0 % r == 0 && tw % r == 0 && th % r == 0);
    let (lx0, ly0) = (x0 / r, y0 / r);
    let wx0 = lx0.saturating_sub(INTERP_MARGIN);
    let wy0 = ly0.saturating_sub(INTERP_MARGIN);
    let wx1 = ((x0 + tw) / r + INTERP_MARGIN).min(pw);
    let wy1 = ((y0 + th) / r + INTERP_MARGIN).min(ph);
    let window = crop_plane(plane, pw, wx0, wy0, wx1 - wx0, wy1 - wy0);
    let up = upsample_plane(&window, wx1 - wx0, wy1 - wy0, r, kernel);
    crop_plane(&up, (wx1 - wx0) * r, (lx0 - wx0) * r, (ly0 - wy0) * r, tw, th)
}

fn check_setup(
    scene: &MultiResScene,
    config: &NetworkConfig,
    weights: &NetworkWeights<f32>,
    tiling: &TilingSpec,
) -> Result<Variant> {
    config.validate()?;
    weights.check(config).map_err(|e| Error::WeightsConfigMismatch(format!("{e}")))?;
    let variant = config.variant()?;
    if variant == Variant::S6x && scene.set_c().is_none() {
        return Err(Error::MissingInput("y_c"));
    }
    let s = variant.scale();
    if tiling.tile < s {
        return Err(Error::InvalidConfig(format!("tile {} is smaller than the scale {s}", tiling.tile)));
    }
    if tiling.overlap_lowres == 0 {
        return Err(Error::InvalidConfig("tile overlap must be at least one coarse pixel".into()));
    }
    Ok(variant)
}

/// Predicts the bands of the network's target group on the finest grid.
pub fn superresolve(
    scene: &MultiResScene,
    config: &NetworkConfig,
    weights: &NetworkWeights<f32>,
    tiling: &TilingSpec,
) -> Result<Vec<BandImage>> {
    superresolve_observed(scene, config, weights, tiling, 2000.0, &mut |_| {})
}

/// [`superresolve`] with an explicit value scale and a hook that sees every
/// tile start and finish.
///
/// The network runs on inputs divided by `value_scale`. Its correction is
/// scaled back and added to the interpolated target bands computed in
/// native units, so a network whose correction is zero reproduces the plain
/// interpolation bit for bit.
pub fn superresolve_observed(
    scene: &MultiResScene,
    config: &NetworkConfig,
    weights: &NetworkWeights<f32>,
    tiling: &TilingSpec,
    value_scale: f32,
    observer: &mut dyn FnMut(TileEvent),
) -> Result<Vec<BandImage>> {
    let variant = check_setup(scene, config, weights, tiling)?;
    let s = variant.scale();
    let overlap = tiling.overlap_lowres * s;
    let (w, h) = (scene.width(), scene.height());
    let tile = tiling.tile - tiling.tile % s;
    let cols = tile_spans(w, tile, overlap)?;
    let rows = tile_spans(h, tile, overlap)?;
    let kernel = config.upsampling;

    // Coarse planes in network units, and the target group in native units.
    let scaled = |bands: &[BandImage]| -> Vec<(usize, usize, Vec<f32>)> {
        bands.iter().map(|b| (b.width(), b.height(), b.data().iter().map(|&v| v / value_scale).collect())).collect()
    };
    let set_a = scaled(scene.set_a());
    let set_b = scaled(scene.set_b());
    let set_c = scene.set_c().map(scaled);
    let targets = match variant {
        Variant::T2x => scene.set_b(),
        Variant::S6x => scene.set_c().expect("checked above"),
    };
    let native: Vec<Vec<f64>> = targets.iter().map(|b| b.data().iter().map(|&v| v as f64).collect()).collect();

    let mut out = vec![vec![0.0f32; w * h]; targets.len()];
    let count = rows.len() * cols.len();
    for (ri, ry) in rows.iter().enumerate() {
        for (ci, cx) in cols.iter().enumerate() {
            let info = TileInfo {
                index: ri * cols.len() + ci,
                count,
                x0: cx.origin,
                y0: ry.origin,
                width: cx.size,
                height: ry.size,
            };
            observer(TileEvent::Started(info));
            let win = (cx.origin, ry.origin, cx.size, ry.size);
            let mut planes: Vec<Vec<f32>> =
                set_a.iter().map(|(pw, _, p)| crop_plane(p, *pw, win.0, win.1, win.2, win.3)).collect();
            planes.extend(set_b.iter().map(|(pw, ph, p)| upsample_window(p, *pw, *ph, 2, kernel, win)));
            if variant == Variant::S6x {
                let c = set_c.as_ref().expect("checked above");
                planes.extend(c.iter().map(|(pw, ph, p)| upsample_window(p, *pw, *ph, 6, kernel, win)));
            }
            let x0 = Tensor::from_planes(ry.size, cx.size, &planes)?;
            let correction = forward_correction(config, weights, &x0)?;
            for (k, band) in targets.iter().enumerate() {
                let base = upsample_window(&native[k], band.width(), band.height(), s, kernel, win);
                for y in ry.keep_start..ry.keep_end {
                    let ty = y - ry.origin;
                    for x in cx.keep_start..cx.keep_end {
                        let tx = x - cx.origin;
                        let corr = correction.get(ty, tx, k) * value_scale;
                        out[k][y * w + x] = base[ty * cx.size + tx] as f32 + corr;
                    }
                }
            }
            observer(TileEvent::Finished(info));
        }
    }
    targets.iter().zip(out).map(|(b, data)| BandImage::new(b.band(), scene.base_gsd(), w, h, data)).collect()
}

/// The complete 12-band cube on the finest grid: the A bands as given, the
/// 2x network's B bands and the 6x network's C bands. Both networks read the
/// original coarse bands.
pub fn superresolve_all(
    scene: &MultiResScene,
    net_2x: (&NetworkConfig, &NetworkWeights<f32>),
    net_6x: (&NetworkConfig, &NetworkWeights<f32>),
    tiling: &TilingSpec,
) -> Result<Vec<BandImage>> {
    if scene.set_c().is_none() {
        return Err(Error::MissingInput("y_c"));
    }
    if net_2x.0.variant()? != Variant::T2x || net_6x.0.variant()? != Variant::S6x {
        return Err(Error::WeightsConfigMismatch("expected a 2x and a 6x network".into()));
    }
    let mut cube = scene.set_a().to_vec();
    cube.extend(superresolve(scene, net_2x.0, net_2x.1, tiling)?);
    cube.extend(superresolve(scene, net_6x.0, net_6x.1, tiling)?);
    Ok(cube)
}

/// Reflect-pads every band on the right and bottom so the finest grid
/// becomes a multiple of `multiple` (and of the coarsest band ratio).
/// Returns the padded scene and the original finest dimensions.
pub fn pad_to_multiple(scene: &MultiResScene, multiple: usize) -> Result<(MultiResScene, (usize, usize))> {
    if multiple == 0 {
        return Err(Error::InvalidConfig("padding multiple must be positive".into()));
    }
    let unit = if scene.set_c().is_some() { 6 } else { 2 };
    let m = lcm(multiple, unit);
    let (w, h) = (scene.width(), scene.height());
    let (pw, ph) = (w.div_ceil(m) * m, h.div_ceil(m) * m);
    let pad = |bands: &[BandImage], r: usize| -> Result<Vec<BandImage>> {
        bands
            .iter()
            .map(|b| {
                let (bw, bh) = (b.width(), b.height());
                let (nw, nh) = (pw / r, ph / r);
                let mut data = Vec::with_capacity(nw * nh);
                for y in 0..nh {
                    let sy = reflect_index(y as isize, bh);
                    data.extend((0..nw).map(|x| b.data()[sy * bw + reflect_index(x as isize, bw)]));
                }
                BandImage::new(b.band(), b.gsd(), nw, nh, data)
            })
            .collect()
    };
    let padded = MultiResScene::new(
        scene.base_gsd(),
        pad(scene.set_a(), 1)?,
        pad(scene.set_b(), 2)?,
        scene.set_c().map(|c| pad(c, 6)).transpose()?,
    )?;
    Ok((padded, (w, h)))
}

fn lcm(a: usize, b: usize) -> usize {
    let (mut x, mut y) = (a, b);
    while y != 0 {
        (x, y) = (y, x % y);
    }
    a / x * b
}
