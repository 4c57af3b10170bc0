//! Band rasters and the three-resolution scene model.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// Sentinel-2 band identifiers handled by the toolkit. B10 (cirrus) is
/// deliberately absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BandId {
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
    B7,
    B8,
    B8a,
    B9,
    B11,
    B12,
}

impl BandId {
    pub const ALL: [BandId; 12] = [
        BandId::B1,
        BandId::B2,
        BandId::B3,
        BandId::B4,
        BandId::B5,
        BandId::B6,
        BandId::B7,
        BandId::B8,
        BandId::B8a,
        BandId::B9,
        BandId::B11,
        BandId::B12,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BandId::B1 => "B1",
            BandId::B2 => "B2",
            BandId::B3 => "B3",
            BandId::B4 => "B4",
            BandId::B5 => "B5",
            BandId::B6 => "B6",
            BandId::B7 => "B7",
            BandId::B8 => "B8",
            BandId::B8a => "B8a",
            BandId::B9 => "B9",
            BandId::B11 => "B11",
            BandId::B12 => "B12",
        }
    }

    pub fn group(self) -> BandGroup {
        if SET_A.contains(&self) {
            BandGroup::A
        } else if SET_B.contains(&self) {
            BandGroup::B
        } else {
            BandGroup::C
        }
    }
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BandId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BandId::ALL
            .iter()
            .copied()
            .find(|b| b.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvariantViolation(format!("unknown band id {s:?}")))
    }
}

/// 10 m bands.
pub const SET_A: [BandId; 4] = [BandId::B2, BandId::B3, BandId::B4, BandId::B8];
/// 20 m bands.
pub const SET_B: [BandId; 6] = [BandId::B5, BandId::B6, BandId::B7, BandId::B8a, BandId::B11, BandId::B12];
/// 60 m bands.
pub const SET_C: [BandId; 2] = [BandId::B1, BandId::B9];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandGroup {
    A,
    B,
    C,
}

impl BandGroup {
    pub fn bands(self) -> &'static [BandId] {
        match self {
            BandGroup::A => &SET_A,
            BandGroup::B => &SET_B,
            BandGroup::C => &SET_C,
        }
    }

    /// Resolution ratio relative to the A group.
    pub fn ratio(self) -> usize {
        match self {
            BandGroup::A => 1,
            BandGroup::B => 2,
            BandGroup::C => 6,
        }
    }
}

/// Ground sampling distances that native and simulated scenes can carry.
pub const ALLOWED_GSD: [u16; 7] = [10, 20, 40, 60, 80, 120, 360];

/// One band raster. Values are reflectance times 10^4, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BandImage {
    band: BandId,
    gsd: u16,
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl BandImage {
    pub fn new(band: BandId, gsd: u16, width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvariantViolation(format!("{band}: empty raster {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::InvariantViolation(format!(
                "{band}: {} samples for a {width}x{height} raster",
                data.len()
            )));
        }
        if !ALLOWED_GSD.contains(&gsd) {
            return Err(Error::InvariantViolation(format!("{band}: unsupported gsd {gsd} m")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation(format!("{band}: non-finite value at sample {i}")));
        }
        Ok(BandImage { band, gsd, width, height, data })
    }

    /// Same invariants as [`BandImage::new`] with every sample set to `value`.
    pub fn constant(band: BandId, gsd: u16, width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(band, gsd, width, height, alloc::vec![value; width * height])
    }

    pub fn band(&self) -> BandId {
        self.band
    }
    pub fn gsd(&self) -> u16 {
        self.gsd
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Replaces the pixel data, keeping id and geometry.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.band, self.gsd, self.width, self.height, data)
    }

    /// Copy of the rectangle `[x0, x0 + w) x [y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::DimensionMismatch(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let data = crop_plane(&self.data, self.width, x0, y0, w, h);
        Self::new(self.band, self.gsd, w, h, data)
    }
}

pub(crate) fn crop_plane<T: Copy>(src: &[T], src_w: usize, x0: usize, y0: usize, w: usize, h: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(w * h);
    for y in y0..y0 + h {
        out.extend_from_slice(&src[y * src_w + x0..y * src_w + x0 + w]);
    }
    out
}

/// Co-registered bands at three resolutions: `set_a` at the base GSD,
/// `set_b` at twice it and the optional `set_c` at six times it.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiResScene {
    base_gsd: u16,
    set_a: Vec<BandImage>,
    set_b: Vec<BandImage>,
    set_c: Option<Vec<BandImage>>,
}

fn check_group(group: BandGroup, images: &[BandImage], gsd: u32, width: usize, height: usize) -> Result<()> {
    let expected = group.bands();
    for &band in expected {
        if !images.iter().any(|im| im.band == band) {
            return Err(Error::MissingBand(band));
        }
    }
    if images.len() != expected.len() {
        return Err(Error::InvariantViolation(format!(
            "group {group:?} holds {} bands, expected {}",
            images.len(),
            expected.len()
        )));
    }
    for (im, &band) in images.iter().zip(expected) {
        if im.band != band {
            return Err(Error::InvariantViolation(format!(
                "group {group:?} out of order: found {} where {band} belongs",
                im.band
            )));
        }
        if u32::from(im.gsd) != gsd {
            return Err(Error::DimensionMismatch(format!("{band} has gsd {} m, expected {gsd} m", im.gsd)));
        }
        if im.width != width || im.height != height {
            return Err(Error::DimensionMismatch(format!(
                "{band} is {}x{}, expected {width}x{height}",
                im.width, im.height
            )));
        }
    }
    Ok(())
}

impl MultiResScene {
    /// Validates band membership, ordering, GSDs and the 1 : 1/2 : 1/6 size
    /// ratios. Band vectors must follow [`SET_A`], [`SET_B`], [`SET_C`] order.
    pub fn new(
        base_gsd: u16,
        set_a: Vec<BandImage>,
        set_b: Vec<BandImage>,
        set_c: Option<Vec<BandImage>>,
    ) -> Result<Self> {
        let first = set_a.first().ok_or(Error::MissingBand(SET_A[0]))?;
        let (w, h) = (first.width, first.height);
        let unit = if set_c.is_some() { 6 } else { 2 };
        if w % unit != 0 || h % unit != 0 {
            return Err(Error::DimensionMismatch(format!("base raster {w}x{h} is not divisible by {unit}")));
        }
        let g = u32::from(base_gsd);
        check_group(BandGroup::A, &set_a, g, w, h)?;
        check_group(BandGroup::B, &set_b, 2 * g, w / 2, h / 2)?;
        if let Some(c) = &set_c {
            check_group(BandGroup::C, c, 6 * g, w / 6, h / 6)?;
        }
        Ok(MultiResScene { base_gsd, set_a, set_b, set_c })
    }

    pub fn base_gsd(&self) -> u16 {
        self.base_gsd
    }
    pub fn width(&self) -> usize {
        self.set_a[0].width
    }
    pub fn height(&self) -> usize {
        self.set_a[0].height
    }
    pub fn set_a(&self) -> &[BandImage] {
        &self.set_a
    }
    pub fn set_b(&self) -> &[BandImage] {
        &self.set_b
    }
    pub fn set_c(&self) -> Option<&[BandImage]> {
        self.set_c.as_deref()
    }

    pub fn group(&self, group: BandGroup) -> Option<&[BandImage]> {
        match group {
            BandGroup::A => Some(&self.set_a),
            BandGroup::B => Some(&self.set_b),
            BandGroup::C => self.set_c(),
        }
    }

    /// All bands, A then B then C.
    pub fn bands(&self) -> impl Iterator<Item = &BandImage> {
        self.set_a.iter().chain(&self.set_b).chain(self.set_c.iter().flatten())
    }

    pub fn into_groups(self) -> (Vec<BandImage>, Vec<BandImage>, Option<Vec<BandImage>>) {
        (self.set_a, self.set_b, self.set_c)
    }

    /// Crop given in base-resolution pixels; origin and size must be aligned
    /// to the coarsest group present.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        let unit = if self.set_c.is_some() { 6 } else { 2 };
        if !x0.is_multiple_of(unit) || !y0.is_multiple_of(unit) || !w.is_multiple_of(unit) || !h.is_multiple_of(unit) {
            return Err(Error::DimensionMismatch(format!("crop {w}x{h}+{x0}+{y0} not aligned to {unit}")));
        }
        let crop_group = |images: &[BandImage], r: usize| -> Result<Vec<BandImage>> {
            images.iter().map(|im| im.crop(x0 / r, y0 / r, w / r, h / r)).collect()
        };
        MultiResScene::new(
            self.base_gsd,
            crop_group(&self.set_a, 1)?,
            crop_group(&self.set_b, 2)?,
            self.set_c.as_deref().map(|c| crop_group(c, 6)).transpose()?,
        )
    }
}
