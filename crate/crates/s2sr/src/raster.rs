//! Band raster files and the scene manifest.
//!
//! A band file is a 32-byte header followed by row-major little-endian f32
//! samples:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `S2SR`                            |
//! | 4      | 2    | format version (u16, currently 1)       |
//! | 6      | 4    | width (u32)                             |
//! | 10     | 4    | height (u32)                            |
//! | 14     | 2    | ground sampling distance in metres (u16)|
//! | 16     | 8    | band id, ASCII, NUL padded              |
//! | 24     | 8    | reserved, zero                          |
//!
//! A manifest is UTF-8 text of `key: value` lines tying band files
//! together; `#` starts a comment line:
//!
//! ```text
//! version: 1
//! base_gsd: 10
//! band: B2 96 96 B2.band
//! band: B5 48 48 B5.band
//! ```
//!
//! Band paths are relative to the manifest's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use s2sr_core::band::{SET_A, SET_B, SET_C};
use s2sr_core::{BandGroup, BandId, BandImage, MultiResScene};

use crate::bin_io::{put_f32s, read_file, write_file, Reader};
use crate::error::{Error, Result};

pub const BAND_MAGIC: &[u8; 4] = b"S2SR";
pub const BAND_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;
pub const MANIFEST_VERSION: u32 = 1;

/// Serialized form of one band.
pub fn encode_band(image: &BandImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + image.data().len() * 4);
    out.extend_from_slice(BAND_MAGIC);
    out.extend_from_slice(&BAND_VERSION.to_le_bytes());
    out.extend_from_slice(&(image.width() as u32).to_le_bytes());
    out.extend_from_slice(&(image.height() as u32).to_le_bytes());
    out.extend_from_slice(&image.gsd().to_le_bytes());
    let mut id = [0u8; 8];
    let name = image.band().as_str().as_bytes();
    id[..name.len()].copy_from_slice(name);
    out.extend_from_slice(&id);
    out.extend_from_slice(&[0u8; 8]);
    put_f32s(&mut out, image.data());
    out
}

/// Header fields of a band file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandHeader {
    pub band: BandId,
    pub width: usize,
    pub height: usize,
    pub gsd: u16,
}

fn decode_header(r: &mut Reader<'_>) -> Result<BandHeader> {
    r.magic(BAND_MAGIC)?;
    let version = r.u16("version")?;
    if version != BAND_VERSION {
        return Err(Error::VersionUnsupported { path: r.path().to_path_buf(), found: version.into() });
    }
    let width = r.u32("width")? as usize;
    let height = r.u32("height")? as usize;
    let gsd = r.u16("gsd")?;
    let id = r.take(8, "band id")?;
    let name_len = id.iter().position(|&b| b == 0).unwrap_or(8);
    let name = std::str::from_utf8(&id[..name_len]).map_err(|_| r.corrupt("band id is not ASCII".into()))?;
    let band = name.parse().map_err(|_| r.corrupt(format!("unknown band id {name:?}")))?;
    r.take(8, "reserved bytes")?;
    Ok(BandHeader { band, width, height, gsd })
}

pub fn decode_band(path: &Path, bytes: &[u8]) -> Result<BandImage> {
    let mut r = Reader::new(path, bytes);
    let h = decode_header(&mut r)?;
    let n = h.width.checked_mul(h.height).ok_or_else(|| r.corrupt("raster size overflows".into()))?;
    let data = r.f32s(n, "sample data")?;
    r.finish()?;
    Ok(BandImage::new(h.band, h.gsd, h.width, h.height, data)?)
}

pub fn write_band(image: &BandImage, path: &Path) -> Result<()> {
    write_file(path, &encode_band(image))
}

pub fn read_band(path: &Path) -> Result<BandImage> {
    decode_band(path, &read_file(path)?)
}

/// Reads only the header of a band file.
pub fn read_band_header(path: &Path) -> Result<BandHeader> {
    let bytes = read_file(path)?;
    decode_header(&mut Reader::new(path, &bytes))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub band: BandId,
    pub width: usize,
    pub height: usize,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub base_gsd: u16,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(path: &Path, text: &str) -> Result<Manifest> {
        let err = |line: usize, reason: String| Error::Parse { path: path.to_path_buf(), line, reason };
        let mut version = None;
        let mut base_gsd = None;
        let mut entries: Vec<ManifestEntry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(':').ok_or_else(|| err(i + 1, "expected `key: value`".into()))?;
            let value = value.trim();
            match key.trim() {
                "version" => {
                    let v: u32 = value.parse().map_err(|_| err(i + 1, format!("bad version {value:?}")))?;
                    if v != MANIFEST_VERSION {
                        return Err(Error::VersionUnsupported { path: path.to_path_buf(), found: v });
                    }
                    version = Some(v);
                }
                "base_gsd" => {
                    base_gsd = Some(value.parse().map_err(|_| err(i + 1, format!("bad base_gsd {value:?}")))?);
                }
                "band" => {
                    let mut fields = value.splitn(4, char::is_whitespace);
                    let mut next = |what: &str| {
                        fields
                            .next()
                            .filter(|f| !f.is_empty())
                            .ok_or_else(|| err(i + 1, format!("band entry lacks {what}")))
                    };
                    let id = next("an id")?;
                    let band: BandId = id.parse().map_err(|_| err(i + 1, format!("unknown band id {id:?}")))?;
                    let width = next("a width")?.parse().map_err(|_| err(i + 1, "bad width".into()))?;
                    let height = next("a height")?.parse().map_err(|_| err(i + 1, "bad height".into()))?;
                    let file = next("a path")?.trim();
                    if entries.iter().any(|e| e.band == band) {
                        return Err(err(i + 1, format!("band {band} listed twice")));
                    }
                    entries.push(ManifestEntry { band, width, height, path: PathBuf::from(file) });
                }
                other => return Err(err(i + 1, format!("unknown key {other:?}"))),
            }
        }
        if version.is_none() {
            return Err(err(0, "missing `version`".into()));
        }
        let base_gsd = base_gsd.ok_or_else(|| err(0, "missing `base_gsd`".into()))?;
        Ok(Manifest { base_gsd, entries })
    }

    pub fn render(&self) -> String {
        let mut out = format!("version: {MANIFEST_VERSION}\nbase_gsd: {}\n", self.base_gsd);
        for e in &self.entries {
            writeln!(out, "band: {} {} {} {}", e.band, e.width, e.height, e.path.display()).expect("string write");
        }
        out
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            reason: "manifest is not UTF-8".into(),
        })?;
        Manifest::parse(path, &text)
    }
}

/// All bands listed in a manifest, in manifest order.
pub fn read_bands(manifest_path: &Path) -> Result<(u16, Vec<BandImage>)> {
    let manifest = Manifest::read(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new(""));
    let bands = manifest
        .entries
        .iter()
        .map(|e| {
            let image = read_band(&dir.join(&e.path))?;
            if image.band() != e.band || (image.width(), image.height()) != (e.width, e.height) {
                return Err(s2sr_core::Error::DimensionMismatch(format!(
                    "manifest lists {} {}x{}, {} holds {} {}x{}",
                    e.band,
                    e.width,
                    e.height,
                    e.path.display(),
                    image.band(),
                    image.width(),
                    image.height()
                ))
                .into());
            }
            Ok(image)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest.base_gsd, bands))
}

/// Writes each band as `<dir>/<id>.band` and a manifest listing them.
pub fn write_bands(bands: &[BandImage], base_gsd: u16, dir: &Path, manifest_name: &str) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(bands.len());
    for b in bands {
        let file = PathBuf::from(format!("{}.band", b.band()));
        write_band(b, &dir.join(&file))?;
        entries.push(ManifestEntry { band: b.band(), width: b.width(), height: b.height(), path: file });
    }
    let manifest_path = dir.join(manifest_name);
    write_file(&manifest_path, Manifest { base_gsd, entries }.render().as_bytes())?;
    Ok(manifest_path)
}

/// Sorts bands into the three groups. Bands of the 60 m group are optional
/// but must then be complete.
pub fn scene_from_bands(base_gsd: u16, bands: Vec<BandImage>) -> s2sr_core::Result<MultiResScene> {
    let pick = |set: &[BandId], bands: &[BandImage]| -> s2sr_core::Result<Vec<BandImage>> {
        set.iter()
            .map(|&id| bands.iter().find(|b| b.band() == id).cloned().ok_or(s2sr_core::Error::MissingBand(id)))
            .collect()
    };
    let set_a = pick(&SET_A, &bands)?;
    let set_b = pick(&SET_B, &bands)?;
    let set_c = if bands.iter().any(|b| b.band().group() == BandGroup::C) { Some(pick(&SET_C, &bands)?) } else { None };
    MultiResScene::new(base_gsd, set_a, set_b, set_c)
}

pub fn read_scene(manifest_path: &Path) -> Result<MultiResScene> {
    let (base_gsd, bands) = read_bands(manifest_path)?;
    Ok(scene_from_bands(base_gsd, bands)?)
}

/// Writes every band of the scene into `dir` with a manifest named
/// `scene.manifest`; returns the manifest path.
pub fn write_scene(scene: &MultiResScene, dir: &Path) -> Result<PathBuf> {
    let bands: Vec<BandImage> = scene.bands().cloned().collect();
    write_bands(&bands, scene.base_gsd(), dir, "scene.manifest")
}
