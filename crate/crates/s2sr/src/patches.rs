//! Training patch files.
//!
//! Layout, all little-endian: magic `S2PT`, version (u16), patch size (u32),
//! sample count (u32), a flag byte that is 1 when 60 m inputs are present,
//! and the target channel count (u32). Then, sample by sample, the A crop,
//! the B crop, the C crop when present and the target crop, each as
//! row-major interleaved f32 values (`y, x, channel`) in native units.

use std::path::Path;

use s2sr_core::train::PatchSet;
use s2sr_core::{Tensor, Variant};

use crate::bin_io::{put_f32s, read_file, write_file, Reader};
use crate::error::{Error, Result};

pub const PATCH_MAGIC: &[u8; 4] = b"S2PT";
pub const PATCH_VERSION: u16 = 1;

pub fn encode_patches(set: &PatchSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PATCH_MAGIC);
    out.extend_from_slice(&PATCH_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.patch_size() as u32).to_le_bytes());
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    out.push(set.inputs_c().is_some() as u8);
    out.extend_from_slice(&(set.variant().output_channels() as u32).to_le_bytes());
    for i in 0..set.len() {
        put_f32s(&mut out, set.inputs_a()[i].data());
        put_f32s(&mut out, set.inputs_b()[i].data());
        if let Some(c) = set.inputs_c() {
            put_f32s(&mut out, c[i].data());
        }
        put_f32s(&mut out, set.targets()[i].data());
    }
    out
}

pub fn decode_patches(path: &Path, bytes: &[u8]) -> Result<PatchSet> {
    let mut r = Reader::new(path, bytes);
    r.magic(PATCH_MAGIC)?;
    let version = r.u16("version")?;
    if version != PATCH_VERSION {
        return Err(Error::VersionUnsupported { path: path.to_path_buf(), found: version.into() });
    }
    let p = r.u32("patch size")? as usize;
    let count = r.u32("sample count")? as usize;
    let variant = match r.u8("60 m flag")? {
        0 => Variant::T2x,
        1 => Variant::S6x,
        other => return Err(r.corrupt(format!("60 m flag {other}"))),
    };
    let channels = r.u32("target channels")? as usize;
    if channels != variant.output_channels() {
        return Err(r.corrupt(format!("{channels} target channels for a {variant:?} patch set")));
    }
    if p == 0 || !p.is_multiple_of(variant.scale()) || p > 1 << 14 {
        return Err(r.corrupt(format!("patch size {p}")));
    }
    let mut per_sample = p * p * 4 + (p / 2) * (p / 2) * 6 + p * p * channels;
    if variant == Variant::S6x {
        per_sample += (p / 6) * (p / 6) * 2;
    }
    if per_sample.checked_mul(4 * count).is_none_or(|n| n > bytes.len()) {
        return Err(r.corrupt(format!("{count} samples of {p} pixels exceed the file size")));
    }
    let tensor = |r: &mut Reader<'_>, side: usize, ch: usize, what: &str| -> Result<Tensor<f32>> {
        Ok(Tensor::from_vec(side, side, ch, r.f32s(side * side * ch, what)?)?)
    };
    let (mut a, mut b, mut t) = (Vec::with_capacity(count), Vec::with_capacity(count), Vec::with_capacity(count));
    let mut c = (variant == Variant::S6x).then(|| Vec::with_capacity(count));
    for _ in 0..count {
        a.push(tensor(&mut r, p, 4, "A crop")?);
        b.push(tensor(&mut r, p / 2, 6, "B crop")?);
        if let Some(c) = c.as_mut() {
            c.push(tensor(&mut r, p / 6, 2, "C crop")?);
        }
        t.push(tensor(&mut r, p, channels, "target crop")?);
    }
    r.finish()?;
    Ok(PatchSet::new(p, a, b, c, t)?)
}

pub fn save_patches(set: &PatchSet, path: &Path) -> Result<()> {
    write_file(path, &encode_patches(set))
}

pub fn load_patches(path: &Path) -> Result<PatchSet> {
    decode_patches(path, &read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> PatchSet {
        let t = |side: usize, ch: usize, k: usize| {
            Tensor::from_vec(side, side, ch, (0..side * side * ch).map(|i| (i * 31 + k) as f32 * 0.5).collect())
                .unwrap()
        };
        PatchSet::new(
            6,
            (0..n).map(|k| t(6, 4, k)).collect(),
            (0..n).map(|k| t(3, 6, k)).collect(),
            Some((0..n).map(|k| t(1, 2, k)).collect()),
            (0..n).map(|k| t(6, 2, k)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_and_truncation() {
        let set = toy(3);
        let bytes = encode_patches(&set);
        assert_eq!(decode_patches(Path::new("p"), &bytes).unwrap(), set);
        let err = decode_patches(Path::new("p"), &bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::CorruptHeader { .. }), "{err}");
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_patches(Path::new("p"), &bad), Err(Error::VersionUnsupported { found: 9, .. })));
    }
}
