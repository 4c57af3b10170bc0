use std::path::Path;

use proptest::prelude::*;
use s2sr::checkpoint::{decode_weights, encode_weights, load_weights, load_weights_for, save_weights};
use s2sr::patches::{load_patches, save_patches};
use s2sr::raster::{read_band, read_scene, write_band, write_bands, write_scene, Manifest};
use s2sr::Error;
use s2sr_core::band::{SET_A, SET_B, SET_C};
use s2sr_core::network::{init_he_uniform, param_count};
use s2sr_core::resample::{simulate_scene, DegradationSpec};
use s2sr_core::synthetic::{synthetic_scene, SyntheticSpec};
use s2sr_core::train::sample_patches;
use s2sr_core::{BandId, BandImage, NetworkConfig, Variant};

fn constant_bands(ids: &[BandId], gsd: u16, side: usize) -> Vec<BandImage> {
    ids.iter().map(|&id| BandImage::constant(id, gsd, side, side, 1000.0).unwrap()).collect()
}

#[test]
fn scene_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synthetic_scene(&SyntheticSpec::new(36, 24, true, 9)).unwrap();
    let manifest = write_scene(&scene, dir.path()).unwrap();
    let back = read_scene(&manifest).unwrap();
    assert_eq!(back, scene);
    for (a, b) in back.bands().zip(scene.bands()) {
        let bits = |im: &BandImage| im.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
}

#[test]
fn scene_without_60m_bands() {
    let dir = tempfile::tempdir().unwrap();
    let mut bands = constant_bands(&SET_A, 10, 96);
    bands.extend(constant_bands(&SET_B, 20, 48));
    let manifest = write_bands(&bands, 10, dir.path(), "m.manifest").unwrap();
    let scene = read_scene(&manifest).unwrap();
    assert!(scene.set_c().is_none());
    assert_eq!((scene.width(), scene.set_b()[0].width()), (96, 48));
}

#[test]
fn scene_with_non_integral_ratio_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut bands = constant_bands(&SET_A, 10, 64);
    bands.extend(constant_bands(&SET_B, 20, 32));
    bands.extend(constant_bands(&SET_C, 60, 10));
    let manifest = write_bands(&bands, 10, dir.path(), "m.manifest").unwrap();
    let err = read_scene(&manifest).unwrap_err();
    assert!(matches!(err, Error::Core(s2sr_core::Error::DimensionMismatch(_))), "{err}");
}

#[test]
fn missing_band_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut bands = constant_bands(&SET_A, 10, 8);
    bands.extend(constant_bands(&SET_B[1..], 20, 4));
    let manifest = write_bands(&bands, 10, dir.path(), "m.manifest").unwrap();
    let err = read_scene(&manifest).unwrap_err();
    assert!(matches!(err, Error::Core(s2sr_core::Error::MissingBand(BandId::B5))), "{err}");
}

#[test]
fn manifest_disagreeing_with_band_header() {
    let dir = tempfile::tempdir().unwrap();
    let im = BandImage::constant(BandId::B2, 10, 4, 4, 1.0).unwrap();
    write_band(&im, &dir.path().join("B2.band")).unwrap();
    let m = dir.path().join("m.manifest");
    std::fs::write(&m, "version: 1\nbase_gsd: 10\nband: B2 4 6 B2.band\n").unwrap();
    assert!(s2sr::raster::read_bands(&m).is_err());
    let parsed = Manifest::read(&m).unwrap();
    assert_eq!(parsed.entries[0].height, 6);
}

#[test]
fn large_values_are_preserved() {
    let dir = tempfile::tempdir().unwrap();
    let im = BandImage::new(BandId::B11, 20, 2, 1, vec![12000.0, 0.0]).unwrap();
    let path = dir.path().join("b.band");
    write_band(&im, &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 40);
    assert_eq!(read_band(&path).unwrap(), im);
    assert!(BandImage::new(BandId::B11, 20, 1, 1, vec![f32::NAN]).is_err());
}

#[test]
fn dsen2_checkpoint_declares_its_parameter_count() {
    let config = NetworkConfig::deep(Variant::T2x);
    let weights = init_he_uniform(&config, 1);
    let bytes = encode_weights(&config, &weights).unwrap();
    // magic, version, five u32 fields, lambda, kernel code.
    let at = 4 + 2 + 5 * 4 + 8 + 1;
    let declared = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    assert_eq!(declared, 1_789_574);
    assert_eq!(declared as usize, param_count(&config));
    let (c, w) = decode_weights(Path::new("ck"), &bytes).unwrap();
    assert_eq!((c, w.param_count()), (config, 1_789_574));
}

#[test]
fn checkpoint_round_trip_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let config = NetworkConfig::t2x(1, 4);
    let weights = init_he_uniform(&config, 3);
    let path = dir.path().join("toy.ck");
    save_weights(&config, &weights, &path).unwrap();
    let (c, w) = load_weights(&path).unwrap();
    assert_eq!(c, config);
    let bits = |w: &s2sr_core::NetworkWeights<f32>| w.buffers().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&w), bits(&weights));

    let bytes = std::fs::read(&path).unwrap();
    for cut in [3, 20, 40, bytes.len() - 1] {
        let err = decode_weights(&path, &bytes[..cut]).unwrap_err();
        assert!(matches!(err, Error::CorruptHeader { .. }), "cut {cut}: {err}");
    }
    let mut future = bytes.clone();
    future[4] = 7;
    assert!(matches!(decode_weights(&path, &future), Err(Error::VersionUnsupported { found: 7, .. })));

    let err = load_weights_for(&path, &NetworkConfig::t2x(2, 4)).unwrap_err();
    assert!(matches!(err, Error::Core(s2sr_core::Error::ShapeMismatch(_))), "{err}");
    assert!(load_weights_for(&path, &config).is_ok());
}

#[test]
fn patch_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synthetic_scene(&SyntheticSpec::new(96, 96, true, 2)).unwrap();
    let pair = simulate_scene(&scene, &DegradationSpec::new(2, None).unwrap()).unwrap();
    let set = sample_patches(&pair.input, &pair.targets, 5, 16, 4).unwrap();
    let path = dir.path().join("p.bin");
    save_patches(&set, &path).unwrap();
    assert_eq!(load_patches(&path).unwrap(), set);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_band_round_trips(
        w in 1usize..9,
        h in 1usize..9,
        id in 0usize..12,
        seed in any::<u64>(),
    ) {
        let band = BandId::ALL[id];
        let mut x = seed | 1;
        let data: Vec<f32> = (0..w * h)
            .map(|_| {
                x ^= x << 13;
                x ^= x >> 7;
                x ^= x << 17;
                let v = f32::from_bits((x >> 32) as u32);
                if v.is_finite() { v } else { (x % 20000) as f32 }
            })
            .collect();
        let im = BandImage::new(band, 60, w, h, data).unwrap();
        let bytes = s2sr::raster::encode_band(&im);
        prop_assert_eq!(bytes.len(), 32 + 4 * w * h);
        let back = s2sr::raster::decode_band(Path::new("b"), &bytes).unwrap();
        prop_assert_eq!(
            back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            im.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        prop_assert_eq!(back.band(), band);
    }
}
