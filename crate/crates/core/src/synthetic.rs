//! Procedural multi-resolution scenes for tests and benchmarks.
//!
//! Every band is an affine mix of a few shared latent fields plus a smooth
//! band-specific term, all defined on the finest grid. The coarse band sets
//! are observed through a Gaussian blur and block averaging, so fine detail
//! missing from them is present, mixed differently, in the 10 m bands.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::band::{BandId, BandImage, MultiResScene, SET_A, SET_B, SET_C};
use crate::error::{Error, Result};
use crate::resample::{area_downsample, gaussian_blur};

const LATENTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    /// Also produce the 60 m bands (dimensions must then divide by 6).
    pub include_c: bool,
    pub base_gsd: u16,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(width: usize, height: usize, include_c: bool, seed: u64) -> Self {
        SyntheticSpec { width, height, include_c, base_gsd: 10, seed }
    }
}

/// Multi-octave value noise in roughly `[0, 1]`.
fn value_noise(rng: &mut ChaCha8Rng, w: usize, h: usize, cells: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    let mut amp = 1.0;
    let mut total = 0.0;
    for &cell in cells {
        let gw = w / cell + 2;
        let gh = h / cell + 2;
        let grid: Vec<f64> = (0..gw * gh).map(|_| rng.gen::<f64>()).collect();
        for y in 0..h {
            let fy = y as f64 / cell as f64;
            let (iy, ty) = (fy as usize, fade(Float::fract(fy)));
            for x in 0..w {
                let fx = x as f64 / cell as f64;
                let (ix, tx) = (fx as usize, fade(Float::fract(fx)));
                let g = |i: usize, j: usize| grid[j * gw + i];
                let top = g(ix, iy) + tx * (g(ix + 1, iy) - g(ix, iy));
                let bottom = g(ix, iy + 1) + tx * (g(ix + 1, iy + 1) - g(ix, iy + 1));
                out[y * w + x] += amp * (top + ty * (bottom - top));
            }
        }
        total += amp;
        amp *= 0.6;
    }
    out.iter_mut().for_each(|v| *v /= total);
    out
}

fn fade(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Overlapping axis-aligned parcels of constant value: sharp edges.
fn parcels(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.5; w * h];
    let count = (w * h / 900).max(4);
    for _ in 0..count {
        let pw = rng.gen_range(4..=(w / 4).max(5));
        let ph = rng.gen_range(4..=(h / 4).max(5));
        let x0 = rng.gen_range(0..w);
        let y0 = rng.gen_range(0..h);
        let v: f64 = rng.gen();
        for y in y0..(y0 + ph).min(h) {
            out[y * w + x0..y * w + (x0 + pw).min(w)].fill(v);
        }
    }
    out
}

struct BandModel {
    offset: f64,
    mix: [f64; LATENTS],
    own: f64,
}

fn band_model(rng: &mut ChaCha8Rng) -> BandModel {
    BandModel {
        offset: rng.gen_range(800.0..2000.0),
        mix: [rng.gen_range(-900.0..1500.0), rng.gen_range(-900.0..1500.0), rng.gen_range(300.0..1500.0)],
        own: rng.gen_range(100.0..400.0),
    }
}

fn render(
    id: BandId,
    gsd: u16,
    w: usize,
    h: usize,
    model: &BandModel,
    latents: &[Vec<f64>],
    own: &[f64],
) -> Result<BandImage> {
    let data = (0..w * h)
        .map(|i| {
            let mut v = model.offset + model.own * own[i];
            for (k, l) in latents.iter().enumerate() {
                v += model.mix[k] * l[i];
            }
            v.max(1.0) as f32
        })
        .collect();
    BandImage::new(id, gsd, w, h, data)
}

/// Generates a scene with its A bands on a `width x height` grid.
pub fn synthetic_scene(spec: &SyntheticSpec) -> Result<MultiResScene> {
    let (w, h) = (spec.width, spec.height);
    let unit = if spec.include_c { 6 } else { 2 };
    if w == 0 || h == 0 || w % unit != 0 || h % unit != 0 {
        return Err(Error::DimensionMismatch(format!("{w}x{h} is not divisible by {unit}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let latents: Vec<Vec<f64>> = vec![
        value_noise(&mut rng, w, h, &[64, 32, 16, 8, 4, 2]),
        value_noise(&mut rng, w, h, &[24, 12, 6, 3]),
        parcels(&mut rng, w, h),
    ];
    let g = spec.base_gsd;
    let observe = |rng: &mut ChaCha8Rng, ids: &[BandId], s: usize| -> Result<Vec<BandImage>> {
        ids.iter()
            .map(|&id| {
                let model = band_model(rng);
                let own = value_noise(rng, w, h, &[96, 48]);
                let truth = render(id, g, w, h, &model, &latents, &own)?;
                if s == 1 {
                    return Ok(truth);
                }
                let blurred = gaussian_blur(&truth, 0.5 * s as f64)?;
                area_downsample(&blurred, s)
            })
            .collect()
    };
    let set_a = observe(&mut rng, &SET_A, 1)?;
    let set_b = observe(&mut rng, &SET_B, 2)?;
    let set_c = if spec.include_c { Some(observe(&mut rng, &SET_C, 6)?) } else { None };
    MultiResScene::new(g, set_a, set_b, set_c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_and_determinism() {
        let spec = SyntheticSpec::new(48, 36, true, 4);
        let scene = synthetic_scene(&spec).unwrap();
        assert_eq!((scene.width(), scene.height()), (48, 36));
        assert_eq!(scene.set_b()[0].width(), 24);
        assert_eq!(scene.set_c().unwrap()[1].height(), 6);
        assert_eq!(scene.set_c().unwrap()[1].gsd(), 60);
        assert_eq!(scene, synthetic_scene(&spec).unwrap());
        assert_ne!(scene, synthetic_scene(&SyntheticSpec { seed: 5, ..spec }).unwrap());
        assert!(synthetic_scene(&SyntheticSpec::new(40, 36, true, 4)).is_err());
    }

    #[test]
    fn values_in_reflectance_range() {
        let scene = synthetic_scene(&SyntheticSpec::new(64, 64, false, 1)).unwrap();
        for b in scene.bands() {
            let (lo, hi) = b.data().iter().fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
            assert!(lo >= 1.0 && hi < 6000.0, "{} spans {lo}..{hi}", b.band());
            assert!(hi - lo > 100.0, "{} is nearly flat", b.band());
        }
    }
}
