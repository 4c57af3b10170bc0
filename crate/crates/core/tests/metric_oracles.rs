//! Metrics against direct textbook implementations, plus their invariants.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s2sr_core::metrics::{evaluate, rmse, sam, sam_bands, sre, uiq, Sre};
use s2sr_core::{BandId, BandImage, Tensor};

fn band(id: BandId, w: usize, h: usize, data: Vec<f32>) -> BandImage {
    BandImage::new(id, 20, w, h, data).unwrap()
}

fn random_pair(rng: &mut ChaCha8Rng) -> (BandImage, BandImage) {
    let (w, h) = (rng.gen_range(8..=16), rng.gen_range(8..=16));
    let truth: Vec<f32> = (0..w * h).map(|_| rng.gen_range(50.0..6000.0)).collect();
    let noise = rng.gen_range(1.0..300.0);
    let pred = truth.iter().map(|&t| t + rng.gen_range(-noise..noise)).collect();
    (band(BandId::B6, w, h, pred), band(BandId::B6, w, h, truth))
}

fn oracle_rmse(p: &[f32], t: &[f32]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        s += (p[i] as f64 - t[i] as f64).powi(2);
    }
    (s / p.len() as f64).sqrt()
}

fn oracle_sre(p: &[f32], t: &[f32]) -> f64 {
    let mu = t.iter().map(|&v| v as f64).sum::<f64>() / t.len() as f64;
    let mse = oracle_rmse(p, t).powi(2);
    10.0 * (mu * mu / mse).log10()
}

/// Mean Q over all 8x8 windows, Q = 4 s_xy m_x m_y / ((s_x^2 + s_y^2)(m_x^2 + m_y^2)),
/// with unbiased (n - 1) moments.
fn oracle_uiq(p: &BandImage, t: &BandImage) -> f64 {
    let (w, h) = (t.width(), t.height());
    let mut qs = Vec::new();
    for y0 in 0..=h - 8 {
        for x0 in 0..=w - 8 {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for y in y0..y0 + 8 {
                for x in x0..x0 + 8 {
                    xs.push(p.get(x, y) as f64);
                    ys.push(t.get(x, y) as f64);
                }
            }
            let n = 64.0;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let sxx = xs.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / (n - 1.0);
            let syy = ys.iter().map(|b| (b - my).powi(2)).sum::<f64>() / (n - 1.0);
            let sxy = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0);
            if sxx == 0.0 || syy == 0.0 {
                continue;
            }
            qs.push(4.0 * sxy * mx * my / ((sxx + syy) * (mx * mx + my * my)));
        }
    }
    qs.iter().sum::<f64>() / qs.len() as f64
}

fn oracle_sam_deg(p: &[Vec<f64>], t: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (u, v) in p.iter().zip(t) {
        let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        total += (dot / (nu * nv)).clamp(-1.0, 1.0).acos().to_degrees();
    }
    total / p.len() as f64
}

#[test]
fn scalar_metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..50 {
        let (p, t) = random_pair(&mut rng);
        let r = rmse(&p, &t).unwrap();
        assert!((r - oracle_rmse(p.data(), t.data())).abs() <= 1e-9 * r.max(1.0));
        let Sre::Db(s) = sre(&p, &t).unwrap() else { panic!("finite SRE expected") };
        assert!((s - oracle_sre(p.data(), t.data())).abs() <= 1e-9);
        assert!((uiq(&p, &t).unwrap() - oracle_uiq(&p, &t)).abs() <= 1e-9);
    }
}

#[test]
fn sam_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..50 {
        let (w, h, c) = (rng.gen_range(8..=16), rng.gen_range(8..=16), rng.gen_range(2..=6));
        let px: Vec<Vec<f64>> = (0..w * h).map(|_| (0..c).map(|_| rng.gen_range(1.0..5000.0)).collect()).collect();
        let tx: Vec<Vec<f64>> = (0..w * h).map(|_| (0..c).map(|_| rng.gen_range(1.0..5000.0)).collect()).collect();
        let flat = |v: &[Vec<f64>]| Tensor::from_vec(h, w, c, v.concat()).unwrap();
        let got = sam(&flat(&px), &flat(&tx)).unwrap();
        assert_eq!(got.excluded, 0);
        assert!((got.degrees.unwrap() - oracle_sam_deg(&px, &tx)).abs() <= 1e-6);
    }
}

#[test]
fn sre_closed_form() {
    let truth = band(BandId::B5, 2, 2, vec![100.0; 4]);
    let pred = band(BandId::B5, 2, 2, vec![101.0, 99.0, 99.0, 101.0]);
    assert_eq!(sre(&pred, &truth).unwrap(), Sre::Db(40.0));
}

#[test]
fn sre_falls_as_noise_grows() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth: Vec<f32> = (0..256).map(|_| rng.gen_range(500.0..3000.0)).collect();
    let t = band(BandId::B7, 16, 16, truth.clone());
    let mut last = f64::INFINITY;
    for amp in [1.0f32, 4.0, 16.0, 64.0, 256.0] {
        // Averaged over seeds; the ordering holds in expectation.
        let mut mean = 0.0;
        for seed in 0..20 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let p = band(BandId::B7, 16, 16, truth.iter().map(|&v| v + amp * r.gen_range(-1.0f32..1.0)).collect());
            mean += sre(&p, &t).unwrap().db().unwrap() / 20.0;
        }
        assert!(mean < last, "amplitude {amp}: {mean} dB is not below {last}");
        last = mean;
    }
}

#[test]
fn evaluate_means_are_unweighted() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ids = [BandId::B5, BandId::B6, BandId::B7];
    let (mut preds, mut truths) = (Vec::new(), Vec::new());
    for id in ids {
        let t: Vec<f32> = (0..144).map(|_| rng.gen_range(100.0..900.0)).collect();
        let p = t.iter().map(|&v| v + rng.gen_range(-20.0..20.0)).collect();
        preds.push(band(id, 12, 12, p));
        truths.push(band(id, 12, 12, t));
    }
    let r = evaluate(&preds, &truths).unwrap();
    let mean = r.bands.iter().map(|b| b.rmse).sum::<f64>() / 3.0;
    assert_eq!(r.mean_rmse, mean);
    assert_eq!(r.sam, Some(sam_bands(&preds, &truths).unwrap()));
    assert_eq!(r.sre_perfect, 0);
}

fn image_strategy() -> impl Strategy<Value = (usize, usize, Vec<f32>, Vec<f32>, Vec<f32>)> {
    (8usize..13, 8usize..13).prop_flat_map(|(w, h)| {
        let v = || prop::collection::vec(1.0f32..5000.0, w * h);
        (Just(w), Just(h), v(), v(), v())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rmse_triangle_inequality((w, h, a, b, c) in image_strategy()) {
        let (a, b, c) = (band(BandId::B5, w, h, a), band(BandId::B5, w, h, b), band(BandId::B5, w, h, c));
        let ab = rmse(&a, &b).unwrap();
        prop_assert!(ab <= rmse(&a, &c).unwrap() + rmse(&c, &b).unwrap() + 1e-9);
    }

    #[test]
    fn sam_ignores_per_pixel_scaling(
        (w, h, a, b, scale) in image_strategy(),
        which in any::<bool>(),
    ) {
        // Two-band spectra on an (w / 2) x h grid.
        let (c, pw) = (2, w / 2);
        let px = Tensor::from_vec(h, pw, c, a[..h * pw * c].to_vec()).unwrap();
        let tx = Tensor::from_vec(h, pw, c, b[..h * pw * c].to_vec()).unwrap();
        let mut scaled = if which { px.clone() } else { tx.clone() };
        for (i, v) in scaled.data_mut().iter_mut().enumerate() {
            *v *= scale[i / c] / 1000.0;
        }
        let base = sam(&px, &tx).unwrap().degrees.unwrap();
        let moved = if which { sam(&scaled, &tx) } else { sam(&px, &scaled) }.unwrap().degrees.unwrap();
        prop_assert!((base - moved).abs() < 1e-4, "{base} vs {moved}");
    }
}
