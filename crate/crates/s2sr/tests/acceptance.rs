//! Acceptance suite. Prints one line per criterion and exits non-zero when
//! any of them fails.
//!
//! Criterion numbers given on the command line restrict the run, for
//! example `cargo test -p s2sr --test acceptance -- 7 8`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Output};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use s2sr::raster::write_scene;
use s2sr_core::infer::{superresolve, TilingSpec};
use s2sr_core::metrics::{rmse, sam, sre, uiq, Sre};
use s2sr_core::network::{
    backward, forward_prepared, forward_with_cache, init_he_uniform, param_count, InitScheme, NetworkConfig,
    NetworkWeights,
};
use s2sr_core::resample::{
    area_downsample, bicubic_upsample, bilinear_upsample, gaussian_blur, mtf_to_sigma, simulate_scene, DegradationSpec,
};
use s2sr_core::synthetic::{synthetic_scene, SyntheticSpec};
use s2sr_core::train::{sample_patches, split_train_val, train, EpochRecord, TrainConfig};
use s2sr_core::{BandId, BandImage, MultiResScene, Tensor};

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-10 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

fn l1(pred: &Tensor<f64>, target: &Tensor<f64>) -> f64 {
    pred.data().iter().zip(target.data()).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.data().len() as f64
}

fn gradient_exactness() -> Outcome {
    const EPS: f64 = 1e-3;
    let config = NetworkConfig::t2x(2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut weights = init_he_uniform(&config, 1).cast::<f64>();
    // A step of 1e-3 moves ReLU inputs by up to a few 1e-3, and random He
    // weights put hundreds of them within that distance of zero, where the
    // difference quotient straddles a kink. The convolutions feeding a ReLU
    // (the head and the first one of each block) therefore get small kernels
    // and biases of +-0.2..0.5, so every ReLU input stays clear of zero and
    // both the active and the inactive branch are exercised.
    let last = config.layer_count() - 1;
    for (k, conv) in weights.convs_mut().enumerate() {
        let feeds_relu = k == 0 || (k < last && k % 2 == 1);
        if feeds_relu {
            conv.kernel_mut().iter_mut().for_each(|w| *w *= 0.02);
        }
        for (c, b) in conv.bias_mut().iter_mut().enumerate() {
            *b = if !feeds_relu {
                rng.gen_range(-0.1..0.1)
            } else if c % 2 == 0 {
                rng.gen_range(0.2..0.5)
            } else {
                -rng.gen_range(0.2..0.5)
            };
        }
    }
    let x0 = Tensor::from_vec(8, 8, 10, (0..640).map(|_| rng.gen_range(0.0..1.5)).collect()).unwrap();
    let (pred, cache) = forward_with_cache(&config, &weights, &x0).unwrap();
    // Keep every residual at least 0.5 from zero so no perturbation crosses
    // the kink of the absolute value.
    let offsets: Vec<f64> =
        pred.data().iter().map(|&v| v + if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * rng.gen_range(0.5..1.0)).collect();
    let target = Tensor::from_vec(8, 8, 6, offsets).unwrap();
    let n = pred.data().len() as f64;
    let g = pred.data().iter().zip(target.data()).map(|(p, t)| (p - t).signum() / n).collect();
    let (grads, _) = backward(&config, &weights, &cache, &Tensor::from_vec(8, 8, 6, g).unwrap()).unwrap();

    let loss_at = |w: &NetworkWeights<f64>| l1(&forward_prepared(&config, w, &x0).unwrap(), &target);
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for b in 0..weights.buffers().count() {
        for i in 0..weights.buffers().nth(b).unwrap().len() {
            let mut plus = weights.clone();
            plus.buffers_mut().nth(b).unwrap()[i] += EPS;
            let mut minus = weights.clone();
            minus.buffers_mut().nth(b).unwrap()[i] -= EPS;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * EPS);
            worst = worst.max(rel_err(grads.buffers().nth(b).unwrap()[i], numeric));
            checked += 1;
        }
    }
    outcome(worst < 1e-4, format!("{checked} parameters, max relative error {worst:.2e} (limit 1e-4)"))
}

fn parameter_counts() -> Outcome {
    let deep = NetworkConfig::t2x(6, 128);
    let very_deep = NetworkConfig::t2x(32, 256);
    let got = (param_count(&deep), deep.layer_count(), param_count(&very_deep), very_deep.layer_count());
    outcome(
        got == (1_789_574, 14, 37_802_246, 66),
        format!("d6/f128: {} weights, {} layers; d32/f256: {} weights, {} layers", got.0, got.1, got.2, got.3),
    )
}

fn tiling(tile: usize) -> TilingSpec {
    TilingSpec { tile, ..TilingSpec::default() }
}

fn scene(size: usize, with_c: bool, seed: u64) -> MultiResScene {
    synthetic_scene(&SyntheticSpec::new(size, size, with_c, seed)).unwrap()
}

fn skip_identity() -> Outcome {
    let s = scene(96, true, 4);
    let mut pass = true;
    let mut runs = 0;
    for (config, bands) in [(NetworkConfig::t2x(2, 8), s.set_b()), (NetworkConfig::s6x(2, 8), s.set_c().unwrap())] {
        let ratio = config.scale;
        let expected: Vec<BandImage> = bands.iter().map(|b| bilinear_upsample(b, ratio).unwrap()).collect();
        for tile in [512, 48] {
            let out = superresolve(&s, &config, &NetworkWeights::zeros(&config), &tiling(tile)).unwrap();
            pass &= out == expected;
            runs += 1;
        }
    }
    outcome(pass, format!("{runs} runs (2x and 6x, untiled and tile 48) compared bit for bit"))
}

fn tiled_equals_untiled() -> Outcome {
    let s = scene(96, false, 8);
    // One block keeps the receptive field inside the two-pixel overlap.
    let config = NetworkConfig::t2x(1, 16);
    let mut weights = init_he_uniform(&config, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for conv in weights.convs_mut() {
        for b in conv.bias_mut() {
            *b = rng.gen_range(-0.1..0.1);
        }
    }
    let whole = superresolve(&s, &config, &weights, &tiling(512)).unwrap();
    let tiled = superresolve(&s, &config, &weights, &tiling(64)).unwrap();
    let worst = whole
        .iter()
        .zip(&tiled)
        .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() / 2000.0))
        .fold(0.0f32, f32::max);
    outcome(worst <= 1e-4, format!("max abs difference {worst:.2e} in scaled units (limit 1e-4)"))
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut d_rmse, mut d_sre, mut d_uiq, mut d_sam) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let (w, h) = (rng.gen_range(8..=16), rng.gen_range(8..=16));
        let truth: Vec<f64> = (0..w * h).map(|_| rng.gen_range(50.0..6000.0)).collect();
        let noise = rng.gen_range(1.0..300.0);
        let pred: Vec<f64> = truth.iter().map(|&t| t + rng.gen_range(-noise..noise)).collect();
        let (truth, pred): (Vec<f32>, Vec<f32>) =
            (truth.iter().map(|&v| v as f32).collect(), pred.iter().map(|&v| v as f32).collect());
        let tb = BandImage::new(BandId::B6, 20, w, h, truth.clone()).unwrap();
        let pb = BandImage::new(BandId::B6, 20, w, h, pred.clone()).unwrap();

        let npx = (w * h) as f64;
        let mse = pred.iter().zip(&truth).map(|(&p, &t)| (p as f64 - t as f64).powi(2)).sum::<f64>() / npx;
        let r = rmse(&pb, &tb).unwrap();
        d_rmse = d_rmse.max((r - mse.sqrt()).abs());
        let mu = truth.iter().map(|&v| v as f64).sum::<f64>() / npx;
        let Sre::Db(s) = sre(&pb, &tb).unwrap() else { return outcome(false, "unexpected perfect SRE") };
        d_sre = d_sre.max((s - 10.0 * (mu * mu / mse).log10()).abs());

        let mut qs = Vec::new();
        for y0 in 0..=h - 8 {
            for x0 in 0..=w - 8 {
                let (mut xs, mut ys) = (Vec::new(), Vec::new());
                for y in y0..y0 + 8 {
                    for x in x0..x0 + 8 {
                        xs.push(pred[y * w + x] as f64);
                        ys.push(truth[y * w + x] as f64);
                    }
                }
                let mx = xs.iter().sum::<f64>() / 64.0;
                let my = ys.iter().sum::<f64>() / 64.0;
                let sxx = xs.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / 63.0;
                let syy = ys.iter().map(|b| (b - my).powi(2)).sum::<f64>() / 63.0;
                let sxy = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / 63.0;
                qs.push(4.0 * sxy * mx * my / ((sxx + syy) * (mx * mx + my * my)));
            }
        }
        d_uiq = d_uiq.max((uiq(&pb, &tb).unwrap() - qs.iter().sum::<f64>() / qs.len() as f64).abs());

        let c = rng.gen_range(2..=6);
        let pv: Vec<f64> = (0..w * h * c).map(|_| rng.gen_range(1.0..5000.0)).collect();
        let tv: Vec<f64> = (0..w * h * c).map(|_| rng.gen_range(1.0..5000.0)).collect();
        let mut total = 0.0;
        for (u, v) in pv.chunks(c).zip(tv.chunks(c)) {
            let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            total += (dot / (nu * nv)).clamp(-1.0, 1.0).acos().to_degrees();
        }
        let got = sam(&Tensor::from_vec(h, w, c, pv).unwrap(), &Tensor::from_vec(h, w, c, tv).unwrap()).unwrap();
        d_sam = d_sam.max((got.degrees.unwrap_or(f64::NAN) - total / npx).abs());
    }
    let truth = BandImage::new(BandId::B5, 20, 2, 2, vec![100.0; 4]).unwrap();
    let pred = BandImage::new(BandId::B5, 20, 2, 2, vec![101.0, 99.0, 99.0, 101.0]).unwrap();
    let spot = sre(&pred, &truth).unwrap();
    // RMSE is compared relative to its magnitude, which stays below 300.
    let pass = d_rmse <= 1e-9 * 300.0 && d_sre <= 1e-9 && d_uiq <= 1e-9 && d_sam <= 1e-6 && spot == Sre::Db(40.0);
    outcome(
        pass,
        format!(
            "50 instances: rmse {d_rmse:.1e}, sre {d_sre:.1e} dB, uiq {d_uiq:.1e}, sam {d_sam:.1e} deg; spot check {:?} dB",
            spot.db()
        ),
    )
}

fn degradation_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut exact = true;
    for _ in 0..20 {
        let data: Vec<f32> = (0..144).map(|_| rng.gen_range(0.0..10000.0)).collect();
        let out = area_downsample(&BandImage::new(BandId::B2, 10, 12, 12, data.clone()).unwrap(), 6).unwrap();
        for by in 0..2 {
            for bx in 0..2 {
                let s: f64 = (0..36).map(|k| data[(by * 6 + k / 6) * 12 + bx * 6 + k % 6] as f64).sum();
                exact &= out.get(bx, by) == (s / 36.0) as f32;
            }
        }
    }
    let mut constant = true;
    for &(v, sigma) in &[(1234.5f32, 0.44), (7.0, 1.0), (9999.0, 3.0), (0.1, 0.55)] {
        let b = BandImage::constant(BandId::B5, 20, 17, 13, v).unwrap();
        constant &= gaussian_blur(&b, sigma).unwrap().data().iter().all(|&x| x == v);
    }
    let (s1, s2) = (mtf_to_sigma(0.3849).unwrap(), mtf_to_sigma(0.2247).unwrap());
    let psf = (s1 - 0.44).abs() < 0.005 && (s2 - 0.55).abs() < 0.005;
    outcome(
        exact && constant && psf,
        format!("block means exact: {exact}; constants preserved: {constant}; psf {s1:.4} and {s2:.4}"),
    )
}

fn memorization() -> Outcome {
    let s = scene(128, false, 11);
    let pair = simulate_scene(&s, &DegradationSpec::new(2, None).unwrap()).unwrap();
    let set = sample_patches(&pair.input, &pair.targets, 10, 32, 12).unwrap();
    let config = NetworkConfig::t2x(1, 8);
    let tc = TrainConfig {
        batch_size: 2,
        lr0: 1e-3,
        max_epochs: 200,
        min_lr: 1e-3 / 4096.0,
        plateau_patience: 10,
        seed: 13,
        ..TrainConfig::default()
    };
    let (_, history) = match train(&config, &tc, &set, &set) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let first = history.records[1].train_loss;
    let last: &EpochRecord = history.records.last().unwrap();
    let ratio = last.train_loss / first;
    outcome(
        history.records.len() == 201 && ratio < 0.1,
        format!(
            "{} epochs, epoch-1 loss {first:.3e}, final loss {:.3e} ({:.1}% of epoch 1, limit 10%)",
            history.records.len() - 1,
            last.train_loss,
            100.0 * ratio
        ),
    )
}

/// Trains the desk-scale d=4, f=32 network on the left three quarters of
/// a simulated pair.
fn train_desk_scale(pair: &MultiResScene, targets: &[BandImage]) -> (NetworkConfig, NetworkWeights<f32>) {
    let cut = pair.width() * 3 / 4;
    let input = pair.crop(0, 0, cut, pair.height()).unwrap();
    let targets: Vec<BandImage> = targets.iter().map(|t| t.crop(0, 0, cut, t.height()).unwrap()).collect();
    let set = sample_patches(&input, &targets, 500, 32, 1).unwrap();
    let (tr, va) = split_train_val(&set, 0.9, 2).unwrap();
    let config = NetworkConfig::t2x(4, 32);
    let tc = TrainConfig {
        batch_size: 16,
        lr0: 1e-4,
        max_epochs: 10,
        seed: 3,
        init: InitScheme::ZeroLast,
        ..TrainConfig::default()
    };
    let (weights, _) = train(&config, &tc, &tr, &va).unwrap();
    (config, weights)
}

/// Per-band RMSE of the network and of bicubic upsampling on the right
/// quarter of a 2x simulated pair.
fn held_out_rmse(
    input: &MultiResScene,
    targets: &[BandImage],
    config: &NetworkConfig,
    weights: &NetworkWeights<f32>,
) -> Vec<(BandId, f64, f64)> {
    let cut = input.width() * 3 / 4;
    let w = input.width() - cut;
    let held = input.crop(cut, 0, w, input.height()).unwrap();
    let truth: Vec<BandImage> = targets.iter().map(|t| t.crop(cut, 0, w, t.height()).unwrap()).collect();
    let pred = superresolve(&held, config, weights, &TilingSpec::default()).unwrap();
    truth
        .iter()
        .zip(&pred)
        .zip(held.set_b())
        .map(|((t, p), b)| (t.band(), rmse(p, t).unwrap(), rmse(&bicubic_upsample(b, 2).unwrap(), t).unwrap()))
        .collect()
}

fn render_rows(rows: &[(BandId, f64, f64)]) -> String {
    rows.iter().map(|(b, net, cubic)| format!("{b} {net:.2}/{cubic:.2}")).collect::<Vec<_>>().join(", ")
}

fn beats_bicubic(truth_scene: &MultiResScene) -> Outcome {
    let pair = simulate_scene(truth_scene, &DegradationSpec::new(2, None).unwrap()).unwrap();
    let (config, weights) = train_desk_scale(&pair.input, &pair.targets);
    let rows = held_out_rmse(&pair.input, &pair.targets, &config, &weights);
    let wins = rows.iter().filter(|(_, net, cubic)| net < cubic).count();
    outcome(wins == rows.len(), format!("network/bicubic RMSE: {}; {wins} of {} bands", render_rows(&rows), rows.len()))
}

fn scale_invariance(truth_scene: &MultiResScene) -> Outcome {
    let coarse = simulate_scene(truth_scene, &DegradationSpec::new(4, None).unwrap()).unwrap();
    let (config, weights) = train_desk_scale(&coarse.input, &coarse.targets);
    let pair = simulate_scene(truth_scene, &DegradationSpec::new(2, None).unwrap()).unwrap();
    let rows = held_out_rmse(&pair.input, &pair.targets, &config, &weights);
    let wins = rows.iter().filter(|(_, net, cubic)| net < cubic).count();
    outcome(
        2 * wins > rows.len(),
        format!(
            "trained at 4x, evaluated at 2x, network/bicubic RMSE: {}; {wins} of {} bands",
            render_rows(&rows),
            rows.len()
        ),
    )
}

fn s2sr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s2sr"))
        .current_dir(dir)
        .env_remove("S2SR_THREADS")
        .arg("--threads")
        .arg("1")
        .args(args)
        .output()
        .expect("spawn s2sr")
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let steps: &[(&str, &[&str])] = &[
        ("simulate", &["simulate", "--scene", "scene/scene.manifest", "--scale", "2", "--out", "sim"]),
        (
            "make-patches",
            &[
                "make-patches",
                "--scene",
                "sim/input/scene.manifest",
                "--targets",
                "sim/targets/targets.manifest",
                "--count",
                "24",
                "--patch-size",
                "16",
                "--seed",
                "3",
                "--out",
                "patches.bin",
            ],
        ),
        (
            "train",
            &[
                "train",
                "--patches",
                "patches.bin",
                "--d",
                "1",
                "--f",
                "8",
                "--scale",
                "2",
                "--epochs",
                "3",
                "--seed",
                "4",
                "--batch-size",
                "8",
                "--out-ckpt",
                "net.ckpt",
            ],
        ),
        (
            "superres",
            &["superres", "--scene", "sim/input/scene.manifest", "--ckpt2x", "net.ckpt", "--tile", "32", "--out", "sr"],
        ),
        (
            "evaluate",
            &[
                "evaluate",
                "--pred",
                "sr/superres.manifest",
                "--truth",
                "sim/targets/targets.manifest",
                "--out-report",
                "report.txt",
            ],
        ),
        ("info", &["info", "net.ckpt"]),
    ];
    let root = tempfile::tempdir().unwrap();
    let runs = [root.path().join("a"), root.path().join("b")];
    let s = scene(96, false, 21);
    for dir in &runs {
        write_scene(&s, &dir.join("scene")).unwrap();
    }
    let mut mismatched = Vec::new();
    for (name, args) in steps {
        let outs: Vec<Output> = runs.iter().map(|d| s2sr(d, args)).collect();
        if let Some(bad) = outs.iter().find(|o| !o.status.success()) {
            return outcome(false, format!("{name} failed: {}", String::from_utf8_lossy(&bad.stderr)));
        }
        // Timing lines on stderr are expected to differ; stdout and files must not.
        if outs[0].stdout != outs[1].stdout || snapshot(&runs[0]) != snapshot(&runs[1]) {
            mismatched.push(*name);
        }
    }
    let files = snapshot(&runs[0]).len();
    if mismatched.is_empty() {
        outcome(true, format!("{} subcommands rerun, {files} artifacts and stdout byte-identical", steps.len()))
    } else {
        outcome(false, format!("differing output after: {}", mismatched.join(", ")))
    }
}

fn main() -> ExitCode {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let desk_scene = std::sync::OnceLock::new();
    let desk = || desk_scene.get_or_init(|| scene(512, false, 7)).clone();
    let criteria: Vec<(usize, &str, Check<'_>)> = vec![
        (1, "gradient exactness", Box::new(gradient_exactness)),
        (2, "parameter counts", Box::new(parameter_counts)),
        (3, "skip-connection identity", Box::new(skip_identity)),
        (4, "tiled equals untiled", Box::new(tiled_equals_untiled)),
        (5, "metric oracles", Box::new(metric_oracles)),
        (6, "degradation model", Box::new(degradation_properties)),
        (7, "memorization", Box::new(memorization)),
        (8, "beats bicubic", Box::new(move || beats_bicubic(&desk()))),
        (9, "scale invariance", Box::new(move || scale_invariance(&desk()))),
        (10, "determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (n, name, check) in &criteria {
        if !run(*n) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {verdict}  {name}: {} [{:.1} s]", result.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!result.pass);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
