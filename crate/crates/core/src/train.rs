//! Patch sampling, the L1 objective, the Nadam optimizer, the plateau
//! learning-rate schedule and the epoch loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::band::{crop_plane, BandImage, MultiResScene, SET_B, SET_C};
use crate::error::{Error, Result};
use crate::network::{
    backward_into, forward_prepared, forward_with_cache, init_weights, prepare_input, InitScheme, NetworkConfig,
    NetworkWeights, Variant,
};
use crate::real::Real;
use crate::tensor::Tensor;

/// Co-located training samples in native reflectance units.
///
/// Sample `i` consists of `inputs_a[i]` (`p x p x 4`), `inputs_b[i]`
/// (`p/2 x p/2 x 6`), for the 6x network `inputs_c[i]` (`p/6 x p/6 x 2`), and
/// the ground truth `targets[i]` (`p x p x` 6 or 2).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    patch_size: usize,
    inputs_a: Vec<Tensor<f32>>,
    inputs_b: Vec<Tensor<f32>>,
    inputs_c: Option<Vec<Tensor<f32>>>,
    targets: Vec<Tensor<f32>>,
}

fn check_patch(what: &str, t: &Tensor<f32>, side: usize, channels: usize) -> Result<()> {
    if t.shape() != (side, side, channels) {
        return Err(Error::ShapeMismatch(format!(
            "{what} patch is {:?}, expected {side}x{side}x{channels}",
            t.shape()
        )));
    }
    Ok(())
}

impl PatchSet {
    pub fn new(
        patch_size: usize,
        inputs_a: Vec<Tensor<f32>>,
        inputs_b: Vec<Tensor<f32>>,
        inputs_c: Option<Vec<Tensor<f32>>>,
        targets: Vec<Tensor<f32>>,
    ) -> Result<Self> {
        let variant = if inputs_c.is_some() { Variant::S6x } else { Variant::T2x };
        let unit = variant.scale();
        if patch_size == 0 || !patch_size.is_multiple_of(unit) {
            return Err(Error::InvalidConfig(format!("patch size {patch_size} is not a multiple of {unit}")));
        }
        let n = inputs_a.len();
        let lengths_agree = inputs_b.len() == n && targets.len() == n && inputs_c.as_ref().is_none_or(|c| c.len() == n);
        if !lengths_agree {
            return Err(Error::ShapeMismatch("patch arrays differ in length".into()));
        }
        for i in 0..n {
            check_patch("A", &inputs_a[i], patch_size, 4)?;
            check_patch("B", &inputs_b[i], patch_size / 2, 6)?;
            if let Some(c) = &inputs_c {
                check_patch("C", &c[i], patch_size / 6, 2)?;
            }
            check_patch("target", &targets[i], patch_size, variant.output_channels())?;
        }
        Ok(PatchSet { patch_size, inputs_a, inputs_b, inputs_c, targets })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }
    pub fn len(&self) -> usize {
        self.targets.len()
    }
    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
    /// The network variant these samples train.
    pub fn variant(&self) -> Variant {
        if self.inputs_c.is_some() {
            Variant::S6x
        } else {
            Variant::T2x
        }
    }
    pub fn inputs_a(&self) -> &[Tensor<f32>] {
        &self.inputs_a
    }
    pub fn inputs_b(&self) -> &[Tensor<f32>] {
        &self.inputs_b
    }
    pub fn inputs_c(&self) -> Option<&[Tensor<f32>]> {
        self.inputs_c.as_deref()
    }
    pub fn targets(&self) -> &[Tensor<f32>] {
        &self.targets
    }

    /// Samples at the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> PatchSet {
        let pick = |v: &[Tensor<f32>]| indices.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        PatchSet {
            patch_size: self.patch_size,
            inputs_a: pick(&self.inputs_a),
            inputs_b: pick(&self.inputs_b),
            inputs_c: self.inputs_c.as_deref().map(pick),
            targets: pick(&self.targets),
        }
    }

    /// Stacked network input for sample `i`, divided by `scale`.
    fn prepared(&self, config: &NetworkConfig, i: usize, scale: f32) -> Result<Tensor<f32>> {
        let a = self.inputs_a[i].map(|v| v / scale);
        let b = self.inputs_b[i].map(|v| v / scale);
        let c = self.inputs_c.as_ref().map(|c| c[i].map(|v| v / scale));
        prepare_input(config, &a, &b, c.as_ref())
    }

    fn check_against(&self, config: &NetworkConfig) -> Result<()> {
        if self.variant() != config.variant()? {
            return Err(Error::ShapeMismatch(format!(
                "{:?} patches cannot train a {:?} network",
                self.variant(),
                config.variant()?
            )));
        }
        Ok(())
    }
}

fn stack(bands: &[BandImage], ratio: usize, x0: usize, y0: usize, side: usize) -> Tensor<f32> {
    let planes: Vec<Vec<f32>> = bands
        .iter()
        .map(|b| crop_plane(b.data(), b.width(), x0 / ratio, y0 / ratio, side / ratio, side / ratio))
        .collect();
    Tensor::from_planes(side / ratio, side / ratio, &planes).expect("patch geometry")
}

/// Draws `n` patches at uniformly random positions from a degraded scene and
/// the ground truth bands on its finest grid.
///
/// Six target bands select the 2x variant, two select the 6x variant. Patch
/// corners are aligned to the coarsest input grid used by that variant.
pub fn sample_patches(
    input: &MultiResScene,
    targets: &[BandImage],
    n: usize,
    patch_size: usize,
    seed: u64,
) -> Result<PatchSet> {
    let ids: Vec<_> = targets.iter().map(|t| t.band()).collect();
    let variant = if ids == SET_B {
        Variant::T2x
    } else if ids == SET_C {
        Variant::S6x
    } else {
        return Err(Error::BandMismatch(format!("targets {ids:?} are neither the 20 m nor the 60 m set")));
    };
    let (w, h) = (input.width(), input.height());
    if let Some(t) = targets.iter().find(|t| t.width() != w || t.height() != h) {
        return Err(Error::DimensionMismatch(format!(
            "target {} is {}x{}, the finest input grid is {w}x{h}",
            t.band(),
            t.width(),
            t.height()
        )));
    }
    let set_c = match variant {
        Variant::S6x => Some(input.set_c().ok_or(Error::MissingInput("y_c"))?),
        Variant::T2x => None,
    };
    let unit = variant.scale();
    if n == 0 {
        return Err(Error::InvalidConfig("at least one patch must be requested".into()));
    }
    if patch_size == 0 || !patch_size.is_multiple_of(unit) {
        return Err(Error::InvalidConfig(format!("patch size {patch_size} is not a multiple of {unit}")));
    }
    if patch_size > w || patch_size > h {
        return Err(Error::PatchTooLarge { patch: patch_size, width: w, height: h });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (max_x, max_y) = ((w - patch_size) / unit, (h - patch_size) / unit);
    let mut set = PatchSet {
        patch_size,
        inputs_a: Vec::with_capacity(n),
        inputs_b: Vec::with_capacity(n),
        inputs_c: set_c.map(|_| Vec::with_capacity(n)),
        targets: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let x0 = rng.gen_range(0..=max_x) * unit;
        let y0 = rng.gen_range(0..=max_y) * unit;
        set.inputs_a.push(stack(input.set_a(), 1, x0, y0, patch_size));
        set.inputs_b.push(stack(input.set_b(), 2, x0, y0, patch_size));
        if let (Some(c), Some(dst)) = (set_c, set.inputs_c.as_mut()) {
            dst.push(stack(c, 6, x0, y0, patch_size));
        }
        set.targets.push(stack(targets, 1, x0, y0, patch_size));
    }
    Ok(set)
}

/// Seeded shuffle split into `round(fraction * n)` training samples and the
/// remainder. Both parts are kept non-empty.
pub fn split_train_val(patches: &PatchSet, fraction: f64, seed: u64) -> Result<(PatchSet, PatchSet)> {
    let n = patches.len();
    if n < 2 {
        return Err(Error::TooFewPatches(n));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (Float::round(fraction * n as f64) as usize).clamp(1, n - 1);
    Ok((patches.select(&order[..n_train]), patches.select(&order[n_train..])))
}

/// Mean absolute error and its gradient `sign(pred - target) / n`, with
/// `sign(0) = 0`.
pub fn l1_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    let n = pred.data().len();
    let inv = T::from_f64(1.0 / n as f64);
    let mut sum = 0.0f64;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            sum += d.abs().as_f64();
            sign(d) * inv
        })
        .collect();
    let (h, w, c) = pred.shape();
    Ok((sum / n as f64, Tensor::from_vec(h, w, c, grad)?))
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Nadam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NadamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule_decay: f64,
}

impl Default for NadamParams {
    fn default() -> Self {
        NadamParams { beta1: 0.9, beta2: 0.999, epsilon: 1e-8, schedule_decay: 0.004 }
    }
}

/// First and second moments, step counter and the running product of the
/// momentum schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct NadamState {
    pub params: NadamParams,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub m_schedule: f64,
}

impl NadamState {
    pub fn new(len: usize, params: NadamParams) -> Self {
        NadamState { params, m: vec![0.0; len], v: vec![0.0; len], t: 0, m_schedule: 1.0 }
    }

    pub fn for_config(config: &NetworkConfig) -> Self {
        Self::new(crate::network::param_count(config), NadamParams::default())
    }
}

/// One Nadam update of a flat parameter vector, in the formulation with a
/// warming momentum schedule `mu_t = beta1 * (1 - 0.5 * 0.96^(t * decay))`.
pub fn nadam_update(params: &mut [f64], grads: &[f64], state: &mut NadamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::InvalidConfig(format!("learning rate {lr} must be positive")));
    }
    let NadamParams { beta1, beta2, epsilon, schedule_decay } = state.params;
    state.t += 1;
    let t = state.t as f64;
    let mu_t = beta1 * (1.0 - 0.5 * Float::powf(0.96f64, t * schedule_decay));
    let mu_next = beta1 * (1.0 - 0.5 * Float::powf(0.96f64, (t + 1.0) * schedule_decay));
    let sched = state.m_schedule * mu_t;
    let sched_next = sched * mu_next;
    state.m_schedule = sched;
    let v_correction = 1.0 - Float::powf(beta2, t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        let g_hat = g / (1.0 - sched);
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / (1.0 - sched_next);
        let v_hat = *v / v_correction;
        let m_bar = (1.0 - mu_t) * g_hat + mu_next * m_hat;
        *p -= lr * m_bar / (Float::sqrt(v_hat) + epsilon);
    }
    Ok(())
}

/// [`nadam_update`] over every parameter of a network, in checkpoint order.
pub fn nadam_step(
    weights: &mut NetworkWeights<f64>,
    grads: &NetworkWeights<f64>,
    state: &mut NadamState,
    lr: f64,
) -> Result<()> {
    let flat_w: Vec<f64> = weights.buffers().flatten().copied().collect();
    let flat_g: Vec<f64> = grads.buffers().flatten().copied().collect();
    let mut updated = flat_w;
    nadam_update(&mut updated, &flat_g, state, lr)?;
    let mut it = updated.into_iter();
    for buf in weights.buffers_mut() {
        for (dst, src) in buf.iter_mut().zip(&mut it) {
            *dst = src;
        }
    }
    Ok(())
}

/// Hyperparameters of the epoch loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub plateau_patience: usize,
    pub lr_factor: f64,
    pub value_scale: f64,
    pub max_epochs: usize,
    pub min_lr: f64,
    pub seed: u64,
    pub init: InitScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            lr0: 1e-4,
            plateau_patience: 5,
            lr_factor: 0.5,
            value_scale: 2000.0,
            max_epochs: 100,
            min_lr: 1e-4 / 1024.0,
            seed: 0,
            init: InitScheme::HeUniform,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.batch_size > 0
            && self.lr0 > 0.0
            && self.plateau_patience > 0
            && self.value_scale > 0.0
            && self.min_lr > 0.0;
        if !positive {
            return Err(Error::InvalidConfig("training hyperparameters must be positive".into()));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::InvalidConfig(format!("lr factor {} outside (0, 1)", self.lr_factor)));
        }
        if self.min_lr > self.lr0 {
            return Err(Error::InvalidConfig("min_lr exceeds lr0".into()));
        }
        Ok(())
    }
}

/// One row of the training log. Epoch 0 evaluates the initial weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// Index of the record with the lowest validation loss (first on ties).
    pub fn best(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in self.records.iter().enumerate() {
            if best.is_none_or(|b| r.val_loss < self.records[b].val_loss) {
                best = Some(i);
            }
        }
        best
    }
}

/// Learning rate for the next epoch. The rate is multiplied by `factor` when
/// the best validation loss lies `patience` or more epochs back, counting
/// from the later of the best epoch and the most recent reduction. A
/// reduction is visible in the history as a drop of the recorded rate.
pub fn lr_on_plateau(history: &TrainHistory, patience: usize, factor: f64, current_lr: f64, min_lr: f64) -> f64 {
    let records = &history.records;
    let Some(best) = history.best() else {
        return current_lr;
    };
    let last = records.len() - 1;
    // A drop between rows j - 1 and j was decided after row j - 1.
    let last_reduction = (1..records.len()).rev().find(|&j| records[j].lr < records[j - 1].lr).map(|j| j - 1);
    let anchor = last_reduction.map_or(best, |r| r.max(best));
    if last - anchor >= patience {
        (current_lr * factor).max(min_lr)
    } else {
        current_lr
    }
}

/// Samples per ordered partial gradient sum. Fixing the grouping makes the
/// result independent of how many threads compute the groups.
const CHUNK: usize = 4;

struct Partial {
    loss_sum: f64,
    grads: NetworkWeights<f32>,
}

fn chunk_gradient(
    config: &NetworkConfig,
    weights: &NetworkWeights<f32>,
    set: &PatchSet,
    indices: &[usize],
    scale: f32,
    batch_values: usize,
) -> Result<Partial> {
    let mut grads = NetworkWeights::zeros(config);
    let mut loss_sum = 0.0;
    let inv = 1.0 / batch_values as f32;
    for &i in indices {
        let x0 = set.prepared(config, i, scale)?;
        let target = set.targets[i].map(|v| v / scale);
        let (pred, cache) = forward_with_cache(config, weights, &x0)?;
        let mut grad = pred.clone();
        for (g, (&p, &t)) in grad.data_mut().iter_mut().zip(pred.data().iter().zip(target.data())) {
            let d = p - t;
            loss_sum += d.abs() as f64;
            *g = sign(d) * inv;
        }
        backward_into(config, weights, &cache, &grad, &mut grads, false)?;
    }
    Ok(Partial { loss_sum, grads })
}

fn map_ordered<R: Send>(
    chunks: &[&[usize]],
    f: impl Fn(&[usize]) -> Result<R> + Sync + Send,
    mut reduce: impl FnMut(R),
) -> Result<()> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let width = rayon::current_num_threads().max(1);
        for group in chunks.chunks(width) {
            let results: Vec<Result<R>> = group.par_iter().map(|c| f(c)).collect();
            for r in results {
                reduce(r?);
            }
        }
        Ok(())
    }
    #[cfg(not(feature = "parallel"))]
    {
        for c in chunks {
            reduce(f(c)?);
        }
        Ok(())
    }
}

/// Loss and gradient of the mean absolute error over a batch, in scaled units.
fn batch_gradient(
    config: &NetworkConfig,
    weights: &NetworkWeights<f32>,
    set: &PatchSet,
    batch: &[usize],
    scale: f32,
) -> Result<(f64, NetworkWeights<f64>)> {
    let per_sample = set.patch_size * set.patch_size * config.output_channels;
    let values = per_sample * batch.len();
    let chunks: Vec<&[usize]> = batch.chunks(CHUNK).collect();
    let mut total = NetworkWeights::<f64>::zeros(config);
    let mut loss_sum = 0.0;
    map_ordered(
        &chunks,
        |c| chunk_gradient(config, weights, set, c, scale, values),
        |p| {
            loss_sum += p.loss_sum;
            total.add_assign(&p.grads.cast());
        },
    )?;
    Ok((loss_sum / values as f64, total))
}

/// Mean absolute error of the network over a patch set, in units divided by
/// `value_scale`.
pub fn evaluate_loss(
    config: &NetworkConfig,
    weights: &NetworkWeights<f32>,
    set: &PatchSet,
    value_scale: f64,
) -> Result<f64> {
    set.check_against(config)?;
    if set.is_empty() {
        return Err(Error::InvalidConfig("cannot evaluate an empty patch set".into()));
    }
    let scale = value_scale as f32;
    let indices: Vec<usize> = (0..set.len()).collect();
    let chunks: Vec<&[usize]> = indices.chunks(CHUNK).collect();
    let mut sum = 0.0;
    map_ordered(
        &chunks,
        |c| {
            let mut s = 0.0f64;
            for &i in c {
                let pred = forward_prepared(config, weights, &set.prepared(config, i, scale)?)?;
                for (&p, &t) in pred.data().iter().zip(set.targets[i].data()) {
                    s += (p - t / scale).abs() as f64;
                }
            }
            Ok(s)
        },
        |s| sum += s,
    )?;
    let per_sample = set.patch_size * set.patch_size * config.output_channels;
    Ok(sum / (per_sample * set.len()) as f64)
}

/// Trains from initial weights drawn with `train_config.init` and seeded by
/// `train_config.seed`.
pub fn train(
    net: &NetworkConfig,
    train_config: &TrainConfig,
    train_set: &PatchSet,
    val_set: &PatchSet,
) -> Result<(NetworkWeights<f32>, TrainHistory)> {
    let init = init_weights(net, train_config.seed, train_config.init);
    train_from(net, train_config, init, train_set, val_set, &mut |_| {})
}

/// The epoch loop. `observer` sees each history row as it is produced.
///
/// Epoch 0 evaluates the initial weights on both sets. Each later epoch
/// visits the shuffled training set in batches (the last one may be short),
/// applies one Nadam step per batch, and records the mean batch loss, the
/// validation loss and the rate used. Training stops after `max_epochs`, or
/// when the schedule asks for a reduction while already at `min_lr`. The
/// weights with the lowest validation loss are returned.
pub fn train_from(
    net: &NetworkConfig,
    tc: &TrainConfig,
    init: NetworkWeights<f32>,
    train_set: &PatchSet,
    val_set: &PatchSet,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(NetworkWeights<f32>, TrainHistory)> {
    net.validate()?;
    tc.validate()?;
    init.check(net)?;
    train_set.check_against(net)?;
    val_set.check_against(net)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidConfig("training and validation sets must be non-empty".into()));
    }
    let scale = tc.value_scale as f32;
    let mut master = init.cast::<f64>();
    let mut weights = init;
    let mut state = NadamState::for_config(net);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut lr = tc.lr0;
    let mut history = TrainHistory::default();

    let first = EpochRecord {
        epoch: 0,
        train_loss: evaluate_loss(net, &weights, train_set, tc.value_scale)?,
        val_loss: evaluate_loss(net, &weights, val_set, tc.value_scale)?,
        lr,
    };
    if !first.val_loss.is_finite() || !first.train_loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0, batch: 0 });
    }
    observer(&first);
    history.records.push(first);
    let mut best_weights = weights.clone();
    let mut best_val = first.val_loss;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=tc.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (b, batch) in order.chunks(tc.batch_size).enumerate() {
            let (loss, grads) = batch_gradient(net, &weights, train_set, batch, scale)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            nadam_step(&mut master, &grads, &mut state, lr)?;
            weights = master.cast();
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let val_loss = evaluate_loss(net, &weights, val_set, tc.value_scale)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: seen.div_ceil(tc.batch_size) });
        }
        let record = EpochRecord { epoch, train_loss: loss_sum / seen as f64, val_loss, lr };
        observer(&record);
        history.records.push(record);
        if val_loss < best_val {
            best_val = val_loss;
            best_weights = weights.clone();
        }
        let next = lr_on_plateau(&history, tc.plateau_patience, tc.lr_factor, lr, tc.min_lr);
        if next < lr {
            lr = next;
        } else if lr <= tc.min_lr && next == lr && plateau_triggered(&history, tc.plateau_patience) {
            break;
        }
    }
    Ok((best_weights, history))
}

fn plateau_triggered(history: &TrainHistory, patience: usize) -> bool {
    lr_on_plateau(history, patience, 0.5, 1.0, 0.0) < 1.0
}
