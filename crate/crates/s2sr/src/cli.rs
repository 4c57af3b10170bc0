//! The `s2sr` command line.
//!
//! Exit codes: 0 success, 2 usage (bad flags or flag values), 3 data
//! (unreadable, corrupt or mismatched inputs), 4 internal failure, 5 training
//! diverged to a non-finite loss.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use s2sr_core::infer::{superresolve_observed, PadMode, TileEvent, TilingSpec};
use s2sr_core::network::{init_weights, param_count, InitScheme};
use s2sr_core::resample::{bicubic_upsample, bilinear_upsample, simulate_scene, DegradationSpec, Upsampling};
use s2sr_core::train::{sample_patches, split_train_val, train_from, TrainConfig};
use s2sr_core::{metrics, BandImage, NetworkConfig, Variant};

use crate::checkpoint::{load_weights, save_weights};
use crate::error::{Error, Result};
use crate::patches::{load_patches, save_patches};
use crate::provenance::{sha256_file, sha256_scene, Provenance};
use crate::raster::{read_band_header, read_bands, read_scene, write_bands, Manifest};
use crate::report::{render_history, render_report, render_table};

#[derive(Debug, Parser)]
#[command(name = "s2sr", version, about = "Super-resolution of the 20 m and 60 m Sentinel-2 bands")]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "S2SR_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Degrade a scene by an integer factor and write input/target pairs.
    Simulate(SimulateArgs),
    /// Sample co-located training patches from a simulated pair.
    MakePatches(MakePatchesArgs),
    /// Train a network from scratch and write its checkpoint.
    Train(TrainArgs),
    /// Super-resolve a scene to the finest band grid.
    Superres(SuperresArgs),
    /// Score predicted bands against ground truth.
    Evaluate(EvaluateArgs),
    /// Describe a band file, manifest, patch file or checkpoint.
    Info(InfoArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Manifest of the scene to degrade.
    #[arg(long)]
    pub scene: PathBuf,
    /// Degradation factor: 2 (20 m targets), 4 (20 m targets, coarser
    /// training scale) or 6 (60 m targets).
    #[arg(long, value_parser = ["2", "4", "6"])]
    pub scale: String,
    /// Gaussian blur in input pixels; defaults to 1/scale.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Output directory; receives input/, targets/ and provenance.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MakePatchesArgs {
    /// Manifest of the degraded input scene.
    #[arg(long)]
    pub scene: PathBuf,
    /// Manifest of the target bands.
    #[arg(long)]
    pub targets: PathBuf,
    /// Number of patches to draw.
    #[arg(long)]
    pub count: usize,
    /// Edge in finest-grid pixels (32 for 2x, 96 for 6x in the reference setup).
    #[arg(long)]
    pub patch_size: usize,
    /// Seed of the patch positions.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Patch file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    HeUniform,
    ZeroLast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Bilinear,
    Bicubic,
}

impl From<KernelArg> for Upsampling {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Bilinear => Upsampling::Bilinear,
            KernelArg::Bicubic => Upsampling::Bicubic,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Patch file written by make-patches.
    #[arg(long)]
    pub patches: PathBuf,
    /// Number of residual blocks.
    #[arg(long)]
    pub d: usize,
    /// Feature width.
    #[arg(long)]
    pub f: usize,
    /// Network variant by its scale: 2 or 6.
    #[arg(long, value_parser = ["2", "6"])]
    pub scale: String,
    /// Maximum number of epochs.
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Seed of the initial weights and the shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint to write (the weights with the lowest validation loss).
    #[arg(long)]
    pub out_ckpt: PathBuf,
    /// History table path; defaults to the checkpoint path with a
    /// `.history.txt` extension.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Patches per optimizer step.
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    /// Initial learning rate.
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Epochs without validation improvement before the rate is halved.
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    /// Residual scaling inside each block.
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    /// Initial weights; zero-last starts from the plain interpolation.
    #[arg(long, value_enum, default_value_t = InitArg::HeUniform)]
    pub init: InitArg,
    /// Share of the patches used for training; the rest validates.
    #[arg(long, default_value_t = 0.9)]
    pub val_fraction: f64,
    /// Kernel that brings the coarse inputs to the finest grid.
    #[arg(long, value_enum, default_value_t = KernelArg::Bilinear)]
    pub upsampling: KernelArg,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("method").required(true).args(["ckpt2x", "baseline"]))]
pub struct SuperresArgs {
    /// Manifest of the scene to super-resolve.
    #[arg(long)]
    pub scene: PathBuf,
    /// Checkpoint of the 2x network.
    #[arg(long)]
    pub ckpt2x: Option<PathBuf>,
    /// Checkpoint of the 6x network; adds the 60 m bands.
    #[arg(long, requires = "ckpt2x")]
    pub ckpt6x: Option<PathBuf>,
    /// Tile edge in output pixels.
    #[arg(long, default_value_t = 512)]
    pub tile: usize,
    /// Context per tile edge in coarse pixels.
    #[arg(long, default_value_t = 2)]
    pub overlap: usize,
    /// Output directory; receives the bands and superres.manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Plain interpolation of the coarse bands instead of a network.
    #[arg(long, value_enum)]
    pub baseline: Option<KernelArg>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Manifest of the predicted bands (extra bands are ignored).
    #[arg(long)]
    pub pred: PathBuf,
    /// Manifest of the ground truth bands.
    #[arg(long)]
    pub truth: PathBuf,
    /// Machine-readable report to write.
    #[arg(long)]
    pub out_report: PathBuf,
    /// Also write the aligned table here (it always goes to stdout).
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    pub path: PathBuf,
}

/// Parses `args` (program name first), runs the command and maps the
/// outcome to an exit code.
pub fn main_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        // Ignored when a global pool already exists (repeated in-process calls).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Core(s2sr_core::Error::NonFiniteLoss { epoch, batch }) = e {
                eprintln!("training diverged in epoch {epoch} (batch {batch}); try a lower --lr");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    use s2sr_core::Error as C;
    match e {
        Error::Core(C::NonFiniteLoss { .. }) => 5,
        Error::Core(C::InvalidConfig(_) | C::TileTooSmall { .. } | C::PatchTooLarge { .. }) => 2,
        Error::Core(C::StaleCache) => 4,
        _ => 3,
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::MakePatches(a) => cmd_make_patches(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Superres(a) => cmd_superres(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Info(a) => cmd_info(&a),
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance");
    path.with_file_name(name)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let scale: usize = a.scale.parse().expect("restricted by the parser");
    let spec = DegradationSpec::new(scale, a.sigma)?;
    let scene = read_scene(&a.scene)?;
    let pair = simulate_scene(&scene, &spec)?;
    let input: Vec<BandImage> = pair.input.bands().cloned().collect();
    write_bands(&input, pair.input.base_gsd(), &a.out.join("input"), "scene.manifest")?;
    write_bands(&pair.targets, pair.input.base_gsd(), &a.out.join("targets"), "targets.manifest")?;
    Provenance::new("simulate")
        .with("source_sha256", sha256_scene(&a.scene)?)
        .with("scale", scale)
        .with("sigma", format!("{:?}", spec.sigma()))
        .with("target_group", format!("{:?}", spec.target_group()))
        .with("input_size", format!("{}x{}", pair.input.width(), pair.input.height()))
        .write(&a.out.join("provenance.txt"))
}

pub fn cmd_make_patches(a: &MakePatchesArgs) -> Result<()> {
    let scene = read_scene(&a.scene)?;
    let (_, targets) = read_bands(&a.targets)?;
    let set = sample_patches(&scene, &targets, a.count, a.patch_size, a.seed)?;
    save_patches(&set, &a.out)?;
    Provenance::new("make-patches")
        .with("scene_sha256", sha256_scene(&a.scene)?)
        .with("targets_sha256", sha256_scene(&a.targets)?)
        .with("count", a.count)
        .with("patch_size", a.patch_size)
        .with("seed", a.seed)
        .with("variant", format!("{:?}", set.variant()))
        .write(&sidecar(&a.out))
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let variant = if a.scale == "6" { Variant::S6x } else { Variant::T2x };
    let mut net = NetworkConfig::new(variant, a.d, a.f);
    net.lambda = a.lambda;
    net.upsampling = a.upsampling.into();
    net.validate()?;
    let tc = TrainConfig {
        batch_size: a.batch_size,
        lr0: a.lr,
        plateau_patience: a.patience,
        max_epochs: a.epochs,
        min_lr: a.lr / 1024.0,
        seed: a.seed,
        init: match a.init {
            InitArg::HeUniform => InitScheme::HeUniform,
            InitArg::ZeroLast => InitScheme::ZeroLast,
        },
        ..TrainConfig::default()
    };
    tc.validate()?;
    let patches = load_patches(&a.patches)?;
    if patches.variant() != variant {
        return Err(s2sr_core::Error::ShapeMismatch(format!(
            "{} holds {:?} patches, --scale {} trains {variant:?}",
            a.patches.display(),
            patches.variant(),
            a.scale
        ))
        .into());
    }
    let (train_set, val_set) = split_train_val(&patches, a.val_fraction, a.seed)?;
    eprintln!(
        "training {variant:?} d={} f={} ({} parameters) on {} patches, validating on {}",
        a.d,
        a.f,
        param_count(&net),
        train_set.len(),
        val_set.len()
    );
    let init = init_weights(&net, tc.seed, tc.init);
    let started = Instant::now();
    let mut log = |r: &s2sr_core::train::EpochRecord| {
        eprintln!(
            "epoch {:>4}  train {:.6e}  val {:.6e}  lr {:.3e}  ({:.1} s)",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.lr,
            started.elapsed().as_secs_f64()
        );
    };
    let (weights, history) = train_from(&net, &tc, init, &train_set, &val_set, &mut log)?;
    save_weights(&net, &weights, &a.out_ckpt)?;
    let history_path = a.history.clone().unwrap_or_else(|| a.out_ckpt.with_extension("history.txt"));
    crate::bin_io::write_file(&history_path, render_history(&history).as_bytes())?;
    Provenance::new("train")
        .with("patches_sha256", sha256_file(&a.patches)?)
        .with("variant", format!("{variant:?}"))
        .with("depth", a.d)
        .with("features", a.f)
        .with("lambda", format!("{:?}", a.lambda))
        .with("upsampling", format!("{:?}", net.upsampling))
        .with("init", format!("{:?}", tc.init))
        .with("epochs_run", history.records.len().saturating_sub(1))
        .with("batch_size", a.batch_size)
        .with("lr", format!("{:?}", a.lr))
        .with("patience", a.patience)
        .with("val_fraction", format!("{:?}", a.val_fraction))
        .with("seed", a.seed)
        .write(&sidecar(&a.out_ckpt))
}

pub fn cmd_superres(a: &SuperresArgs) -> Result<()> {
    let scene = read_scene(&a.scene)?;
    let tiling = TilingSpec { tile: a.tile, overlap_lowres: a.overlap, pad_mode: PadMode::Reflect };
    let started = Instant::now();
    let mut provenance = Provenance::new("superres").with("scene_sha256", sha256_scene(&a.scene)?);
    let bands = if let Some(kernel) = a.baseline {
        provenance = provenance.with("baseline", format!("{:?}", Upsampling::from(kernel)));
        let up = |b: &BandImage, r: usize| match kernel {
            KernelArg::Bilinear => bilinear_upsample(b, r),
            KernelArg::Bicubic => bicubic_upsample(b, r),
        };
        let mut out = scene.set_b().iter().map(|b| up(b, 2)).collect::<s2sr_core::Result<Vec<_>>>()?;
        if let Some(c) = scene.set_c() {
            out.extend(c.iter().map(|b| up(b, 6)).collect::<s2sr_core::Result<Vec<_>>>()?);
        }
        out
    } else {
        let path2 = a.ckpt2x.as_ref().expect("required by the argument group");
        let (cfg2, w2) = load_weights(path2)?;
        if cfg2.variant()? != Variant::T2x {
            return Err(
                s2sr_core::Error::WeightsConfigMismatch(format!("{} is not a 2x network", path2.display())).into()
            );
        }
        provenance = provenance.with("ckpt2x_sha256", sha256_file(path2)?);
        let mut log = tile_logger("2x", started);
        let mut out = superresolve_observed(&scene, &cfg2, &w2, &tiling, 2000.0, &mut log)?;
        if let Some(path6) = &a.ckpt6x {
            let (cfg6, w6) = load_weights(path6)?;
            if cfg6.variant()? != Variant::S6x {
                return Err(s2sr_core::Error::WeightsConfigMismatch(format!(
                    "{} is not a 6x network",
                    path6.display()
                ))
                .into());
            }
            if scene.set_c().is_none() {
                return Err(s2sr_core::Error::MissingInput("y_c").into());
            }
            provenance = provenance.with("ckpt6x_sha256", sha256_file(path6)?);
            let mut log = tile_logger("6x", started);
            let c = superresolve_observed(&scene, &cfg6, &w6, &tiling, 2000.0, &mut log)?;
            let mut cube = scene.set_a().to_vec();
            cube.append(&mut out);
            cube.extend(c);
            out = cube;
        }
        out
    };
    let total = started.elapsed().as_secs_f64();
    eprintln!("total: {:.3} s ({:.2} min) for {}x{} pixels", total, total / 60.0, scene.width(), scene.height());
    write_bands(&bands, scene.base_gsd(), &a.out, "superres.manifest")?;
    provenance
        .with("tile", a.tile)
        .with("overlap", a.overlap)
        .with("bands", bands.iter().map(|b| b.band().as_str()).collect::<Vec<_>>().join(" "))
        .write(&a.out.join("provenance.txt"))
}

fn tile_logger(label: &'static str, started: Instant) -> impl FnMut(TileEvent) {
    let mut tile_start = Instant::now();
    move |event| match event {
        TileEvent::Started(_) => tile_start = Instant::now(),
        TileEvent::Finished(t) => eprintln!(
            "{label} tile {}/{} at ({}, {}) {}x{}: {:.3} s (elapsed {:.3} s)",
            t.index + 1,
            t.count,
            t.x0,
            t.y0,
            t.width,
            t.height,
            tile_start.elapsed().as_secs_f64(),
            started.elapsed().as_secs_f64()
        ),
    }
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let (_, pred) = read_bands(&a.pred)?;
    let (_, truth) = read_bands(&a.truth)?;
    let pred = truth
        .iter()
        .map(|t| {
            pred.iter()
                .find(|p| p.band() == t.band())
                .cloned()
                .ok_or_else(|| s2sr_core::Error::BandMismatch(format!("{} has no band {}", a.pred.display(), t.band())))
        })
        .collect::<s2sr_core::Result<Vec<_>>>()?;
    let report = metrics::evaluate(&pred, &truth)?;
    let table = render_table(&report);
    crate::bin_io::write_file(&a.out_report, render_report(&report).as_bytes())?;
    if let Some(path) = &a.table {
        crate::bin_io::write_file(path, table.as_bytes())?;
    }
    print!("{table}");
    Ok(())
}

pub fn cmd_info(a: &InfoArgs) -> Result<()> {
    let bytes = crate::bin_io::read_file(&a.path)?;
    match bytes.get(..4) {
        Some(b"S2SR") => {
            let h = read_band_header(&a.path)?;
            println!("band {} {}x{} at {} m", h.band, h.width, h.height, h.gsd);
        }
        Some(b"S2CK") => {
            let (cfg, _) = load_weights(&a.path)?;
            println!(
                "checkpoint {:?} d={} f={} lambda={} upsampling={:?}",
                cfg.variant()?,
                cfg.depth,
                cfg.features,
                cfg.lambda,
                cfg.upsampling
            );
            println!("{} convolutional layers, {} parameters", cfg.layer_count(), param_count(&cfg));
        }
        Some(b"S2PT") => {
            let set = load_patches(&a.path)?;
            println!("{} {:?} patches of {} pixels", set.len(), set.variant(), set.patch_size());
        }
        _ => {
            let manifest = Manifest::read(&a.path)?;
            println!("manifest: base gsd {} m, {} bands", manifest.base_gsd, manifest.entries.len());
            for e in &manifest.entries {
                println!("  {:<4} {}x{}  {}", e.band.as_str(), e.width, e.height, e.path.display());
            }
        }
    }
    Ok(())
}
