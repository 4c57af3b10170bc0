//! Writes a procedural multi-resolution scene for trying out the CLI.
//!
//! ```text
//! cargo run --release -p s2sr --example synthetic_scene -- --size 192 --out /tmp/scene
//! s2sr simulate --scene /tmp/scene/scene.manifest --scale 2 --out /tmp/sim
//! ```

use std::path::PathBuf;

use clap::Parser;
use s2sr_core::synthetic::{synthetic_scene, SyntheticSpec};

#[derive(Parser)]
struct Opts {
    /// Edge of the 10 m grid; a multiple of 6 with --with-c, else of 2.
    #[arg(long, default_value_t = 192)]
    size: usize,
    /// Include the 60 m bands.
    #[arg(long)]
    with_c: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let o = Opts::parse();
    let scene = synthetic_scene(&SyntheticSpec::new(o.size, o.size, o.with_c, o.seed))?;
    let manifest = s2sr::raster::write_scene(&scene, &o.out)?;
    println!("{}", manifest.display());
    Ok(())
}
