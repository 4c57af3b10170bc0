//! File formats and the command line of the s2sr toolkit.
//!
//! The algorithms live in `s2sr_core`; this crate reads and writes
//! everything they exchange:
//!
//! * [`raster`] band files (`S2SR`) and scene manifests
//! * [`checkpoint`] network weights with their configuration (`S2CK`)
//! * [`patches`] training patch sets (`S2PT`)
//! * [`report`] training history and metric tables, with parsers
//! * [`provenance`] sidecars recording how an artifact was produced
//! * [`cli`] the `s2sr` binary

mod bin_io;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod patches;
pub mod provenance;
pub mod raster;
pub mod report;

pub use error::{Error, Result};
