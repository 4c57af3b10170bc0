//! Algorithmic core of the s2sr toolkit: super-resolution of the 20 m and
//! 60 m Sentinel-2 bands to the 10 m grid with a residual CNN.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no I/O. File
//! formats and the command line live in the `s2sr` crate.
//!
//! * [`band`] scene model: band rasters at three resolutions
//! * [`resample`] degradation model and interpolation kernels
//! * [`network`] the residual network, its initialization and gradients
//! * [`train`] patch sampling, L1 loss, Nadam, plateau schedule, epoch loop
//! * [`metrics`] RMSE, SRE, SAM and UIQ
//! * [`infer`] tiled full-scene prediction
//! * [`synthetic`] procedural test scenes with cross-band correlated texture

#![no_std]

extern crate alloc;

pub mod band;
pub mod error;
pub mod infer;
pub mod metrics;
pub mod network;
pub mod real;
pub mod resample;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use band::{BandGroup, BandId, BandImage, MultiResScene};
pub use error::{Error, Result};
pub use network::{NetworkConfig, NetworkWeights, Variant};
pub use real::Real;
pub use tensor::Tensor;
