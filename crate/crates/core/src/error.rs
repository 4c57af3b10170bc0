use alloc::string::String;

use crate::band::BandId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("required band {0} is missing")]
    MissingBand(BandId),
    #[error("missing input: {0}")]
    MissingInput(&'static str),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("argument outside the function domain: {0}")]
    DomainError(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("patch of {patch} pixels does not fit into a {width}x{height} scene")]
    PatchTooLarge { patch: usize, width: usize, height: usize },
    #[error("need at least 2 patches to split, got {0}")]
    TooFewPatches(usize),
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("ground truth band has zero mean")]
    DegenerateTruth,
    #[error("every UIQ window has zero variance")]
    AllWindowsDegenerate,
    #[error("band lists do not line up: {0}")]
    BandMismatch(String),
    #[error("weights do not match the network configuration: {0}")]
    WeightsConfigMismatch(String),
    #[error("tile of {tile} pixels leaves no interior after cropping {overlap} pixels per side")]
    TileTooSmall { tile: usize, overlap: usize },
    #[error("forward cache does not belong to these weights")]
    StaleCache,
}
