//! Crate-wide error type.

use crate::raster::BandId;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed or corrupt file; `offset` is the byte position of the
    /// first offending datum where known.
    #[error("format error in {path} at byte {offset}: {reason}")]
    Format {
        path: String,
        offset: u64,
        reason: String,
    },

    /// Invalid argument or inconsistent input shapes/sizes.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Tensor shape or channel-count mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A required spectral band is absent from the raster.
    #[error("missing band {0:?}")]
    BandMissing(BandId),

    /// Invalid network or run configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Divergence {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    /// Scene generation could not satisfy its constraints.
    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
