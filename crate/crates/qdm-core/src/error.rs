//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Array shapes or grid dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Resonance dip detection found fewer groups than the readout mode needs.
    #[error("detected {found} resonance dips, mode requires {expected}")]
    DipDetection { expected: usize, found: usize },

    /// Measured resonances could not be matched one-to-one to model lines.
    #[error("ambiguous resonance assignment: {0}")]
    ResonanceAssignment(String),

    /// Spatial filter cutoff outside the resolvable band of the map.
    #[error("filter cutoff {cutoff_m} m is not above the two-pixel limit {limit_m} m")]
    CutoffOutOfBand { cutoff_m: f64, limit_m: f64 },

    /// Statistics requested over too few pixels.
    #[error("selection has {found} pixels, at least {needed} required")]
    SelectionTooSmall { needed: usize, found: usize },

    /// Binary container violated its format contract.
    #[error("file format: {0}")]
    Format(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("header json: {0}")]
    Json(#[from] serde_json::Error),
}
