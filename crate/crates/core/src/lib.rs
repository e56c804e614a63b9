//! Core algorithms for turning an image and caption into an executable world
//! program and scoring what it predicts.
//!
//! Everything here is pure computation (no processes, no network) so the same
//! code backs the pipeline binary and the browser demo.

pub mod conway;
pub mod metrics;
pub mod prompt;
pub mod raster;
pub mod stmap;
pub mod toolbox;

pub use raster::{Field, Mask, RgbImage};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("missing template: {0}")]
    MissingTemplate(String),
    #[error("no program found: {0}")]
    NoProgram(String),
    #[error("malformed critique: {0}")]
    MalformedCritique(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("fit failed: {0}")]
    FitFailed(String),
    #[error("unknown shape class: {0}")]
    UnknownShape(String),
    #[error("unsupported kind: {0}")]
    UnsupportedKind(String),
    #[error("backend {backend} unavailable: {reason}")]
    BackendUnavailable { backend: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
