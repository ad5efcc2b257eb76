use std::path::PathBuf;

use thiserror::Error;

/// Every failure the engine can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported medium: refractive index {0} must exceed 1")]
    UnsupportedMedium(f64),

    #[error("degenerate frame: {0}")]
    FrameDegenerate(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("degenerate normal at ({x}, {y}, {z})")]
    DegenerateNormal { x: f64, y: f64, z: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("polarizer angle unconstrained: degree of polarization is zero")]
    Unconstrained,

    #[error("observation {observed} outside feasible band [{lo}, {hi}]")]
    Inconsistent { observed: f64, lo: f64, hi: f64 },

    #[error("pixel ({x}, {y}) out of bounds for {width}x{height} image")]
    Index {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("schema error in field `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("no signal: {0}")]
    NoSignal(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short stable identifier, used for machine-parsable CLI error lines and
    /// for mapping onto FFI status codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::UnsupportedMedium(_) => "unsupported_medium",
            Error::FrameDegenerate(_) => "frame_degenerate",
            Error::Geometry(_) => "geometry",
            Error::DegenerateNormal { .. } => "degenerate_normal",
            Error::Numeric(_) => "numeric",
            Error::Unconstrained => "unconstrained",
            Error::Inconsistent { .. } => "inconsistent",
            Error::Index { .. } => "index",
            Error::Format { .. } => "format",
            Error::Schema { .. } => "schema",
            Error::NoSignal(_) => "no_signal",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
