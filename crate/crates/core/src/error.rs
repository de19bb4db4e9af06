use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("codec error: {0}")]
    Codec(String),

    #[error("weights load error in {field}: {detail}")]
    Load { field: &'static str, detail: String },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("unsupported resolution {height}x{width}: predictor only runs at {native_height}x{native_width}")]
    UnsupportedResolution {
        height: usize,
        width: usize,
        native_height: usize,
        native_width: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("grid too small: {detail}; try x within {x_half_width} conditional sd, ln(phi) in [{ln_phi_lo}, {ln_phi_hi}]")]
    GridTooSmall {
        detail: String,
        x_half_width: f64,
        ln_phi_lo: f64,
        ln_phi_hi: f64,
    },

    #[error("at reverse step t={step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn load(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Load {
            field,
            detail: detail.into(),
        }
    }

    pub fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::ShapeMismatch { .. }
            | Error::UnsupportedResolution { .. }
            | Error::Domain(_) => 2,
            Error::Io { .. } | Error::Codec(_) | Error::Load { .. } => 3,
            Error::Numerical(_) | Error::GridTooSmall { .. } => 4,
            Error::AtStep { source, .. } => source.exit_code(),
        }
    }
}
