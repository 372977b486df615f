use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected_h}x{expected_w}, got {got_h}x{got_w}")]
    DimensionMismatch {
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },

    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no frames found in {0}")]
    NoFrames(PathBuf),

    #[error("unsupported bit depth: {0}")]
    UnsupportedBitDepth(u32),

    #[error("malformed image {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("degenerate flow field: only {confident_fraction:.3} of pixels are confident")]
    DegenerateFlow { confident_fraction: f64 },

    #[error("canvas overflow: placement needs a canvas of at least {required_h}x{required_w}")]
    CanvasOverflow { required_h: usize, required_w: usize },

    #[error("lost track: current frame shares no pixels with the background model")]
    LostTrack,

    #[error("subspace model: {0}")]
    Subspace(String),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("phantom: {0}")]
    Phantom(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
