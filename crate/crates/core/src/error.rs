use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate kernel: output channel {channel} has zero variance over its fan-in")]
    DegenerateKernel { channel: usize },
    #[error("degenerate proxy: channel {channel} has zero proxy variance and eps = 0")]
    DegenerateProxy { channel: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("propagation degeneracy at layer {layer}: {reason}")]
    Propagation { layer: usize, reason: String },
    #[error("theorem hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("format error in {path:?}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("degenerate input: sample {sample} is identically zero")]
    DegenerateInput { sample: usize },
    #[error("io error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
