use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },
    #[error("raw volume size mismatch: expected {expected} bytes, found {actual}")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error("unknown scalar type `{0}` (expected uint8, uint16 or float32)")]
    UnknownScalarType(String),
    #[error("invalid volume metadata: {0}")]
    InvalidMetadata(String),
    #[error("invalid transfer function: {0}")]
    InvalidTransferFunction(String),
    #[error("shading point lies inside the light sphere")]
    InsideLight,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("cache initialization acceptance rate too low: {accepted} hits in {attempts} rays")]
    DegenerateInitialization { accepted: usize, attempts: usize },
    #[error("invalid cache configuration: {0}")]
    InvalidCacheConfig(String),
    #[error("stale cache images: expected frame {expected}, images are from frame {found}")]
    StaleFrame { expected: u64, found: u64 },
    #[error("malformed splat blob: {0}")]
    InvalidBlob(String),
    #[error("malformed image file: {0}")]
    InvalidImage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("reference image required for metrics but not available: {0}")]
    MissingReference(PathBuf),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Png(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|cause| Error::Io { path: path.into(), cause })
    }
}
