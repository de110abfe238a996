use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, channel counts or options that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// Data that violates a value contract (non-binary mask, wrong range, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Misuse of the verification / optimisation harness.
    #[error("harness error: {0}")]
    Harness(String),

    #[error(transparent)]
    ModelFile(#[from] ModelFileError),

    #[error("dataset load failed with {} error(s):\n{}", .0.len(), render_issues(.0))]
    DatasetLoad(Vec<LoadIssue>),

    #[error("image error in {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn harness(msg: impl Into<String>) -> Self {
        Error::Harness(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failure modes when decoding a serialized model.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelFileError {
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("model file inconsistent: {0}")]
    Inconsistent(String),
    #[error("model file config invalid: {0}")]
    BadConfig(String),
}

/// One problem found while scanning a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadIssue {
    OrphanImage(PathBuf),
    OrphanMask(PathBuf),
    NonBinaryMask { path: PathBuf, value: u8 },
    SizeMismatch { image: PathBuf, mask: PathBuf },
    DuplicateId(String),
    Unreadable { path: PathBuf, message: String },
}

impl std::fmt::Display for LoadIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LoadIssue::OrphanImage(p) => write!(f, "orphan image without mask: {}", p.display()),
            LoadIssue::OrphanMask(p) => write!(f, "orphan mask without image: {}", p.display()),
            LoadIssue::NonBinaryMask { path, value } => {
                write!(f, "non-binary mask value {value} in {}", path.display())
            }
            LoadIssue::SizeMismatch { image, mask } => write!(
                f,
                "size mismatch between {} and {}",
                image.display(),
                mask.display()
            ),
            LoadIssue::DuplicateId(id) => write!(f, "duplicate identifier {id}"),
            LoadIssue::Unreadable { path, message } => {
                write!(f, "unreadable file {}: {message}", path.display())
            }
        }
    }
}

fn render_issues(issues: &[LoadIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  - {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}
