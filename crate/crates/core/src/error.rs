//! Error types shared across the harness.

use std::fmt;
use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensors, transforms, loaders, and the runner.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Two shapes that must agree do not.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// An operation produced or required an impossible extent (e.g. an
    /// empty convolution output or a pool larger than its input).
    Dimension { op: &'static str, detail: String },
    /// A knob is outside its legal range or a fixed-size contract is broken.
    Config { what: String },
    /// Input data is invalid (label out of range, non-finite values, ...).
    Data { what: String },
    /// An API was called in a state it does not support (non-scalar
    /// backward, optimizer step without gradients, ...).
    Usage { what: String },
    /// A forward pass produced NaN or infinity where a finite value is
    /// required; training treats this as divergence.
    NonFinite { op: &'static str },
    /// A file is not in a format this crate reads.
    UnsupportedFormat { path: PathBuf, detail: String },
    /// A binary container is damaged; `offset` is the byte position where
    /// parsing failed.
    CorruptFile { path: PathBuf, offset: u64, detail: String },
    /// Files named by a dataset manifest are absent from the data root.
    MissingData { dataset: String, paths: Vec<PathBuf> },
    /// An unknown dataset id was requested.
    UnknownDataset { id: String },
    /// A record is too short to yield a single window.
    EmptyDataset { record: String, detail: String },
    /// A named preset does not exist or cannot be satisfied.
    Preset { what: String },
    /// Every repeat of an experiment cell failed.
    AllRepeatsFailed { cell: String },
    /// Wrapper around I/O failures.
    Io { path: PathBuf, message: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: shape mismatch between {left:?} and {right:?}")
            }
            Error::Dimension { op, detail } => write!(f, "{op}: {detail}"),
            Error::Config { what } => write!(f, "configuration error: {what}"),
            Error::Data { what } => write!(f, "data error: {what}"),
            Error::Usage { what } => write!(f, "usage error: {what}"),
            Error::NonFinite { op } => write!(f, "{op} produced a non-finite value"),
            Error::UnsupportedFormat { path, detail } => {
                write!(f, "unsupported format in {}: {detail}", path.display())
            }
            Error::CorruptFile {
                path,
                offset,
                detail,
            } => write!(
                f,
                "corrupt file {} at byte {offset}: {detail}",
                path.display()
            ),
            Error::MissingData { dataset, paths } => {
                write!(f, "dataset {dataset}: {} file(s) missing:", paths.len())?;
                for p in paths.iter().take(8) {
                    write!(f, "\n  {}", p.display())?;
                }
                if paths.len() > 8 {
                    write!(f, "\n  ... and {} more", paths.len() - 8)?;
                }
                Ok(())
            }
            Error::UnknownDataset { id } => write!(f, "unknown dataset id: {id}"),
            Error::EmptyDataset { record, detail } => {
                write!(f, "record {record} yields no windows: {detail}")
            }
            Error::Preset { what } => write!(f, "preset error: {what}"),
            Error::AllRepeatsFailed { cell } => {
                write!(f, "all repeats failed for cell {cell}")
            }
            Error::Io { path, message } => {
                write!(f, "io error on {}: {message}", path.display())
            }
        }
    }
}

impl std::error::Error for Error {}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }
}
