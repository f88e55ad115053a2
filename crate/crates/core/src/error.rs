use std::path::PathBuf;

use thiserror::Error;

/// Broad failure category, used by the CLI to pick an exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing bundle file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("manifest.json: {0}")]
    Manifest(String),

    #[error("{file}: expected {expected} bytes, found {found}")]
    ByteCount {
        file: &'static str,
        expected: u64,
        found: u64,
    },

    #[error("{file}: non-finite value {value} at byte offset {offset}")]
    NonFinite {
        file: &'static str,
        offset: u64,
        value: f32,
    },

    #[error("labels.bin: label {label} out of range for {num_classes} classes at sample index {index} (byte offset {})", index * 4)]
    LabelOutOfRange {
        index: usize,
        label: u32,
        num_classes: usize,
    },

    #[error("{file}: row {row} has norm {norm}, but the manifest declares unit normalization")]
    NotUnitNorm {
        file: &'static str,
        row: usize,
        norm: f64,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("text matrix has numerical rank {rank}, fewer than the {requested} requested components")]
    RankDeficient { requested: usize, rank: usize },

    #[error("zero-norm vector: {0}")]
    ZeroNorm(String),

    #[error("non-finite cost entry at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },

    #[error("sinkhorn did not produce finite potentials: {0}")]
    ConvergenceFailure(String),

    #[error("exact solver limited to {limit} cells, problem has {cells}")]
    ScaleGuard { cells: usize, limit: usize },

    #[error("class {class}: {source}")]
    InClass {
        class: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("problem {index}: {source}")]
    InProblem {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sample {index}: {source}")]
    InSample {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::Io { .. }
            | Error::MissingFile(_)
            | Error::Manifest(_)
            | Error::ByteCount { .. }
            | Error::NonFinite { .. }
            | Error::LabelOutOfRange { .. }
            | Error::NotUnitNorm { .. }
            | Error::DimensionMismatch { .. }
            | Error::ScaleGuard { .. } => ErrorKind::Data,
            Error::RankDeficient { .. }
            | Error::ZeroNorm(_)
            | Error::NonFiniteCost { .. }
            | Error::ConvergenceFailure(_) => ErrorKind::Numerical,
            Error::InClass { source, .. }
            | Error::InProblem { source, .. }
            | Error::InSample { source, .. } => source.kind(),
        }
    }

    /// Name of the module that raised the innermost error.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Io { .. }
            | Error::MissingFile(_)
            | Error::Manifest(_)
            | Error::ByteCount { .. }
            | Error::NonFinite { .. }
            | Error::LabelOutOfRange { .. }
            | Error::NotUnitNorm { .. } => "bundle_io",
            Error::RankDeficient { .. } => "linalg_subspace",
            Error::NonFiniteCost { .. } | Error::ConvergenceFailure(_) | Error::ScaleGuard { .. } => {
                "ot_solver"
            }
            Error::ZeroNorm(_) | Error::DimensionMismatch { .. } | Error::InvalidArgument(_) => "core",
            Error::InClass { source, .. }
            | Error::InProblem { source, .. }
            | Error::InSample { source, .. } => source.module(),
        }
    }

    pub(crate) fn in_class(self, class: usize) -> Self {
        Error::InClass { class, source: Box::new(self) }
    }

    pub(crate) fn in_sample(self, index: usize) -> Self {
        Error::InSample { index, source: Box::new(self) }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
