use std::path::PathBuf;

use thiserror::Error;
use umt_tensor::NnError;

#[derive(Debug, Error)]
pub enum UmtError {
    #[error("degenerate image: {0}")]
    DegenerateImage(String),
    #[error("empty foreground: {0}")]
    EmptyForeground(String),
    #[error("insufficient foreground: {0}")]
    InsufficientForeground(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),
    #[error("training set has a single class: {0}")]
    SingleClassCorpus(String),
    #[error("empty score list: {0}")]
    EmptyScores(String),
    #[error("material {0:?} is not in the corpus")]
    MissingMaterial(String),
    #[error("insufficient images: {0}")]
    InsufficientImages(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("cannot decode {}: {reason}", .path.display())]
    UndecodableImage { path: PathBuf, reason: String },
    #[error("unknown role: {0}")]
    UnknownRole(String),
    #[error("bad magic in {0}")]
    BadMagic(String),
    #[error("version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl UmtError {
    /// Stable machine-readable name of the variant.
    pub fn category(&self) -> &'static str {
        match self {
            UmtError::DegenerateImage(_) => "DegenerateImage",
            UmtError::EmptyForeground(_) => "EmptyForeground",
            UmtError::InsufficientForeground(_) => "InsufficientForeground",
            UmtError::Precondition(_) => "Precondition",
            UmtError::EmptyCorpus(_) => "EmptyCorpus",
            UmtError::SingleClassCorpus(_) => "SingleClassCorpus",
            UmtError::EmptyScores(_) => "EmptyScores",
            UmtError::MissingMaterial(_) => "MissingMaterial",
            UmtError::InsufficientImages(_) => "InsufficientImages",
            UmtError::MissingArtifact(_) => "MissingArtifact",
            UmtError::MissingFile(_) => "MissingFile",
            UmtError::UndecodableImage { .. } => "UndecodableImage",
            UmtError::UnknownRole(_) => "UnknownRole",
            UmtError::BadMagic(_) => "BadMagic",
            UmtError::VersionMismatch { .. } => "VersionMismatch",
            UmtError::TruncatedFile(_) => "TruncatedFile",
            UmtError::Format(_) => "Format",
            UmtError::Nn(NnError::Shape(_)) => "ShapeError",
            UmtError::Nn(NnError::Precondition(_)) => "Precondition",
            UmtError::Nn(NnError::Format(_)) => "CheckpointFormat",
            UmtError::Nn(NnError::Io(_)) | UmtError::Io(_) => "IoError",
            UmtError::Json(_) => "JsonError",
        }
    }
}

pub type Result<T, E = UmtError> = std::result::Result<T, E>;
