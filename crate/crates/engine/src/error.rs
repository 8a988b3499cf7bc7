use std::path::PathBuf;

use nucleus_core::curation::CurationError;
use nucleus_core::experts::ExpertError;
use nucleus_core::projection::ProjectionError;
use nucleus_core::retrieval::RetrievalError;
use nucleus_core::sns::SnsError;
use thiserror::Error;

pub type Result<T, E = EngineError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{0}")]
    Validation(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("sample '{sample_id}': {reason}")]
    InvariantViolation { sample_id: String, reason: String },
    #[error("corrupt cache {path}: {reason}")]
    CacheCorrupt { path: PathBuf, reason: String },
    #[error("remote failure: {0}")]
    Remote(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Runtime(String),
}

impl EngineError {
    /// 1 for bad input or configuration, 3 for remote services, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            EngineError::Validation(_) | EngineError::Parse { .. } | EngineError::InvariantViolation { .. } => 1,
            EngineError::Remote(_) => 3,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EngineError::Io { path: path.into(), source }
    }
}

impl From<ExpertError> for EngineError {
    fn from(e: ExpertError) -> Self {
        match e {
            ExpertError::RemoteFailure(m) => EngineError::Remote(m),
            ExpertError::UnsupportedModality { .. }
            | ExpertError::InvalidConfig(_)
            | ExpertError::DimMismatch { .. } => EngineError::Validation(e.to_string()),
            ExpertError::Geometry(g) => EngineError::Runtime(g.to_string()),
        }
    }
}

impl From<SnsError> for EngineError {
    fn from(e: SnsError) -> Self {
        match e {
            SnsError::GatingExpertFailure(inner) => inner.into(),
            SnsError::DescriberFailure(m) => EngineError::Remote(format!("describer: {m}")),
            SnsError::InvalidSample { sample_id, reason } => EngineError::InvariantViolation { sample_id, reason },
            other => EngineError::Validation(other.to_string()),
        }
    }
}

impl From<ProjectionError> for EngineError {
    fn from(e: ProjectionError) -> Self {
        match e {
            ProjectionError::InvalidConfig(_)
            | ProjectionError::BatchTooSmall(_)
            | ProjectionError::DimMismatch { .. } => EngineError::Validation(e.to_string()),
            other => EngineError::Runtime(other.to_string()),
        }
    }
}

impl From<RetrievalError> for EngineError {
    fn from(e: RetrievalError) -> Self {
        EngineError::Runtime(e.to_string())
    }
}

impl From<CurationError> for EngineError {
    fn from(e: CurationError) -> Self {
        match e {
            CurationError::Retrieval(r) => r.into(),
            other => EngineError::Validation(other.to_string()),
        }
    }
}
