use serde::Serialize;
use thiserror::Error;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),

    #[error("{0}")]
    BadRequest(String),

    #[error("entity {0} is already labelled in this session")]
    DuplicateEntity(u32),

    #[error("expected revision {expected}, session is at {actual}")]
    StaleRevision { expected: u64, actual: u64 },

    #[error("session has no preferences to undo")]
    NothingToUndo,

    #[error("storage: {0}")]
    Storage(#[from] std::io::Error),

    #[error("{0}")]
    Core(#[from] nqr_core::Error),
}

/// Wire form of every error: `{"code": ..., "message": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::DuplicateEntity(_) => "duplicate_entity",
            ServiceError::StaleRevision { .. } => "stale_revision",
            ServiceError::NothingToUndo => "nothing_to_undo",
            ServiceError::Storage(_) => "storage_error",
            ServiceError::Core(nqr_core::Error::InvalidQuery(_))
            | ServiceError::Core(nqr_core::Error::InvalidArgument(_))
            | ServiceError::Core(nqr_core::Error::MissingEntity(_)) => "bad_request",
            ServiceError::Core(_) => "internal",
        }
    }

    pub fn status(&self) -> u16 {
        match self.code() {
            "not_found" => 404,
            "bad_request" => 400,
            "duplicate_entity" | "stale_revision" | "nothing_to_undo" => 409,
            _ => 500,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code().into(),
            message: self.to_string(),
        }
    }
}
