//! Creation backend: creators post drafts and get per-component quality
//! feedback, submit them to a validator queue, and validators accept
//! (appending to the dataset) or reject with mandatory feedback.

mod api;
pub mod state;
pub mod store;

pub use api::router;
pub use state::{Decision, DraftRecord, DraftStatus, Event, ServiceState, Stats, TrajectoryPoint, Verdict};
pub use store::{Store, EVENTS_FILE, SNAPSHOT_FILE};

use axum::http::StatusCode;
use dataqual::corpus::CorpusError;
use dataqual::dqi::DqiError;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("sample does not match the schema: {0}")]
    SchemaMismatch(#[from] CorpusError),
    #[error("dataset state needs at least 2 seed samples, found {0}")]
    EmptyDatasetState(usize),
    #[error("unknown draft {0:?}")]
    UnknownDraft(String),
    #[error("{id} is {status:?}")]
    WrongState { id: String, status: DraftStatus },
    #[error("rejections need feedback")]
    MissingFeedback,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("quality scoring failed: {0}")]
    Dqi(#[from] DqiError),
    #[error("state is corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ServiceError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::SchemaMismatch(_) => "SchemaMismatch",
            ServiceError::EmptyDatasetState(_) => "EmptyDatasetState",
            ServiceError::UnknownDraft(_) => "UnknownDraft",
            ServiceError::WrongState { .. } => "WrongState",
            ServiceError::MissingFeedback => "MissingFeedback",
            ServiceError::BadRequest(_) => "BadRequest",
            ServiceError::Dqi(DqiError::SchemaMismatch(_)) => "SchemaMismatch",
            ServiceError::Dqi(_) => "QualityError",
            ServiceError::Corrupt(_) => "Corrupt",
            ServiceError::Io(_) | ServiceError::Json(_) => "Internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::SchemaMismatch(_) | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Dqi(DqiError::SchemaMismatch(_)) => StatusCode::BAD_REQUEST,
            ServiceError::UnknownDraft(_) => StatusCode::NOT_FOUND,
            ServiceError::WrongState { .. } | ServiceError::EmptyDatasetState(_) => StatusCode::CONFLICT,
            ServiceError::MissingFeedback => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Dqi(_) | ServiceError::Corrupt(_) | ServiceError::Io(_) | ServiceError::Json(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }
}
