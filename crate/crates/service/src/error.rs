use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use thiserror::Error;
use vismpc_core::planner::GoalPair;

use crate::wire::ErrorBody;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    UnknownSession(u64),

    #[error("goal pixel outside the {width}x{height} frame")]
    GoalOutOfBounds { pair: GoalPair, width: usize, height: usize },

    #[error("{0}")]
    Conflict(String),

    #[error("{0}")]
    BadRequest(String),

    #[error("session worker stopped")]
    Closed,

    #[error(transparent)]
    Core(#[from] vismpc_core::Error),
}

impl ServiceError {
    /// Short machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::GoalOutOfBounds { .. } => "out_of_bounds",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Closed => "closed",
            ServiceError::Core(vismpc_core::Error::NoGoal) => "no_goal",
            ServiceError::Core(vismpc_core::Error::OutOfBounds(_)) => "out_of_bounds",
            ServiceError::Core(_) => "core",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Core(vismpc_core::Error::NoGoal) => StatusCode::CONFLICT,
            ServiceError::Closed => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            error: self.code().to_string(),
            message: self.to_string(),
            pair: match self {
                ServiceError::GoalOutOfBounds { pair, .. } => Some(*pair),
                _ => None,
            },
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}
