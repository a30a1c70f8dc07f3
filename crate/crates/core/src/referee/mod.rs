//! The networked referee: sessions, HTTP endpoints, the reference contestant
//! client, and run finalization.

pub mod client;
pub mod clock;
pub mod config;
pub mod http;
pub mod report;
pub mod service;

use thiserror::Error;

use crate::dataset::{DatasetError, RecordError};
use crate::energy::EnergyError;
use crate::leaderboard::StoreError;
use crate::scoring::ScoringError;

pub use clock::{Clock, ManualClock, SteppingClock, SystemClock};
pub use report::{finalize_session, RunReport, SessionArchive};
pub use service::{
    FinalWindow, LoginGrant, Referee, RefereeSettings, Roster, SessionRecord, SessionState,
};

#[derive(Debug, Error)]
pub enum RefereeError {
    #[error("bad team id or credential")]
    Auth,
    #[error("team {0} already has an active session")]
    Conflict(String),
    #[error("unknown session token")]
    UnknownToken,
    #[error("session is over ({0:?})")]
    SessionOver(SessionState),
    #[error("session {0} is still active")]
    SessionOpen(String),
    #[error("no image at index {0}")]
    NotFound(usize),
    #[error("invalid answers: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Validation(Vec<RecordError>),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl RefereeError {
    /// HTTP status used when the error crosses the wire.
    pub fn status(&self) -> u16 {
        match self {
            RefereeError::Auth | RefereeError::UnknownToken => 401,
            RefereeError::Conflict(_) | RefereeError::SessionOpen(_) => 409,
            RefereeError::SessionOver(_) => 410,
            RefereeError::NotFound(_) => 404,
            RefereeError::Validation(_) => 422,
            RefereeError::BadRequest(_) => 400,
            _ => 500,
        }
    }

    /// Short machine-readable tag for the error body.
    pub fn kind(&self) -> &'static str {
        match self {
            RefereeError::Auth => "auth",
            RefereeError::Conflict(_) => "conflict",
            RefereeError::UnknownToken => "unknown_token",
            RefereeError::SessionOver(_) => "session_over",
            RefereeError::SessionOpen(_) => "session_open",
            RefereeError::NotFound(_) => "not_found",
            RefereeError::Validation(_) => "validation",
            RefereeError::BadRequest(_) => "bad_request",
            _ => "internal",
        }
    }
}
