//! FIND-RESOLVE-LABEL project lifecycle with event-sourced persistence.

mod engine;
mod state;
mod store;
mod types;

use thiserror::Error;

pub use engine::{
    canonical_state_of, replay, Clock, CreateProject, Engine, LabelReceipt, ManifestRegistry, SteppingClock,
    SystemClock,
    WorkerProfile,
};
pub use store::{EventStore, FileStore, MemoryStore};
pub use types::{
    AmbiguousSubmission, Assignment, AssignmentState, CollaborationMode, Event, EventRecord, FeedEntry,
    Project, SeedExample, Stage,
};

use crate::compose::ComposeError;
use crate::eval::EvalError;
use crate::model::ModelError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("unknown project `{0}`")]
    UnknownProject(String),
    #[error("unknown assignment `{0}`")]
    UnknownAssignment(String),
    #[error("unknown submission `{0}`")]
    UnknownSubmission(String),
    #[error("unknown manifest `{0}`")]
    UnknownManifest(String),
    #[error("unknown resolution target `{0}`")]
    UnknownTarget(String),
    #[error("operation requires stage {}, project is in {actual}", format_stages(.expected))]
    WrongStage { expected: Vec<Stage>, actual: Stage },
    #[error("{0}")]
    Validation(String),
    #[error("worker `{worker}` already submitted `{image_uri}` in this iteration")]
    DuplicateSubmission { worker: String, image_uri: String },
    #[error("worker `{worker}` already holds assignment `{assignment}` in experiment group `{group}`")]
    QualificationDenied {
        worker: String,
        group: String,
        assignment: String,
    },
    #[error("image `{image}` is not in the batch of assignment `{assignment}`")]
    ImageNotInBatch { assignment: String, image: String },
    #[error("image `{image}` is already labeled in assignment `{assignment}`")]
    DuplicateLabel { assignment: String, image: String },
    #[error("assignment `{0}` is no longer open")]
    AssignmentClosed(String),
    #[error("{0} assignment(s) are still open")]
    OpenAssignments(usize),
    #[error("project `{0}` already exists")]
    ProjectExists(String),
    #[error("resolution is already committed")]
    ResolutionCommitted,
    #[error("{0}")]
    Compose(String),
    #[error("{0}")]
    Eval(String),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("event log of `{project}` expected seq {expected}, found {found}")]
    SequenceGap { project: String, expected: u64, found: u64 },
    #[error("cannot replay `{project}` at seq {seq}: {message}")]
    Replay { project: String, seq: u64, message: String },
}

fn format_stages(stages: &[Stage]) -> String {
    stages.iter().map(Stage::to_string).collect::<Vec<_>>().join(" or ")
}

impl EngineError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::UnknownProject(_)
            | EngineError::UnknownAssignment(_)
            | EngineError::UnknownSubmission(_)
            | EngineError::UnknownManifest(_)
            | EngineError::UnknownTarget(_) => "not_found",
            EngineError::WrongStage { .. } => "wrong_stage",
            EngineError::QualificationDenied { .. } => "qualification_denied",
            EngineError::DuplicateSubmission { .. } | EngineError::DuplicateLabel { .. } => "duplicate",
            EngineError::AssignmentClosed(_)
            | EngineError::OpenAssignments(_)
            | EngineError::ProjectExists(_)
            | EngineError::ResolutionCommitted => "conflict",
            EngineError::Validation(_)
            | EngineError::ImageNotInBatch { .. }
            | EngineError::Compose(_)
            | EngineError::Eval(_) => "validation_failed",
            EngineError::Storage(_) => "storage_error",
            EngineError::SequenceGap { .. } | EngineError::Replay { .. } => "replay_error",
        }
    }
}

impl From<ModelError> for EngineError {
    fn from(e: ModelError) -> Self {
        EngineError::Validation(e.to_string())
    }
}

impl From<ComposeError> for EngineError {
    fn from(e: ComposeError) -> Self {
        match e {
            ComposeError::Committed => EngineError::ResolutionCommitted,
            ComposeError::UnknownTarget(t) => EngineError::UnknownTarget(t),
            other => EngineError::Compose(other.to_string()),
        }
    }
}

impl From<EvalError> for EngineError {
    fn from(e: EvalError) -> Self {
        EngineError::Eval(e.to_string())
    }
}

/// Project ids become directory names and assignment-id prefixes.
pub fn validate_project_id(id: &str) -> Result<(), EngineError> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(EngineError::Validation(format!(
            "project id `{id}` must be 1-64 characters of [A-Za-z0-9_-]"
        )))
    }
}
