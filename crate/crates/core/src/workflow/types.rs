use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::compose::{Condition, InstructionBundle, Resolution, ResolvedExample};
use crate::eval::{Decision, Label, StageOneCoding};
use crate::model::ImageId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Find,
    Resolve,
    Label,
    Complete,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Whether FIND workers see earlier submissions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CollaborationMode {
    /// Each worker sees only the seed example.
    None,
    /// Workers see the seed followed by every earlier submission, unfiltered.
    Feed,
}

impl FromStr for CollaborationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(CollaborationMode::None),
            "feed" => Ok(CollaborationMode::Feed),
            other => Err(format!("unknown collaboration mode `{other}` (expected none or feed)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SeedExample {
    /// Manifest image id or external locator.
    pub image_uri: String,
    pub concept_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AmbiguousSubmission {
    pub id: String,
    pub project_id: String,
    pub iteration: u32,
    pub worker_id: String,
    pub image_uri: String,
    pub concept_tag: String,
    pub submitted_at: DateTime<Utc>,
    /// Sequence number of the event that recorded the submission.
    pub seq: u64,
    #[serde(default)]
    pub coding: Option<StageOneCoding>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssignmentState {
    Open,
    Submitted,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Assignment {
    pub id: String,
    pub project_id: String,
    pub worker_id: String,
    pub condition: Condition,
    pub iteration: u32,
    pub batch: Vec<ImageId>,
    pub labels: BTreeMap<ImageId, Label>,
    pub state: AssignmentState,
    pub created_at: DateTime<Utc>,
}

impl Assignment {
    pub fn is_terminal(&self) -> bool {
        self.state != AssignmentState::Open
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FeedEntry {
    /// `None` for the requester's seed example.
    pub submission_id: Option<String>,
    pub image_uri: String,
    pub concept_tag: String,
}

/// Full state of one project, rebuilt from its events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Project {
    pub id: String,
    pub manifest_ref: String,
    pub intent_id: String,
    pub experiment_group: String,
    pub stage: Stage,
    pub iteration: u32,
    pub seed_example: SeedExample,
    pub collaboration_mode: CollaborationMode,
    pub created_at: DateTime<Utc>,
    pub submissions: Vec<AmbiguousSubmission>,
    pub resolution: Resolution,
    /// Output of the current iteration's committed resolution.
    pub resolved: Option<Vec<ResolvedExample>>,
    pub bundles: BTreeMap<Condition, InstructionBundle>,
    pub assignments: BTreeMap<String, Assignment>,
    pub last_seq: u64,
}

/// A state-changing operation as recorded in the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case", rename_all_fields = "camelCase")]
pub enum Event {
    ProjectCreated {
        project_id: String,
        manifest_ref: String,
        intent_id: String,
        experiment_group: String,
        seed_example: SeedExample,
        collaboration_mode: CollaborationMode,
    },
    SubmissionAdded {
        submission_id: String,
        worker_id: String,
        image_uri: String,
        concept_tag: String,
    },
    SubmissionCoded {
        coding: StageOneCoding,
    },
    FindClosed {},
    ResolutionToggled {
        target_id: String,
    },
    ResolutionCommitted {},
    BundleComposed {
        condition: Condition,
        k: Option<usize>,
        rng_seed: u64,
    },
    AssignmentCreated {
        assignment_id: String,
        worker_id: String,
        condition: Condition,
        batch: Vec<ImageId>,
    },
    LabelSubmitted {
        assignment_id: String,
        image_id: ImageId,
        label: Label,
    },
    AssignmentExpired {
        assignment_id: String,
    },
    StageAdvanced {
        decision: Decision,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::ProjectCreated { .. } => "project_created",
            Event::SubmissionAdded { .. } => "submission_added",
            Event::SubmissionCoded { .. } => "submission_coded",
            Event::FindClosed {} => "find_closed",
            Event::ResolutionToggled { .. } => "resolution_toggled",
            Event::ResolutionCommitted {} => "resolution_committed",
            Event::BundleComposed { .. } => "bundle_composed",
            Event::AssignmentCreated { .. } => "assignment_created",
            Event::LabelSubmitted { .. } => "label_submitted",
            Event::AssignmentExpired { .. } => "assignment_expired",
            Event::StageAdvanced { .. } => "stage_advanced",
        }
    }
}

/// One line of `events.jsonl`: `{seq, kind, payload, occurredAt}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
    pub occurred_at: DateTime<Utc>,
}
