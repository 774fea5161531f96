//! Stage-1 coding metrics, label aggregation and accuracy reporting.

mod coding;
mod rate;
mod report;
pub mod table;
mod vote;

use thiserror::Error;

pub use coding::{stage_one_metrics, CodingSheet, StageOneCoding, StageOneMetrics};
pub use rate::Rate;
pub use report::{
    accuracy_report, quality_gate, Breakdown, Decision, EvaluationReport, GateBasis, ImageSummary,
};
pub use vote::{consensus_from_counts, majority_vote, read_label_records, ConsensusResult, Label, LabelRecord};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("a submission cannot be useful unless it is correct")]
    UsefulWithoutCorrect,
    #[error("incorrect submissions cannot belong to a uniqueness group")]
    GroupOnIncorrect,
    #[error("stage-one total must be positive and at least the number of codings ({codings}), got {total}")]
    BadTotal { total: u64, codings: usize },
    #[error("cannot aggregate an empty label set")]
    EmptyLabels,
    #[error("labels for image `{0}` mixed with labels for other images")]
    MixedImages(String),
    #[error("label references unknown image `{0}`")]
    UnknownImage(String),
    #[error("malformed label record on line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
}
