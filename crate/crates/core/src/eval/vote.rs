use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::compose::Condition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Yes,
    No,
}

impl Label {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Yes
        } else {
            Label::No
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Yes => Label::No,
            Label::No => Label::Yes,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Yes => "Yes",
            Label::No => "No",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "yes" | "y" | "1" | "true" => Ok(Label::Yes),
            "no" | "n" | "0" | "false" => Ok(Label::No),
            other => Err(format!("`{other}` is not a label (expected yes or no)")),
        }
    }
}

/// One worker's answer for one image, as exported in `labels.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LabelRecord {
    pub assignment_id: String,
    pub worker_id: String,
    pub image_id: String,
    pub label: Label,
    pub condition: Condition,
    pub project_id: String,
}

/// Reads newline-delimited label records; blank lines are skipped.
pub fn read_label_records<R: BufRead>(reader: R) -> Result<Vec<LabelRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let malformed = |message: String| EvalError::MalformedRecord { line: i + 1, message };
        let line = line.map_err(|e| malformed(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConsensusResult {
    pub image_id: String,
    pub consensus: Label,
    pub yes: u64,
    pub no: u64,
    /// Share of voters agreeing with the consensus, `max(yes, no) / (yes + no)`.
    pub agreement: f64,
    pub tie: bool,
}

/// Consensus for a vote tally. Ties resolve to `No` with the tie flag set.
pub fn consensus_from_counts(image_id: &str, yes: u64, no: u64) -> Result<ConsensusResult, EvalError> {
    let n = yes + no;
    if n == 0 {
        return Err(EvalError::EmptyLabels);
    }
    let tie = yes == no;
    let consensus = if yes > no { Label::Yes } else { Label::No };
    Ok(ConsensusResult {
        image_id: image_id.to_owned(),
        consensus,
        yes,
        no,
        agreement: yes.max(no) as f64 / n as f64,
        tie,
    })
}

/// Majority vote over the labels collected for a single image.
pub fn majority_vote(labels: &[LabelRecord]) -> Result<ConsensusResult, EvalError> {
    let first = labels.first().ok_or(EvalError::EmptyLabels)?;
    if let Some(other) = labels.iter().find(|r| r.image_id != first.image_id) {
        return Err(EvalError::MixedImages(other.image_id.clone()));
    }
    let yes = labels.iter().filter(|r| r.label == Label::Yes).count() as u64;
    consensus_from_counts(&first.image_id, yes, labels.len() as u64 - yes)
}
