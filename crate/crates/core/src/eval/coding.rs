use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{EvalError, Rate};

/// Qualitative coding of one FIND submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StageOneCoding {
    pub submission_id: String,
    pub correct: bool,
    /// Submissions sharing a group id express the same concept. A correct
    /// submission without a group id is its own singleton concept.
    #[serde(default)]
    pub unique_group_id: Option<String>,
    pub useful: bool,
}

impl StageOneCoding {
    pub fn new(
        submission_id: impl Into<String>,
        correct: bool,
        unique_group_id: Option<String>,
        useful: bool,
    ) -> Result<Self, EvalError> {
        let coding = Self {
            submission_id: submission_id.into(),
            correct,
            unique_group_id,
            useful,
        };
        coding.validate()?;
        Ok(coding)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.useful && !self.correct {
            return Err(EvalError::UsefulWithoutCorrect);
        }
        if self.unique_group_id.is_some() && !self.correct {
            return Err(EvalError::GroupOnIncorrect);
        }
        Ok(())
    }

    fn concept_key(&self) -> ConceptKey<'_> {
        match &self.unique_group_id {
            Some(g) => ConceptKey::Group(g),
            None => ConceptKey::Single(&self.submission_id),
        }
    }
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
enum ConceptKey<'a> {
    Group(&'a str),
    Single(&'a str),
}

/// A batch of codings with the number of submissions they were drawn from,
/// as stored in coding fixture files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CodingSheet {
    #[serde(default)]
    pub condition: Option<String>,
    pub total: u64,
    pub codings: Vec<StageOneCoding>,
}

impl CodingSheet {
    pub fn from_json_str(s: &str) -> Result<Self, EvalError> {
        serde_json::from_str(s).map_err(|e| EvalError::MalformedRecord {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn metrics(&self) -> Result<StageOneMetrics, EvalError> {
        stage_one_metrics(&self.codings, self.total)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StageOneMetrics {
    pub total: u64,
    pub correct: Rate,
    pub unique: Rate,
    pub useful: Rate,
}

/// Correct, unique and useful shares of `total` FIND submissions.
///
/// Unique counts distinct concepts among correct submissions; useful counts
/// one representative per concept that has at least one useful submission,
/// so `useful <= unique <= correct` always holds.
pub fn stage_one_metrics(codings: &[StageOneCoding], total: u64) -> Result<StageOneMetrics, EvalError> {
    if total == 0 || (codings.len() as u64) > total {
        return Err(EvalError::BadTotal {
            total,
            codings: codings.len(),
        });
    }
    for c in codings {
        c.validate()?;
    }
    let correct = codings.iter().filter(|c| c.correct).count() as u64;
    let unique: BTreeSet<_> = codings
        .iter()
        .filter(|c| c.correct)
        .map(StageOneCoding::concept_key)
        .collect();
    let useful: BTreeSet<_> = codings
        .iter()
        .filter(|c| c.useful)
        .map(StageOneCoding::concept_key)
        .collect();
    Ok(StageOneMetrics {
        total,
        correct: Rate::new(correct, total),
        unique: Rate::new(unique.len() as u64, total),
        useful: Rate::new(useful.len() as u64, total),
    })
}
