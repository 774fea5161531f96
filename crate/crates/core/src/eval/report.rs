use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::vote::{consensus_from_counts, ConsensusResult, Label, LabelRecord};
use super::{EvalError, Rate};
use crate::compose::Condition;
use crate::model::{CategoryId, DatasetManifest, GoldPartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Complete,
    Iterate,
}

/// What the quality gate compares against its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateBasis {
    /// Per-label accuracy against the gold partition.
    Gold,
    /// Mean consensus agreement, for tasks without gold answers.
    Agreement,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ImageSummary {
    pub image_id: String,
    pub category_id: CategoryId,
    pub ambiguous: bool,
    pub gold: Label,
    pub consensus: ConsensusResult,
    pub majority_correct: bool,
}

/// Accuracy statistics over one set of label records.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Breakdown {
    /// Per-label accuracy over every record.
    pub accuracy: Rate,
    /// Per-label accuracy restricted to each category, keyed by category id.
    pub per_category: BTreeMap<CategoryId, Rate>,
    pub ambiguous: Rate,
    pub unambiguous: Rate,
    /// Share of images whose majority vote matches gold.
    pub majority: Rate,
    pub majority_ambiguous: Rate,
    pub majority_unambiguous: Rate,
    pub mean_agreement: f64,
    pub images: Vec<ImageSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EvaluationReport {
    pub intent_id: String,
    pub overall: Breakdown,
    pub conditions: BTreeMap<Condition, Breakdown>,
}

struct ImageTally {
    yes: u64,
    no: u64,
}

fn breakdown(
    records: &[&LabelRecord],
    gold: &GoldPartition,
    manifest: &DatasetManifest,
) -> Result<Breakdown, EvalError> {
    let mut per_category: BTreeMap<CategoryId, Rate> = BTreeMap::new();
    let mut tallies: BTreeMap<&str, ImageTally> = BTreeMap::new();
    let mut accuracy = Rate::new(0, 0);
    let mut ambiguous = Rate::new(0, 0);
    let mut unambiguous = Rate::new(0, 0);

    for r in records {
        let image = manifest
            .image(&r.image_id)
            .map_err(|_| EvalError::UnknownImage(r.image_id.clone()))?;
        let category = manifest
            .category(&image.category_id)
            .map_err(|_| EvalError::UnknownImage(r.image_id.clone()))?;
        let positive = gold
            .is_positive(&r.image_id)
            .ok_or_else(|| EvalError::UnknownImage(r.image_id.clone()))?;
        let hit = Rate::new(u64::from(r.label == Label::from_bool(positive)), 1);
        accuracy += hit;
        let cat = per_category
            .entry(category.id.clone())
            .or_insert(Rate::new(0, 0));
        *cat += hit;
        if category.ambiguous {
            ambiguous += hit;
        } else {
            unambiguous += hit;
        }
        let t = tallies.entry(r.image_id.as_str()).or_insert(ImageTally { yes: 0, no: 0 });
        match r.label {
            Label::Yes => t.yes += 1,
            Label::No => t.no += 1,
        }
    }

    let mut images = Vec::with_capacity(tallies.len());
    let mut majority = Rate::new(0, 0);
    let mut majority_ambiguous = Rate::new(0, 0);
    let mut majority_unambiguous = Rate::new(0, 0);
    let mut agreement_sum = 0.0;
    // manifest order keeps reports stable and readable
    for image in &manifest.images {
        let Some(t) = tallies.get(image.id.as_str()) else {
            continue;
        };
        let category = manifest
            .category(&image.category_id)
            .map_err(|_| EvalError::UnknownImage(image.id.clone()))?;
        let gold_label = Label::from_bool(gold.is_positive(&image.id).unwrap_or(false));
        let consensus = consensus_from_counts(&image.id, t.yes, t.no)?;
        let hit = consensus.consensus == gold_label;
        let r = Rate::new(u64::from(hit), 1);
        majority += r;
        if category.ambiguous {
            majority_ambiguous += r;
        } else {
            majority_unambiguous += r;
        }
        agreement_sum += consensus.agreement;
        images.push(ImageSummary {
            image_id: image.id.clone(),
            category_id: image.category_id.clone(),
            ambiguous: category.ambiguous,
            gold: gold_label,
            consensus,
            majority_correct: hit,
        });
    }
    let mean_agreement = if images.is_empty() {
        0.0
    } else {
        agreement_sum / images.len() as f64
    };

    Ok(Breakdown {
        accuracy,
        per_category,
        ambiguous,
        unambiguous,
        majority,
        majority_ambiguous,
        majority_unambiguous,
        mean_agreement,
        images,
    })
}

/// Scores label records against the gold partition, overall and per condition.
pub fn accuracy_report(
    labels: &[LabelRecord],
    gold: &GoldPartition,
    manifest: &DatasetManifest,
) -> Result<EvaluationReport, EvalError> {
    let all: Vec<&LabelRecord> = labels.iter().collect();
    let overall = breakdown(&all, gold, manifest)?;
    let mut by_condition: BTreeMap<Condition, Vec<&LabelRecord>> = BTreeMap::new();
    for r in labels {
        by_condition.entry(r.condition).or_default().push(r);
    }
    let conditions = by_condition
        .into_iter()
        .map(|(c, recs)| breakdown(&recs, gold, manifest).map(|b| (c, b)))
        .collect::<Result<_, _>>()?;
    Ok(EvaluationReport {
        intent_id: gold.intent_id.clone(),
        overall,
        conditions,
    })
}

/// Accept the labels or send the project back to FIND.
pub fn quality_gate(report: &Breakdown, threshold: f64, basis: GateBasis) -> Decision {
    let passed = match basis {
        GateBasis::Gold => {
            report.accuracy.total > 0
                && report.accuracy.correct as f64 >= threshold * report.accuracy.total as f64
        }
        GateBasis::Agreement => report.mean_agreement >= threshold,
    };
    if passed || threshold <= 0.0 {
        Decision::Complete
    } else {
        Decision::Iterate
    }
}
