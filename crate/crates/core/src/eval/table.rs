//! CSV renderings of evaluation reports.
//!
//! * [`Layout::Conditions`]: one row per condition, one column per task.
//! * [`Layout::Categories`]: one row per condition, one column per category.
//! * [`Layout::Ambiguity`]: one row per task and condition with the
//!   ambiguous/unambiguous split and the matching majority-vote accuracies.
//!
//! Empty cells mean no labels were collected for that combination.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Breakdown, EvaluationReport, Rate};
use crate::compose::Condition;
use crate::model::DatasetManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    Conditions,
    Categories,
    Ambiguity,
}

impl FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "conditions" => Ok(Layout::Conditions),
            "categories" => Ok(Layout::Categories),
            "ambiguity" => Ok(Layout::Ambiguity),
            other => Err(format!(
                "unknown layout `{other}` (expected conditions, categories or ambiguity)"
            )),
        }
    }
}

fn cell(rate: Option<&Rate>) -> String {
    match rate {
        Some(r) if r.total > 0 => r.to_string(),
        _ => String::new(),
    }
}

fn finish(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

pub fn render(layout: Layout, reports: &[EvaluationReport], manifest: &DatasetManifest) -> String {
    match layout {
        Layout::Conditions => conditions_csv(reports),
        Layout::Categories => categories_csv(reports, manifest),
        Layout::Ambiguity => ambiguity_csv(reports),
    }
}

pub fn conditions_csv(reports: &[EvaluationReport]) -> String {
    let mut rows = vec![std::iter::once("condition".to_owned())
        .chain(reports.iter().map(|r| r.intent_id.clone()))
        .collect::<Vec<_>>()];
    for c in Condition::ALL {
        let mut row = vec![c.display_name().to_owned()];
        row.extend(reports.iter().map(|r| cell(r.conditions.get(&c).map(|b| &b.accuracy))));
        rows.push(row);
    }
    finish(rows)
}

/// Per-category layout; with several reports the categories of each task
/// appear in consecutive blocks prefixed by the task id.
pub fn categories_csv(reports: &[EvaluationReport], manifest: &DatasetManifest) -> String {
    let mut rows = Vec::new();
    let mut header = vec!["task".to_owned(), "condition".to_owned()];
    header.extend(manifest.categories.iter().map(|c| c.id.clone()));
    rows.push(header);
    for r in reports {
        for c in Condition::ALL {
            let Some(b) = r.conditions.get(&c) else { continue };
            let mut row = vec![r.intent_id.clone(), c.display_name().to_owned()];
            row.extend(manifest.categories.iter().map(|cat| cell(b.per_category.get(&cat.id))));
            rows.push(row);
        }
    }
    finish(rows)
}

pub fn ambiguity_csv(reports: &[EvaluationReport]) -> String {
    let mut rows = vec![[
        "task",
        "condition",
        "unambiguous",
        "ambiguous",
        "majority_unambiguous",
        "majority_ambiguous",
    ]
    .map(String::from)
    .to_vec()];
    for r in reports {
        for (c, b) in &r.conditions {
            rows.push(ambiguity_row(&r.intent_id, c.display_name(), b));
        }
    }
    finish(rows)
}

fn ambiguity_row(task: &str, condition: &str, b: &Breakdown) -> Vec<String> {
    vec![
        task.to_owned(),
        condition.to_owned(),
        cell(Some(&b.unambiguous)),
        cell(Some(&b.ambiguous)),
        cell(Some(&b.majority_unambiguous)),
        cell(Some(&b.majority_ambiguous)),
    ]
}
