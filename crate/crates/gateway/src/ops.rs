//! Request shapes and helpers used by both the HTTP handlers and the CLI.

use std::sync::Arc;

use serde::Deserialize;

use aw_core::eval::table::{self, Layout};
use aw_core::eval::{quality_gate, Decision, EvaluationReport, GateBasis};
use aw_core::model::DatasetManifest;
use aw_core::workflow::{Engine, Project};

use crate::ApiError;

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AdvanceRequest {
    /// Explicit decision; otherwise the quality gate decides from `threshold`.
    pub decision: Option<Decision>,
    pub threshold: Option<f64>,
    pub basis: Option<GateBasis>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum StageRequest {
    Close,
    Advance(AdvanceRequest),
}

pub fn decide(engine: &Engine, project_id: &str, req: &AdvanceRequest) -> Result<Decision, ApiError> {
    match (req.decision, req.threshold) {
        (Some(d), None) => Ok(d),
        (None, Some(t)) => {
            if !(0.0..=1.0).contains(&t) {
                return Err(ApiError::validation("threshold must lie in [0, 1]"));
            }
            let report = engine.report(project_id)?;
            Ok(quality_gate(&report.overall, t, req.basis.unwrap_or(GateBasis::Gold)))
        }
        (Some(_), Some(_)) => Err(ApiError::validation("give either decision or threshold, not both")),
        (None, None) => Err(ApiError::validation("advance needs a decision or a threshold")),
    }
}

pub fn change_stage(engine: &Engine, project_id: &str, req: &StageRequest) -> Result<Arc<Project>, ApiError> {
    match req {
        StageRequest::Close => Ok(engine.close_find_stage(project_id)?),
        StageRequest::Advance(a) => {
            let decision = decide(engine, project_id, a)?;
            Ok(engine.advance_stage(project_id, decision)?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

pub fn parse_layout(s: Option<&str>) -> Result<Layout, ApiError> {
    match s {
        None => Ok(Layout::Ambiguity),
        Some(s) => s.parse().map_err(ApiError::validation),
    }
}

pub fn render_report(
    report: &EvaluationReport,
    manifest: &DatasetManifest,
    format: ReportFormat,
    layout: Layout,
) -> Result<String, ApiError> {
    match format {
        ReportFormat::Json => to_json(report),
        ReportFormat::Csv => Ok(table::render(layout, std::slice::from_ref(report), manifest)),
    }
}

pub fn to_json<T: serde::Serialize + ?Sized>(value: &T) -> Result<String, ApiError> {
    serde_json::to_string_pretty(value).map_err(|e| ApiError::new("internal", e.to_string()))
}
