//! Simulation requests shared by `POST /simulations` and `aw simulate`.

use std::fmt::Write as _;

use serde::Deserialize;

use aw_core::model::DatasetManifest;
use aw_core::sim::{ordering_experiment, OrderingReport, Preset};

use crate::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SimFormat {
    #[default]
    Json,
    Csv,
}

/// A builtin preset name or a full preset document.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PresetSpec {
    Name(String),
    Inline(Box<Preset>),
}

impl Default for PresetSpec {
    fn default() -> Self {
        PresetSpec::Name("default".into())
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SimulationRequest {
    #[serde(default)]
    pub preset: PresetSpec,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub intent_id: Option<String>,
    #[serde(default)]
    pub format: SimFormat,
}

impl SimulationRequest {
    /// Resolves the preset and applies overrides. Names are builtin only.
    pub fn preset(&self) -> Result<Preset, ApiError> {
        let mut preset = match &self.preset {
            PresetSpec::Name(name) => Preset::builtin(name)?,
            PresetSpec::Inline(p) => (**p).clone(),
        };
        apply_overrides(&mut preset, self.trials, self.seed, self.intent_id.as_deref());
        Ok(preset)
    }
}

pub fn apply_overrides(preset: &mut Preset, trials: Option<u64>, seed: Option<u64>, intent: Option<&str>) {
    if let Some(t) = trials {
        preset.trials = t;
    }
    if let Some(s) = seed {
        preset.master_seed = s;
    }
    if let Some(i) = intent {
        preset.intent_id = i.to_owned();
    }
}

pub fn run(manifest: &DatasetManifest, preset: &Preset) -> Result<OrderingReport, ApiError> {
    if preset.trials == 0 {
        return Err(ApiError::validation("trials must be positive"));
    }
    Ok(ordering_experiment(manifest, &preset.intent_id, preset)?)
}

/// One row per condition in fixed order, accuracies in percent.
pub fn table_csv(report: &OrderingReport) -> String {
    let mut out = String::from(
        "task,condition,per_label_accuracy,per_label_half_width,majority_accuracy,majority_half_width,agreement_mean\n",
    );
    for r in &report.results {
        let _ = writeln!(
            out,
            "{},{},{:.1},{:.2},{:.1},{:.2},{:.3}",
            report.intent_id,
            r.condition.display_name(),
            100.0 * r.per_label_accuracy,
            100.0 * r.half_widths.per_label_accuracy,
            100.0 * r.majority_accuracy,
            100.0 * r.half_widths.majority_accuracy,
            r.agreement_mean,
        );
    }
    out
}

pub fn render(report: &OrderingReport, format: SimFormat) -> Result<String, ApiError> {
    Ok(match format {
        SimFormat::Json => serde_json::to_string_pretty(report).map_err(|e| ApiError::new("internal", e.to_string()))?,
        SimFormat::Csv => table_csv(report),
    })
}
