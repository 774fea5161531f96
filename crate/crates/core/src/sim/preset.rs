//! Parameter presets and the condition-ordering experiment.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cohort::{run_cohort_detailed, standard_error, SimulationConfig, SimulationResult};
use super::worker::{SlotIndex, WorkerModel};
use super::SimError;
use crate::compose::{compose_instructions, Condition, Polarity, PoolExample, ResolvedExample};
use crate::model::{derive_partition, CategoryId, DatasetManifest, GoldPartition, ImageId};

const BUILTIN_PRESETS: &[(&str, &str)] = &[
    ("default", include_str!("../../../../fixtures/presets/default.json")),
    ("no_boost", include_str!("../../../../fixtures/presets/no_boost.json")),
];

/// A resolved example used to build the simulated instructions. Its
/// polarity follows from the category under the simulated intent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PresetExample {
    pub image_uri: String,
    pub concept_tag: String,
    pub category_id: CategoryId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Preset {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub intent_id: String,
    pub cohort_size: usize,
    pub trials: u64,
    pub master_seed: u64,
    /// Images per batch; `None` labels every image outside the example pool.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub batch_seed: u64,
    #[serde(flatten)]
    pub model: WorkerModel<f64>,
    pub resolved_examples: Vec<PresetExample>,
    /// Random examples shown under B1; defaults to the resolved count.
    #[serde(default)]
    pub b1_examples: Option<usize>,
    #[serde(default)]
    pub compose_seed: u64,
}

impl Preset {
    pub fn from_json_str(s: &str) -> Result<Self, SimError> {
        serde_json::from_str(s).map_err(|e| SimError::Preset(e.to_string()))
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN_PRESETS.iter().map(|(n, _)| *n)
    }

    pub fn builtin(name: &str) -> Result<Self, SimError> {
        let (_, text) = BUILTIN_PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| SimError::UnknownPreset(name.to_owned()))?;
        Self::from_json_str(text)
    }

    /// Resolves a builtin name, or reads the file when `name_or_path` is one.
    pub fn load(name_or_path: &str) -> Result<Self, SimError> {
        let path = Path::new(name_or_path);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|e| SimError::Preset(e.to_string()))?;
            return Self::from_json_str(&text);
        }
        Self::builtin(name_or_path)
    }

    pub fn resolved(&self, gold_intent: &GoldIntent<'_>) -> Vec<ResolvedExample> {
        let mut out: Vec<ResolvedExample> = self
            .resolved_examples
            .iter()
            .map(|ex| ResolvedExample {
                image_uri: ex.image_uri.clone(),
                concept_tag: ex.concept_tag.clone(),
                polarity: gold_intent.polarity_of_category(&ex.category_id),
            })
            .collect();
        out.sort_by_key(|e| e.polarity);
        out
    }

    pub fn slot_index(&self, manifest: &DatasetManifest) -> SlotIndex {
        let mut idx = SlotIndex::default();
        for img in &manifest.images {
            idx.by_uri.insert(img.uri.clone(), img.category_id.clone());
        }
        for ex in &self.resolved_examples {
            idx.by_uri.insert(ex.image_uri.clone(), ex.category_id.clone());
            idx.by_tag.insert(ex.concept_tag.clone(), ex.category_id.clone());
        }
        idx
    }

    pub fn batch(&self, manifest: &DatasetManifest) -> Result<Vec<ImageId>, SimError> {
        let eligible: Vec<ImageId> = manifest.labelable_images().into_iter().map(|i| i.id.clone()).collect();
        match self.batch_size {
            None => Ok(eligible),
            Some(k) if k > eligible.len() => Err(SimError::BatchTooLarge {
                requested: k,
                available: eligible.len(),
            }),
            Some(k) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.batch_seed);
                Ok(index::sample(&mut rng, eligible.len(), k)
                    .into_iter()
                    .map(|i| eligible[i].clone())
                    .collect())
            }
        }
    }
}

/// An intent's gold partition together with the manifest it came from.
pub struct GoldIntent<'a> {
    pub manifest: &'a DatasetManifest,
    pub gold: GoldPartition,
    pub question: String,
    positive_categories: Vec<CategoryId>,
}

impl<'a> GoldIntent<'a> {
    pub fn new(manifest: &'a DatasetManifest, intent_id: &str) -> Result<Self, SimError> {
        let intent = manifest.intent(intent_id)?;
        Ok(Self {
            manifest,
            gold: derive_partition(manifest, intent_id)?,
            question: intent.question_text.clone(),
            positive_categories: intent.positive_category_ids.iter().cloned().collect(),
        })
    }

    pub fn polarity_of_category(&self, category: &str) -> Polarity {
        if self.positive_categories.iter().any(|c| c == category) {
            Polarity::Positive
        } else {
            Polarity::Negative
        }
    }

    /// The manifest's example pool, labelled by the gold partition.
    pub fn example_pool(&self) -> Vec<PoolExample> {
        self.manifest
            .images
            .iter()
            .filter(|i| self.manifest.example_pool.contains(&i.id))
            .map(|i| PoolExample {
                image_uri: i.uri.clone(),
                polarity: if self.gold.positive.contains(&i.id) {
                    Polarity::Positive
                } else {
                    Polarity::Negative
                },
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Gap {
    pub lower: Condition,
    pub higher: Condition,
    pub difference: f64,
    /// Standard error of the paired per-trial difference.
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct OrderingReport {
    pub preset: Preset,
    pub intent_id: String,
    pub results: Vec<SimulationResult>,
    /// Conditions sorted by expected per-label accuracy, lowest first.
    pub ordering: Vec<(Condition, f64)>,
    /// Gaps between neighbours in `ordering`.
    pub gaps: Vec<Gap>,
    #[serde(skip)]
    per_trial: BTreeMap<Condition, Vec<f64>>,
}

impl OrderingReport {
    pub fn result(&self, condition: Condition) -> Option<&SimulationResult> {
        self.results.iter().find(|r| r.condition == condition)
    }

    /// Paired accuracy difference `higher - lower` under common random numbers.
    pub fn gap(&self, lower: Condition, higher: Condition) -> Option<Gap> {
        let lo = self.per_trial.get(&lower)?;
        let hi = self.per_trial.get(&higher)?;
        let diffs: Vec<f64> = hi.iter().zip(lo).map(|(h, l)| h - l).collect();
        let difference = diffs.iter().sum::<f64>() / diffs.len().max(1) as f64;
        Some(Gap {
            lower,
            higher,
            difference,
            standard_error: standard_error(&diffs),
        })
    }
}

/// Runs every condition under `preset` with shared seeds and ranks them by
/// expected per-label accuracy.
pub fn ordering_experiment(
    manifest: &DatasetManifest,
    intent_id: &str,
    preset: &Preset,
) -> Result<OrderingReport, SimError> {
    let intent = GoldIntent::new(manifest, intent_id)?;
    let resolved = preset.resolved(&intent);
    let pool = intent.example_pool();
    let slot_index = preset.slot_index(manifest);
    let batch = preset.batch(manifest)?;

    let mut results = Vec::new();
    let mut per_trial = BTreeMap::new();
    for condition in Condition::ALL {
        let bundle = compose_instructions(
            &intent.question,
            condition,
            &resolved,
            &pool,
            preset.b1_examples,
            preset.compose_seed,
        )?;
        let config = SimulationConfig {
            manifest,
            intent_id: intent_id.to_owned(),
            condition,
            bundle,
            slot_index: slot_index.clone(),
            cohort_size: preset.cohort_size,
            batch: batch.clone(),
            trials: preset.trials,
            master_seed: preset.master_seed,
        };
        let run = run_cohort_detailed(&config, std::slice::from_ref(&preset.model))?;
        per_trial.insert(condition, run.per_trial_accuracy);
        results.push(run.result);
    }

    let mut ordering: Vec<(Condition, f64)> = results
        .iter()
        .map(|r| (r.condition, r.per_label_accuracy))
        .collect();
    ordering.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let mut report = OrderingReport {
        preset: preset.clone(),
        intent_id: intent_id.to_owned(),
        results,
        ordering,
        gaps: Vec::new(),
        per_trial,
    };
    report.gaps = report
        .ordering
        .windows(2)
        .filter_map(|w| report.gap(w[0].0, w[1].0))
        .collect();
    Ok(report)
}
