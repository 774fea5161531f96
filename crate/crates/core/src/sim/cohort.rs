//! Monte Carlo cohort runner.
//!
//! Every (trial, worker) pair draws from its own ChaCha8 substream seeded by
//! `(master_seed, trial, worker_index, model.rng_stream_seed)`, so results do
//! not depend on how trials are scheduled across threads, and two conditions
//! run with the same master seed share random numbers image by image.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::worker::{sample_label, SlotIndex, WorkerModel};
use super::SimError;
use crate::compose::{Condition, InstructionBundle};
use crate::eval::{consensus_from_counts, Label};
use crate::model::{derive_partition, CategoryId, DatasetManifest, ImageId};

/// z-value of a two-sided 95% normal interval.
const Z95: f64 = 1.959_963_984_540_054;

/// Independent generator for one simulated worker in one trial.
pub fn substream(master_seed: u64, trial: u64, worker: u64, stream: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    for (chunk, word) in seed.chunks_exact_mut(8).zip([master_seed, trial, worker, stream]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

#[derive(Debug, Clone)]
pub struct SimulationConfig<'a> {
    pub manifest: &'a DatasetManifest,
    pub intent_id: String,
    pub condition: Condition,
    pub bundle: InstructionBundle,
    pub slot_index: SlotIndex,
    pub cohort_size: usize,
    pub batch: Vec<ImageId>,
    pub trials: u64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct HalfWidths {
    pub per_label_accuracy: f64,
    pub majority_accuracy: f64,
    pub agreement_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SimulationResult {
    pub condition: Condition,
    pub cohort_size: usize,
    pub batch_size: usize,
    pub trials: u64,
    pub exemplified_categories: BTreeSet<CategoryId>,
    pub per_label_accuracy: f64,
    pub majority_accuracy: f64,
    pub agreement_mean: f64,
    pub per_category_accuracy: BTreeMap<CategoryId, f64>,
    /// 95% normal-approximation half-widths of the trial means.
    pub half_widths: HalfWidths,
}

#[derive(Debug, Clone)]
pub(crate) struct TrialStats {
    pub correct_labels: u64,
    pub majority_correct: u64,
    pub agreement_sum: f64,
    pub per_category_correct: Vec<u64>,
}

pub(crate) struct CohortRun {
    pub result: SimulationResult,
    /// Per-trial per-label accuracy, in trial order.
    pub per_trial_accuracy: Vec<f64>,
}

struct PreparedImage {
    gold: Label,
    category_slot: usize,
}

fn mean_and_half_width(values: impl Iterator<Item = f64> + Clone, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, Z95 * (var / n as f64).sqrt())
}

/// Standard error of the mean of `values`.
pub(crate) fn standard_error(values: &[f64]) -> f64 {
    let (_, hw) = mean_and_half_width(values.iter().copied(), values.len() as u64);
    hw / Z95
}

pub(crate) fn run_cohort_detailed<T: Float + Send + Sync>(
    config: &SimulationConfig<'_>,
    models: &[WorkerModel<T>],
) -> Result<CohortRun, SimError> {
    if config.batch.is_empty() {
        return Err(SimError::EmptyBatch);
    }
    if config.cohort_size == 0 {
        return Err(SimError::EmptyCohort);
    }
    if config.trials == 0 {
        return Err(SimError::NoTrials);
    }
    if models.len() != 1 && models.len() != config.cohort_size {
        return Err(SimError::ModelCount {
            models: models.len(),
            cohort: config.cohort_size,
        });
    }
    let manifest = config.manifest;
    let gold = derive_partition(manifest, &config.intent_id)?;
    let exemplified = config.slot_index.exemplified_categories(&config.bundle);

    let mut categories: Vec<CategoryId> = Vec::new();
    let mut category_counts: Vec<u64> = Vec::new();
    let mut images = Vec::with_capacity(config.batch.len());
    for id in &config.batch {
        let item = manifest.image(id)?;
        let slot = match categories.iter().position(|c| *c == item.category_id) {
            Some(i) => i,
            None => {
                categories.push(item.category_id.clone());
                category_counts.push(0);
                categories.len() - 1
            }
        };
        category_counts[slot] += 1;
        images.push(PreparedImage {
            gold: Label::from_bool(gold.positive.contains(id)),
            category_slot: slot,
        });
    }

    // probability[worker][image]
    let probabilities: Vec<Vec<T>> = models
        .iter()
        .map(|m| {
            config
                .batch
                .iter()
                .zip(&images)
                .map(|(_, img)| {
                    m.correct_probability(&categories[img.category_slot], &exemplified, config.condition)
                })
                .collect::<Result<Vec<T>, SimError>>()
        })
        .collect::<Result<_, _>>()?;

    let n = config.cohort_size;
    let run_trial = |trial: u64| -> Result<TrialStats, SimError> {
        let mut yes = vec![0u64; images.len()];
        let mut correct_labels = 0u64;
        let mut per_category_correct = vec![0u64; categories.len()];
        for w in 0..n {
            let model_index = if models.len() == 1 { 0 } else { w };
            let mut rng = substream(
                config.master_seed,
                trial,
                w as u64,
                models[model_index].rng_stream_seed,
            );
            for (i, img) in images.iter().enumerate() {
                let label = sample_label(probabilities[model_index][i], img.gold, &mut rng);
                if label == Label::Yes {
                    yes[i] += 1;
                }
                if label == img.gold {
                    correct_labels += 1;
                    per_category_correct[img.category_slot] += 1;
                }
            }
        }
        let mut majority_correct = 0u64;
        let mut agreement_sum = 0.0;
        for (i, img) in images.iter().enumerate() {
            let c = consensus_from_counts("", yes[i], n as u64 - yes[i])?;
            if c.consensus == img.gold {
                majority_correct += 1;
            }
            agreement_sum += c.agreement;
        }
        Ok(TrialStats {
            correct_labels,
            majority_correct,
            agreement_sum,
            per_category_correct,
        })
    };

    let stats: Vec<TrialStats> = (0..config.trials)
        .into_par_iter()
        .map(run_trial)
        .collect::<Result<_, _>>()?;

    let labels_per_trial = (n * images.len()) as f64;
    let images_per_trial = images.len() as f64;
    let per_trial_accuracy: Vec<f64> = stats
        .iter()
        .map(|s| s.correct_labels as f64 / labels_per_trial)
        .collect();
    let (per_label_accuracy, hw_label) =
        mean_and_half_width(per_trial_accuracy.iter().copied(), config.trials);
    let (majority_accuracy, hw_majority) = mean_and_half_width(
        stats.iter().map(|s| s.majority_correct as f64 / images_per_trial),
        config.trials,
    );
    let (agreement_mean, hw_agreement) = mean_and_half_width(
        stats.iter().map(|s| s.agreement_sum / images_per_trial),
        config.trials,
    );
    let per_category_accuracy = categories
        .iter()
        .enumerate()
        .map(|(slot, c)| {
            let correct: u64 = stats.iter().map(|s| s.per_category_correct[slot]).sum();
            let total = category_counts[slot] * n as u64 * config.trials;
            (c.clone(), correct as f64 / total as f64)
        })
        .collect();

    Ok(CohortRun {
        result: SimulationResult {
            condition: config.condition,
            cohort_size: n,
            batch_size: images.len(),
            trials: config.trials,
            exemplified_categories: exemplified,
            per_label_accuracy,
            majority_accuracy,
            agreement_mean,
            per_category_accuracy,
            half_widths: HalfWidths {
                per_label_accuracy: hw_label,
                majority_accuracy: hw_majority,
                agreement_mean: hw_agreement,
            },
        },
        per_trial_accuracy,
    })
}

/// Simulates `config.trials` cohorts labeling the batch and averages the metrics.
///
/// `models` holds either one model shared by the whole cohort or one per worker.
pub fn run_cohort<T: Float + Send + Sync>(
    config: &SimulationConfig<'_>,
    models: &[WorkerModel<T>],
) -> Result<SimulationResult, SimError> {
    run_cohort_detailed(config, models).map(|r| r.result)
}
