//! Simulated crowd: worker models, an exact majority-vote oracle and a
//! seeded Monte Carlo cohort runner.

mod binomial;
mod cohort;
mod preset;
mod worker;

use thiserror::Error;

pub use binomial::{exact_binomial_majority, MAX_EXACT_COHORT};
pub use cohort::{run_cohort, substream, HalfWidths, SimulationConfig, SimulationResult};
pub use preset::{ordering_experiment, Gap, GoldIntent, OrderingReport, Preset, PresetExample};
pub use worker::{sample_label, Relatedness, SlotIndex, WorkerModel};

use crate::compose::ComposeError;
use crate::eval::EvalError;
use crate::model::ModelError;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("majority cohorts must be odd, got {0}")]
    EvenCohort(u32),
    #[error("cohort of {0} exceeds the exact-arithmetic limit")]
    CohortTooLarge(u32),
    #[error("probability must lie in [0, 1]")]
    InvalidProbability,
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("category `{0}` cannot be related to itself")]
    ReflexiveRelation(String),
    #[error("simulation batch is empty")]
    EmptyBatch,
    #[error("cohort size must be at least 1")]
    EmptyCohort,
    #[error("at least one trial is required")]
    NoTrials,
    #[error("expected 1 or {cohort} worker models, got {models}")]
    ModelCount { models: usize, cohort: usize },
    #[error("batch of {requested} requested but only {available} images are labelable")]
    BatchTooLarge { requested: usize, available: usize },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid preset: {0}")]
    Preset(String),
    #[error("{0}")]
    Model(String),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl From<ModelError> for SimError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::UnknownCategory(c) => SimError::UnknownCategory(c),
            other => SimError::Model(other.to_string()),
        }
    }
}
