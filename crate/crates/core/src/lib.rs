//! Crowdsourced annotation workflow: FIND ambiguous examples, RESOLVE them
//! into labeled instruction examples, LABEL under composed instructions.
//!
//! * [`model`]: dataset manifest, intents and gold partitions.
//! * [`workflow`]: event-sourced project lifecycle.
//! * [`compose`]: three-state resolution and instruction composition.
//! * [`eval`]: coding metrics, majority vote and accuracy reports.
//! * [`sim`]: simulated workers and the exact majority-vote oracle.

pub mod compose;
pub mod eval;
pub mod model;
pub mod sim;
pub mod workflow;

use num_bigint::BigInt;
use num_rational::Ratio;

/// Default floating-point scalar.
pub type Real = f64;
/// Exact rational scalar, for oracle arithmetic.
pub type Exact = Ratio<BigInt>;

pub type WorkerModelF64 = sim::WorkerModel<f64>;
pub type WorkerModelF32 = sim::WorkerModel<f32>;
