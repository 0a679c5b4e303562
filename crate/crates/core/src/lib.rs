//! Deterministic federated-learning simulation with entropy-based aggregation.
//!
//! The crate is organised bottom-up:
//!
//! - [`math`]: parameter vectors, simplex weights, seeded randomness and the
//!   softmax / entropy / divergence / fair-angle primitives.
//! - [`objective`]: client loss functions (quadratics, generalized linear
//!   regression, softmax-regression and one-hidden-layer classifiers).
//! - [`data`]: synthetic datasets and non-IID partitioning.
//! - [`aggregation`]: server weighting rules, temperature schedules and the
//!   q-FFL server step.
//! - [`trainer`]: the round state machine for FedAvg, q-FFL and FedEBA+.
//! - [`analysis`]: fairness metrics and closed-form oracles.

pub mod aggregation;
pub mod analysis;
pub mod data;
pub mod error;
pub mod math;
pub mod objective;
pub mod trainer;

pub use error::{Error, Result};
pub use math::{ParamVector, SeededRng, SimplexWeights};
pub use objective::{LocalObjective, Subset};
pub use trainer::{Federation, RoundReport, TrainerConfig};
