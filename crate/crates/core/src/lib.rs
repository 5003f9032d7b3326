//! Episodic autotuner for communication-library control variables.
//!
//! Each application run is one episode: the tuner exports control-variable
//! settings before the run, ingests a performance report after it, and uses
//! deep Q-learning over standardized performance features to pick a one-step
//! change for the next run. After an exploration phase, [`ensemble::recommend`]
//! condenses the good runs into a single configuration.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common case.

pub mod agent;
pub mod cli;
pub mod ensemble;
pub mod error;
pub mod scalar;
pub mod simulator;
pub mod state;
pub mod store;
pub mod variables;

pub use error::{Error, ErrorClass, Result};
pub use scalar::Scalar;

pub type QNetworkF64 = agent::QNetwork<f64>;
pub type QNetworkF32 = agent::QNetwork<f32>;
pub type TransitionF64 = agent::Transition<f64>;
pub type StateVectorF64 = state::StateVector<f64>;
pub type PerformanceStatsF64 = variables::PerformanceStats<f64>;
pub type ExperienceStoreF64 = store::ExperienceStore<f64>;
pub type ExperienceStoreF32 = store::ExperienceStore<f32>;
pub type RunRecordF64 = store::RunRecord<f64>;
pub type SyntheticPlantF64 = simulator::SyntheticPlant<f64>;
