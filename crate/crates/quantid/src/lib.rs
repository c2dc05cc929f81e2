//! Online identification of linear models observed through a quantizer.
//!
//! Observations reveal only which threshold cell the latent value
//! `phi' theta + noise` fell into. The crate's core is a two-step
//! absolute-deviation estimator that couples a conservative preliminary
//! recursion with an accelerated one driven by divided-difference gains, both
//! projected onto a known compact box. Around it sit an l2 baseline built on
//! the same machinery, scenario simulation with regret and accuracy tracking,
//! dataset fitting, and Monte-Carlo diagnostics.

pub mod baseline;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod diagnostics;
pub mod estimator;
pub mod geometry;
pub mod noise;
pub mod quantizer;
pub mod simulation;

pub use estimator::{AdaConfig, AdaState, Observation, StepDiagnostics};
pub use geometry::{project_weighted, BoxDomain, WeightMatrix};
pub use noise::NoiseModel;
pub use quantizer::QuantizerSpec;
pub use simulation::{run_trajectory, Algorithm, ScenarioKind, ScenarioSpec, TrajectoryMetrics};
