//! Synthetic scenarios, the end-to-end experiment runner and the `trkt` command line.

pub mod cli;
pub mod dataset;
pub mod experiment;
pub mod scenario;

pub use dataset::{Dataset, FrameData, Manifest};
pub use experiment::{run_experiment, run_on_dataset, ExperimentReport, RunConfig};
pub use scenario::{synth_scenario, DetectorNoise, ScenarioConfig};
