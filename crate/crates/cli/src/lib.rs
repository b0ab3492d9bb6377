//! Experiment pipeline around the `mlgface` library: dataset manifests,
//! synthetic data, stage-by-stage processing with persisted artifacts and
//! the evaluation reports.

pub mod commands;
pub mod config;
pub mod imageio;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod run;
pub mod synth;

pub use config::{ExperimentConfig, MaskMode, Method};
pub use run::{run_pipeline, RunOutput};
pub use synth::{synth_dataset, SynthSpec};
