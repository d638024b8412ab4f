//! Command-line pipeline around the `ecpuct` analysis library.
//!
//! The binary wires five commands — `synth`, `compress`, `detect`,
//! `features` and `pipeline` — to the library, reading one TOML
//! configuration file and writing TCUBE volumes, CSV tables and a
//! `key=value` run manifest into an output directory.  The command
//! functions live here (rather than in `main.rs`) so integration tests can
//! drive them in-process.

pub mod commands;
pub mod config;

pub use commands::{
    auto_rois, cmd_compress, cmd_detect, cmd_features, cmd_pipeline, cmd_synth, load_cube,
    DetectSummary, FeatureRun, FeaturesSummary, Manifest, PipelineSummary,
};
pub use config::{load_config, load_scene, DetectorChoice, PipelineConfig, SceneConfig};
