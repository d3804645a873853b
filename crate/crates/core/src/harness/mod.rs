//! Experiment configs, the artifact cache and the staged pipeline that ties
//! the modules together.

mod cache;
mod config;
mod pipeline;

pub use cache::{Cache, CODE_VERSION};
pub use config::{
    AnalysisConfig, DactConfig, DactMode, DatasetConfig, ExperimentConfig, FeaturesConfig, GcpConfig, HrlConfig,
    HrlTaskKind, RepresentationConfig, ShapingConfig, SweepConfig,
};
pub use pipeline::{run, run_sweep, RunOptions, RunReport, Stage, StageReport, SweepCell};
