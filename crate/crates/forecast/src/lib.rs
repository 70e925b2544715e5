//! Station rainfall forecasting pipeline built on `telerain-core`: input
//! and artifact formats, stage orchestration, map rendering and a
//! synthetic teleconnection dataset.

pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod pipeline;
pub mod render;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{PipelineError, Result};
pub use pipeline::{Pipeline, Stage, StageOutcome};
