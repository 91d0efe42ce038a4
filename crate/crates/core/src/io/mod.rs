//! File formats: sample CSV, truth sidecar, NDJSON events, model documents,
//! scenario configs and the evaluation harness.

pub mod eval;
pub mod events;
pub mod model_file;
pub mod samples;
pub mod scenario;

pub use eval::{eval_match, EvalSummary, MatchRecord, TruthWindow};
pub use events::{emit_event, parse_event, read_events, NdjsonSink};
pub use model_file::{parse_model, serialize_model, MODEL_VERSION};
pub use samples::{read_truth, write_samples, write_truth, CsvSamples, TruthRow};
pub use scenario::{load_scenario, parse_scenario};

use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;

/// Pipeline settings from TOML; omitted keys keep their defaults.
pub fn parse_pipeline_config(text: &str) -> Result<PipelineConfig> {
    let config: PipelineConfig =
        toml::from_str(text).map_err(|e| Error::Malformed(format!("pipeline config: {}", e.message())))?;
    config.validate()?;
    Ok(config)
}
