//! Pipeline, sample and trace data models; synthetic agentic workloads.

mod expand;
mod generate;
mod model;
mod trace;

use std::path::Path;

use thiserror::Error;

pub use expand::{
    contiguous_assignment, expand_to_trace, expand_with_roster, ActivitySegment, Assignment,
    ExpandOptions, Expansion, SampleActivity,
};
pub use generate::{
    decode_stats, generate_synthetic, DecodeStats, GeneratorConfig, LogNormalTokens, ToolLatency,
};
pub use model::{
    token_count, ForwardStepRecord, LatencyModel, PipelineId, PipelineSpec, ProfileTrace,
    SampleSpec, StageKind, TurnSpec, WorkerId,
};
pub use trace::{
    format_latency, format_trace, latency_path, load_trace, parse_latency, parse_trace, save_trace,
    TRACE_VERSION,
};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("sample {sample_id}: {reason}")]
    InvalidSample { sample_id: u32, reason: String },
    #[error("pipeline {pipeline}: {reason}")]
    InvalidPipeline { pipeline: PipelineId, reason: String },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("generator config: {0}")]
    Config(String),
    #[error("sample {sample_id} is not assigned to any worker")]
    Unassigned { sample_id: u32 },
    #[error("sample {sample_id} assigned to {worker}, which the pipeline does not have")]
    UnknownWorker { sample_id: u32, worker: WorkerId },
    #[error("latency model has no entry for bucket {bucket}")]
    MissingLatency { bucket: usize },
    #[error("latency model: {0}")]
    InvalidLatency(String),
    #[error("line {line}, field `{field}`: {msg}")]
    Parse { line: usize, field: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl WorkloadError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        WorkloadError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
