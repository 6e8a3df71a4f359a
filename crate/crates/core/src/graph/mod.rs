//! Sub-stage graph: bucketized rollout sub-stages per DP worker, joined to
//! stage-level Reference and Training nodes.

mod bucket;
mod build;
mod dag;
mod export;
mod model;
mod synth;

use thiserror::Error;

pub use bucket::Buckets;
pub use build::{
    classify, construct_graph, construct_graph_with_roster, segment, GraphConfig, Segment,
    StageCosts, StepClass,
};
pub use dag::{critical_path_length, exclusive_critical_path, frontier_of, longest_path};
pub(crate) use dag::topological_order;
pub use export::{format_graph, format_graphs, parse_graph, parse_graphs, GRAPH_VERSION};
pub use model::{GraphBuilder, NodeId, PipelineParams, SubStage, SubStageGraph, SubStageKind};
pub use synth::{labeled_trace, LabeledTrace};

use crate::workload::WorkerId;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid bucket boundaries: {0}")]
    InvalidBuckets(String),
    #[error("unknown sub-stage kind `{0}`")]
    UnknownKind(String),
    #[error("node {node}: {reason}")]
    InvalidNode { node: NodeId, reason: String },
    #[error("edge {from} -> {to} is invalid")]
    BadEdge { from: NodeId, to: NodeId },
    #[error("dependency cycle through node {node}")]
    Cycle { node: NodeId },
    #[error("trace for {worker} has no records")]
    EmptyTrace { worker: WorkerId },
    #[error("graph construction: {0}")]
    InvalidConfig(String),
    #[error("latency: {0}")]
    Latency(String),
    #[error("graph dump line {line}: {msg}")]
    Parse { line: usize, msg: String },
}
