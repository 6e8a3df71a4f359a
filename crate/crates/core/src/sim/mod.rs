//! Discrete-event replay of schedules and the metrics derived from it.

mod engine;
mod replay;
mod report;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheduler::NodeRef;
use crate::slowdown::{ResourceAllocation, SlowdownError};

pub use engine::{Engine, Log, NodeState, SimOptions, Task, TIME_TOL};
pub use replay::{simulate, simulate_with};
pub use report::{
    compare, format_events, PipelineMetrics, SimulationReport, WorkerUtilization, EVENTS_VERSION,
    METRICS_VERSION,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("dependency {pred} -> {node} not satisfied when {node} was scheduled")]
    Dependency { pred: NodeRef, node: NodeRef },
    #[error("{0} is not ready (already started or finished)")]
    NotReady(NodeRef),
    #[error("worker {worker} has no free slot for {node}")]
    WorkerBusy { worker: usize, node: NodeRef },
    #[error("memory infeasible at t={time}: {a} and {b} on worker {worker} need {need:.3} of the device")]
    Memory {
        time: f64,
        worker: usize,
        a: NodeRef,
        b: NodeRef,
        need: f64,
    },
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("unknown sub-stage {0}")]
    UnknownNode(NodeRef),
    #[error("{0} was never scheduled")]
    Unscheduled(NodeRef),
    #[error("nothing running and nothing scheduled at t={time}")]
    Deadlock { time: f64 },
    #[error(transparent)]
    Slowdown(#[from] SlowdownError),
    #[error("reports do not describe the same instance: {0}")]
    Mismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SimError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Start,
    Finish,
    Migration,
    Reallocation,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Start => "start",
            EventKind::Finish => "finish",
            EventKind::Migration => "migration",
            EventKind::Reallocation => "reallocation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub time: f64,
    pub worker: usize,
    pub kind: EventKind,
    pub node: NodeRef,
    pub alloc: ResourceAllocation,
}

/// SM share held by compute-bound work on one worker over `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilSegment {
    pub worker: usize,
    pub start: f64,
    pub end: f64,
    pub util: f64,
}
