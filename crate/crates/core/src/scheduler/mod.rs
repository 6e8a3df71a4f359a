//! Decision layer: candidate actions over the frontier, the migration
//! calculus, batch balancing, the look-ahead policy, baselines and an
//! exhaustive oracle for small instances.

mod action;
mod balance;
mod candidates;
pub mod fixtures;
mod instance;
mod migration;
mod oracle;
mod policy;

use std::path::Path;

use thiserror::Error;

use crate::sim::SimError;
use crate::slowdown::SlowdownError;
use crate::workload::PipelineId;

pub use action::{Schedule, ScheduleAction, ScheduledAction, SCHEDULE_VERSION};
pub use balance::{balance_batches, BalancePlan};
pub use candidates::{enumerate_actions, wait_allowed};
pub use instance::{GlobalNode, Instance, NodeRef};
pub use migration::{
    estimate, merged_duration, migration_cost, migration_gain, MemberTerms, MigrationEstimate,
    MigrationMember,
};
pub use oracle::{brute_force_schedule, OracleLimits, DEFAULT_NODE_LIMIT};
pub use policy::{
    greedy_schedule, lookahead_schedule, naive_spatial_schedule, rollout_mux_schedule,
    run_policy, serial_schedule, Policy, DEFAULT_WINDOW, NAIVE_ALLOCATION, ROLLOUT_MUX_ALLOCATION,
};

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Slowdown(#[from] SlowdownError),
    #[error("pipeline {0} appears twice in the instance")]
    DuplicatePipeline(PipelineId),
    #[error("instance has no pipelines")]
    EmptyInstance,
    #[error("invalid merge: {0}")]
    InvalidMerge(String),
    #[error("instance has {nodes} sub-stages, above the oracle limit of {limit}; use the lookahead policy instead")]
    OverLimit { nodes: usize, limit: usize },
    #[error("oracle search exceeded {0} expansions")]
    SearchBudget(u64),
    #[error("memory infeasible at t={time}: {a} and {b} co-located on worker {worker}")]
    Infeasible {
        time: f64,
        worker: usize,
        a: NodeRef,
        b: NodeRef,
    },
    #[error("balance: {0}")]
    Balance(String),
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("schedule line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no progress possible at t={time}")]
    Deadlock { time: f64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ScheduleError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ScheduleError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
