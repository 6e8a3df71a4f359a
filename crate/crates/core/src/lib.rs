//! Scheduling library and discrete-event simulator for multiplexing
//! concurrent RL post-training pipelines on shared GPUs.
//!
//! The flow is: synthesize or load per-step rollout traces ([`workload`]),
//! carve them into a sub-stage DAG ([`graph`]), predict co-location slowdown
//! ([`slowdown`]), pick multiplex/merge/exclusive actions ([`scheduler`]),
//! and replay the result ([`sim`]). [`experiment`] wires these together for
//! the CLI.

pub mod experiment;
pub mod graph;
pub mod scheduler;
pub mod sim;
pub mod slowdown;
pub mod workload;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
