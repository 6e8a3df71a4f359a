use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::workload::{LatencyModel, PipelineId, PipelineSpec, WorkerId};

use super::{Buckets, GraphError};

/// Index of a sub-stage inside its pipeline's graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SubStageKind {
    PrefillBurst,
    DecodeLarge,
    DecodeMedium,
    DecodeSmall,
    Reference,
    Training,
    ToolWait,
}

impl SubStageKind {
    pub const ALL: [SubStageKind; 7] = [
        SubStageKind::PrefillBurst,
        SubStageKind::DecodeLarge,
        SubStageKind::DecodeMedium,
        SubStageKind::DecodeSmall,
        SubStageKind::Reference,
        SubStageKind::Training,
        SubStageKind::ToolWait,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SubStageKind::PrefillBurst => "PrefillBurst",
            SubStageKind::DecodeLarge => "DecodeLarge",
            SubStageKind::DecodeMedium => "DecodeMedium",
            SubStageKind::DecodeSmall => "DecodeSmall",
            SubStageKind::Reference => "Reference",
            SubStageKind::Training => "Training",
            SubStageKind::ToolWait => "ToolWait",
        }
    }

    /// Rollout-derived kinds, i.e. everything carved out of a trace.
    pub fn is_rollout(self) -> bool {
        matches!(
            self,
            SubStageKind::PrefillBurst
                | SubStageKind::DecodeLarge
                | SubStageKind::DecodeMedium
                | SubStageKind::DecodeSmall
                | SubStageKind::ToolWait
        )
    }

    /// Kinds that occupy a GPU slot.
    pub fn is_compute(self) -> bool {
        self != SubStageKind::ToolWait
    }

    /// Kinds whose SM share counts toward the utilization proxy.
    pub fn is_compute_bound(self) -> bool {
        !matches!(self, SubStageKind::DecodeSmall | SubStageKind::ToolWait)
    }

    /// Low-utilization rollout kinds eligible for merging across workers.
    pub fn is_mergeable(self) -> bool {
        matches!(self, SubStageKind::DecodeSmall | SubStageKind::DecodeMedium)
    }

    /// Kind of a decode-dominated rollout step falling in `bucket`.
    pub fn for_bucket(bucket: usize, n_buckets: usize, prefill_dominated: bool) -> Self {
        if n_buckets > 1 && bucket + 1 == n_buckets {
            if prefill_dominated {
                SubStageKind::PrefillBurst
            } else {
                SubStageKind::DecodeLarge
            }
        } else if bucket == 0 {
            SubStageKind::DecodeSmall
        } else {
            SubStageKind::DecodeMedium
        }
    }

    /// Device-memory fraction needed at the smallest usable allocation.
    pub fn default_mem_fraction(self) -> f64 {
        match self {
            SubStageKind::PrefillBurst => 0.30,
            SubStageKind::DecodeLarge => 0.35,
            SubStageKind::DecodeMedium => 0.30,
            SubStageKind::DecodeSmall => 0.15,
            SubStageKind::Reference => 0.30,
            SubStageKind::Training => 0.55,
            SubStageKind::ToolWait => 0.05,
        }
    }
}

impl fmt::Display for SubStageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SubStageKind {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SubStageKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| GraphError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubStage {
    pub id: NodeId,
    pub pipeline_id: PipelineId,
    pub worker_id: WorkerId,
    pub kind: SubStageKind,
    /// Exclusive-execution time in seconds.
    pub duration: f64,
    pub mem_fraction: f64,
    pub sample_ids: Vec<u32>,
    /// Inclusive trace step range; `None` for stage-level nodes.
    pub step_span: Option<(u64, u64)>,
    pub steps: u64,
    /// Prefill + decode tokens processed inside this sub-stage.
    pub tokens: u64,
    pub remaining_decode_tokens: u64,
    /// Peak concurrently decoding requests inside the span.
    pub active_requests: u64,
    /// Context held by this sub-stage's samples (KV to rebuild on migration).
    pub context_tokens: u64,
}

impl SubStage {
    /// A bare node with the kind's default memory need, for hand-built graphs.
    pub fn new(id: u32, pipeline: u32, worker: u32, kind: SubStageKind, duration: f64) -> Self {
        Self {
            id: NodeId(id),
            pipeline_id: PipelineId(pipeline),
            worker_id: WorkerId(worker),
            kind,
            duration,
            mem_fraction: kind.default_mem_fraction(),
            sample_ids: Vec::new(),
            step_span: None,
            steps: 0,
            tokens: 0,
            remaining_decode_tokens: 0,
            active_requests: 0,
            context_tokens: 0,
        }
    }

    pub fn with_mem(mut self, mem: f64) -> Self {
        self.mem_fraction = mem;
        self
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let bad = |msg: String| GraphError::InvalidNode { node: self.id, reason: msg };
        let dur_ok = if self.kind == SubStageKind::ToolWait {
            self.duration >= 0.0
        } else {
            self.duration > 0.0
        };
        if !dur_ok || !self.duration.is_finite() {
            return Err(bad(format!("duration {} out of range for {}", self.duration, self.kind)));
        }
        if !(self.mem_fraction > 0.0 && self.mem_fraction <= 1.0) {
            return Err(bad(format!("mem_fraction {} outside (0, 1]", self.mem_fraction)));
        }
        if let Some((a, b)) = self.step_span {
            if a > b {
                return Err(bad(format!("step span {a}..{b} is reversed")));
            }
        }
        Ok(())
    }
}

/// Constants needed for cost estimates that outlive the [`PipelineSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub pipeline_id: PipelineId,
    pub model_params: f64,
    pub device_peak_flops: f64,
    pub prefill_mfu: f64,
}

impl PipelineParams {
    pub fn of(spec: &PipelineSpec) -> Self {
        Self {
            pipeline_id: spec.pipeline_id,
            model_params: spec.model_params,
            device_peak_flops: spec.device_peak_flops,
            prefill_mfu: spec.prefill_mfu,
        }
    }

    pub fn example(pipeline: u32) -> Self {
        Self {
            pipeline_id: PipelineId(pipeline),
            model_params: 4.0e9,
            device_peak_flops: 989.0e12,
            prefill_mfu: 0.4,
        }
    }
}

/// Sub-stage DAG of one pipeline step: one replica chain per DP worker plus
/// stage-level Reference/Training nodes joined by barrier edges.
#[derive(Debug, Clone, PartialEq)]
pub struct SubStageGraph {
    pub params: PipelineParams,
    pub latency: LatencyModel,
    pub buckets: Buckets,
    nodes: Vec<SubStage>,
    edges: Vec<(NodeId, NodeId)>,
    preds: Vec<Vec<NodeId>>,
    succs: Vec<Vec<NodeId>>,
}

impl SubStageGraph {
    pub fn new(
        params: PipelineParams,
        latency: LatencyModel,
        buckets: Buckets,
        nodes: Vec<SubStage>,
        mut edges: Vec<(NodeId, NodeId)>,
    ) -> Result<Self, GraphError> {
        for (i, n) in nodes.iter().enumerate() {
            if n.id.index() != i {
                return Err(GraphError::InvalidNode {
                    node: n.id,
                    reason: format!("node ids must be dense; found id {} at position {i}", n.id),
                });
            }
            if n.pipeline_id != params.pipeline_id {
                return Err(GraphError::InvalidNode {
                    node: n.id,
                    reason: format!("belongs to {} but graph is {}", n.pipeline_id, params.pipeline_id),
                });
            }
            n.validate()?;
        }
        edges.sort_unstable();
        edges.dedup();
        let mut preds = vec![Vec::new(); nodes.len()];
        let mut succs = vec![Vec::new(); nodes.len()];
        for &(a, b) in &edges {
            if a.index() >= nodes.len() || b.index() >= nodes.len() || a == b {
                return Err(GraphError::BadEdge { from: a, to: b });
            }
            preds[b.index()].push(a);
            succs[a.index()].push(b);
        }
        let graph = Self {
            params,
            latency,
            buckets,
            nodes,
            edges,
            preds,
            succs,
        };
        super::dag::topological_order(graph.nodes.len(), |i| {
            graph.preds[i].iter().map(|p| p.index())
        })?;
        Ok(graph)
    }

    pub fn pipeline_id(&self) -> PipelineId {
        self.params.pipeline_id
    }

    pub fn nodes(&self) -> &[SubStage] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &SubStage {
        &self.nodes[id.index()]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn preds(&self, id: NodeId) -> &[NodeId] {
        &self.preds[id.index()]
    }

    pub fn succs(&self, id: NodeId) -> &[NodeId] {
        &self.succs[id.index()]
    }

    pub fn workers(&self) -> Vec<WorkerId> {
        let mut w: Vec<WorkerId> = self.nodes.iter().map(|n| n.worker_id).collect();
        w.sort_unstable();
        w.dedup();
        w
    }

    /// Rollout tokens processed by the whole step.
    pub fn total_tokens(&self) -> u64 {
        self.nodes.iter().map(|n| n.tokens).sum()
    }

    /// Rollout nodes on `worker` in step order.
    pub fn worker_chain(&self, worker: WorkerId) -> Vec<NodeId> {
        let mut chain: Vec<&SubStage> = self
            .nodes
            .iter()
            .filter(|n| n.worker_id == worker && n.kind.is_rollout())
            .collect();
        chain.sort_by_key(|n| (n.step_span.map(|s| s.0), n.id));
        chain.into_iter().map(|n| n.id).collect()
    }

    /// Seconds per step for a merged decode batch of `active` requests.
    pub fn step_seconds_for(&self, active: u64) -> f64 {
        let b = self.buckets.bucketize(active);
        self.latency
            .per_bucket
            .get(b)
            .or(self.latency.per_bucket.last())
            .copied()
            .unwrap_or(0.0)
    }
}

/// Convenience for assembling hand-written graphs in tests and fixtures.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    params: PipelineParams,
    latency: LatencyModel,
    nodes: Vec<SubStage>,
    edges: Vec<(NodeId, NodeId)>,
}

impl GraphBuilder {
    pub fn new(pipeline: u32) -> Self {
        Self {
            params: PipelineParams::example(pipeline),
            latency: LatencyModel::default(),
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn params(mut self, params: PipelineParams) -> Self {
        self.params = params;
        self
    }

    pub fn node(&mut self, worker: u32, kind: SubStageKind, duration: f64) -> NodeId {
        let id = self.nodes.len() as u32;
        self.nodes
            .push(SubStage::new(id, self.params.pipeline_id.0, worker, kind, duration));
        NodeId(id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut SubStage {
        &mut self.nodes[id.index()]
    }

    pub fn edge(&mut self, from: NodeId, to: NodeId) -> &mut Self {
        self.edges.push((from, to));
        self
    }

    /// Adds nodes as a dependency chain on one worker and returns their ids.
    pub fn chain(&mut self, worker: u32, items: &[(SubStageKind, f64)]) -> Vec<NodeId> {
        let ids: Vec<NodeId> = items.iter().map(|&(k, d)| self.node(worker, k, d)).collect();
        for w in ids.windows(2) {
            self.edges.push((w[0], w[1]));
        }
        ids
    }

    pub fn build(self) -> Result<SubStageGraph, GraphError> {
        SubStageGraph::new(
            self.params,
            self.latency,
            Buckets::default(),
            self.nodes,
            self.edges,
        )
    }
}
