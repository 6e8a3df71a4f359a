use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::graph::{longest_path, NodeId, SubStage, SubStageGraph};
use crate::workload::PipelineId;

use super::ScheduleError;

/// A sub-stage named across pipelines, written `p<pipeline>:<node>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub pipeline: PipelineId,
    pub node: NodeId,
}

impl NodeRef {
    pub fn new(pipeline: u32, node: u32) -> Self {
        Self {
            pipeline: PipelineId(pipeline),
            node: NodeId(node),
        }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}:{}", self.pipeline.0, self.node.0)
    }
}

impl FromStr for NodeRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad node reference `{s}` (expected p<pipeline>:<node>)");
        let rest = s.strip_prefix('p').ok_or_else(bad)?;
        let (p, n) = rest.split_once(':').ok_or_else(bad)?;
        Ok(NodeRef::new(p.parse().map_err(|_| bad())?, n.parse().map_err(|_| bad())?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalNode {
    /// Index into [`Instance::graphs`].
    pub pipeline: usize,
    pub local: NodeId,
    pub worker: usize,
}

/// Several pipeline graphs flattened onto one shared set of workers.
#[derive(Debug, Clone)]
pub struct Instance {
    graphs: Vec<SubStageGraph>,
    nodes: Vec<GlobalNode>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    n_workers: usize,
}

impl Instance {
    pub fn new(graphs: Vec<SubStageGraph>) -> Result<Self, ScheduleError> {
        if graphs.is_empty() {
            return Err(ScheduleError::EmptyInstance);
        }
        for (i, g) in graphs.iter().enumerate() {
            if graphs[..i].iter().any(|h| h.pipeline_id() == g.pipeline_id()) {
                return Err(ScheduleError::DuplicatePipeline(g.pipeline_id()));
            }
        }
        let mut nodes = Vec::new();
        let mut preds = Vec::new();
        let mut succs = Vec::new();
        let mut offsets = Vec::new();
        let mut n_workers = 0;
        for (p, g) in graphs.iter().enumerate() {
            let off = nodes.len();
            offsets.push(off);
            for n in g.nodes() {
                let worker = n.worker_id.0 as usize;
                n_workers = n_workers.max(worker + 1);
                nodes.push(GlobalNode {
                    pipeline: p,
                    local: n.id,
                    worker,
                });
                preds.push(g.preds(n.id).iter().map(|x| off + x.index()).collect());
                succs.push(g.succs(n.id).iter().map(|x| off + x.index()).collect());
            }
        }
        Ok(Self {
            graphs,
            nodes,
            preds,
            succs,
            offsets,
            n_workers,
        })
    }

    pub fn graphs(&self) -> &[SubStageGraph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_workers(&self) -> usize {
        self.n_workers
    }

    pub fn n_pipelines(&self) -> usize {
        self.graphs.len()
    }

    pub fn global(&self, g: usize) -> &GlobalNode {
        &self.nodes[g]
    }

    pub fn stage(&self, g: usize) -> &SubStage {
        let n = &self.nodes[g];
        self.graphs[n.pipeline].node(n.local)
    }

    pub fn graph_of(&self, g: usize) -> &SubStageGraph {
        &self.graphs[self.nodes[g].pipeline]
    }

    pub fn preds(&self, g: usize) -> &[usize] {
        &self.preds[g]
    }

    pub fn succs(&self, g: usize) -> &[usize] {
        &self.succs[g]
    }

    pub fn pipeline_range(&self, p: usize) -> Range<usize> {
        let end = self.offsets.get(p + 1).copied().unwrap_or(self.nodes.len());
        self.offsets[p]..end
    }

    pub fn node_ref(&self, g: usize) -> NodeRef {
        let n = &self.nodes[g];
        NodeRef {
            pipeline: self.graphs[n.pipeline].pipeline_id(),
            node: n.local,
        }
    }

    pub fn resolve(&self, r: NodeRef) -> Option<usize> {
        let p = self.graphs.iter().position(|g| g.pipeline_id() == r.pipeline)?;
        (r.node.index() < self.graphs[p].len()).then(|| self.offsets[p] + r.node.index())
    }

    /// Longest dependency chain at exclusive durations.
    pub fn critical_path(&self) -> f64 {
        let durations: Vec<f64> = (0..self.len()).map(|g| self.stage(g).duration).collect();
        longest_path(&self.preds, &durations).expect("pipeline graphs are acyclic")
    }

    pub fn total_tokens(&self) -> u64 {
        self.graphs.iter().map(|g| g.total_tokens()).sum()
    }

    /// Only the graph of pipeline index `p`, for exclusive baselines.
    pub fn single(&self, p: usize) -> Instance {
        Instance::new(vec![self.graphs[p].clone()]).expect("one graph is a valid instance")
    }
}
