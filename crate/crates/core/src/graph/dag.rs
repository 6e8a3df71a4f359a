use std::collections::VecDeque;

use super::{GraphError, NodeId, SubStageGraph};

/// Kahn's algorithm over `n` nodes given a predecessor lookup.
pub(crate) fn topological_order<F, I>(n: usize, preds: F) -> Result<Vec<usize>, GraphError>
where
    F: Fn(usize) -> I,
    I: Iterator<Item = usize>,
{
    let mut indeg = vec![0usize; n];
    let mut succs = vec![Vec::new(); n];
    for (v, deg) in indeg.iter_mut().enumerate() {
        for p in preds(v) {
            *deg += 1;
            succs[p].push(v);
        }
    }
    let mut ready: VecDeque<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop_front() {
        order.push(v);
        for &s in &succs[v] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.push_back(s);
            }
        }
    }
    if order.len() != n {
        let stuck = (0..n).find(|&v| indeg[v] > 0).unwrap_or(0);
        return Err(GraphError::Cycle {
            node: NodeId(stuck as u32),
        });
    }
    Ok(order)
}

/// Longest path (sum of node weights) through a DAG given as predecessor lists.
pub fn longest_path(preds: &[Vec<usize>], durations: &[f64]) -> Result<f64, GraphError> {
    let order = topological_order(preds.len(), |v| preds[v].iter().copied())?;
    let mut finish = vec![0.0f64; preds.len()];
    let mut best = 0.0f64;
    for v in order {
        let start = preds[v].iter().map(|&p| finish[p]).fold(0.0, f64::max);
        finish[v] = start + durations[v];
        best = best.max(finish[v]);
    }
    Ok(best)
}

/// Nodes not yet completed whose predecessors all are.
pub fn frontier_of(graph: &SubStageGraph, completed: &[NodeId]) -> Vec<NodeId> {
    let mut done = vec![false; graph.len()];
    for c in completed {
        done[c.index()] = true;
    }
    graph
        .nodes()
        .iter()
        .map(|n| n.id)
        .filter(|&id| !done[id.index()] && graph.preds(id).iter().all(|p| done[p.index()]))
        .collect()
}

/// Longest dependency chain under `duration` (defaults to exclusive durations).
pub fn critical_path_length<F>(graph: &SubStageGraph, duration: F) -> Result<f64, GraphError>
where
    F: Fn(NodeId) -> f64,
{
    let preds: Vec<Vec<usize>> = graph
        .nodes()
        .iter()
        .map(|n| graph.preds(n.id).iter().map(|p| p.index()).collect())
        .collect();
    let durations: Vec<f64> = graph.nodes().iter().map(|n| duration(n.id)).collect();
    longest_path(&preds, &durations)
}

pub fn exclusive_critical_path(graph: &SubStageGraph) -> f64 {
    critical_path_length(graph, |id| graph.node(id).duration).expect("graphs are acyclic")
}
