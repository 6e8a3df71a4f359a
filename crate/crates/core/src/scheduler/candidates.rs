use crate::sim::{Engine, NodeState, Task};

use super::ScheduleAction;

fn lone(t: &Task) -> bool {
    t.partner.is_none()
}

/// Mergeable rollout fragments of pipeline `p`: ready, or running alone as
/// an unmerged task.
fn fragments(e: &Engine<'_>, p: usize) -> Vec<usize> {
    let inst = e.instance();
    inst.pipeline_range(p)
        .filter(|&g| inst.stage(g).kind.is_mergeable())
        .filter(|&g| match e.node_state(g) {
            NodeState::Pending => e.is_ready(g),
            NodeState::Running(l) => l == g && !e.task(g).is_some_and(|t| t.merged),
            NodeState::Done => false,
        })
        .collect()
}

fn subsets(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() > 4 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for mask in 1u32..(1 << items.len()) {
        if mask.count_ones() >= 2 {
            out.push(items.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &g)| g).collect());
        }
    }
    out
}

/// Every start the engine would accept right now, in tie-break order:
/// multiplex pairs (both orientations, every covering grid allocation),
/// merges, then exclusive starts. Tool waits are not listed; callers start
/// them as soon as they are ready.
pub fn enumerate_actions(e: &Engine<'_>) -> Vec<ScheduleAction> {
    let inst = e.instance();
    let model = e.model();
    let ready: Vec<usize> = e
        .ready_nodes()
        .into_iter()
        .filter(|&g| inst.stage(g).kind.is_compute())
        .collect();
    let mut out = Vec::new();

    for w in 0..inst.n_workers() {
        let here: Vec<usize> = ready.iter().copied().filter(|&g| inst.global(g).worker == w).collect();
        let occ = e.compute_tasks_on(w);
        let mut pairs: Vec<(usize, f64, usize, f64)> = Vec::new();
        match occ.as_slice() {
            [] => {
                for (i, &a) in here.iter().enumerate() {
                    for &b in &here[i + 1..] {
                        if inst.global(a).pipeline != inst.global(b).pipeline {
                            let (na, nb) = (inst.stage(a).mem_fraction, inst.stage(b).mem_fraction);
                            pairs.push((a, na, b, nb));
                            pairs.push((b, nb, a, na));
                        }
                    }
                }
            }
            [t] if lone(t) => {
                for &b in &here {
                    if inst.global(b).pipeline != t.pipeline {
                        let nb = inst.stage(b).mem_fraction;
                        pairs.push((b, nb, t.lead, t.mem_need));
                        pairs.push((t.lead, t.mem_need, b, nb));
                    }
                }
            }
            _ => {}
        }
        for (a, na, b, nb) in pairs {
            for alloc in model.multiplex_allocations(na, nb) {
                out.push(ScheduleAction::Multiplex {
                    a: inst.node_ref(a),
                    b: inst.node_ref(b),
                    alloc,
                });
            }
        }
    }

    for p in 0..inst.n_pipelines() {
        let frags = fragments(e, p);
        if frags.len() < 2 {
            continue;
        }
        for set in subsets(&frags) {
            let need = set.iter().map(|&g| inst.stage(g).mem_fraction).fold(0.0, f64::max);
            for &t in &set {
                let ok = match e.task(t) {
                    Some(task) => match task.partner {
                        Some(p) => model.feasible(need, e.task(p).map_or(0.0, |x| x.mem_need)),
                        None => true,
                    },
                    None => e.worker_idle(inst.global(t).worker),
                };
                if ok {
                    out.push(ScheduleAction::Merge {
                        members: set.iter().map(|&g| inst.node_ref(g)).collect(),
                        target: inst.node_ref(t),
                    });
                }
            }
        }
    }

    for &g in &ready {
        if e.worker_idle(inst.global(g).worker) {
            out.push(ScheduleAction::Exclusive(inst.node_ref(g)));
        }
    }
    out
}

/// Waiting for the next completion is an option only while something runs
/// and no idle worker has ready compute work.
pub fn wait_allowed(e: &Engine<'_>) -> bool {
    let inst = e.instance();
    e.has_running()
        && !e
            .ready_nodes()
            .into_iter()
            .any(|g| inst.stage(g).kind.is_compute() && e.worker_idle(inst.global(g).worker))
}
