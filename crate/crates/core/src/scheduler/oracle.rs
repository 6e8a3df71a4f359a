use std::collections::HashMap;

use crate::sim::{simulate, Engine, NodeState, SimOptions};
use crate::slowdown::SlowdownModel;

use super::policy::{remaining_bound, start_tool_waits};
use super::{enumerate_actions, greedy_schedule, lookahead_schedule, serial_schedule, Instance, Schedule, ScheduleAction, ScheduleError};

pub const DEFAULT_NODE_LIMIT: usize = 10;

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleLimits {
    pub max_nodes: usize,
    /// Search states to expand before giving up; `None` is unbounded.
    pub max_expansions: Option<u64>,
}

impl Default for OracleLimits {
    fn default() -> Self {
        Self {
            max_nodes: DEFAULT_NODE_LIMIT,
            max_expansions: None,
        }
    }
}

struct Search {
    best: f64,
    best_path: Vec<(f64, ScheduleAction)>,
    path: Vec<(f64, ScheduleAction)>,
    memo: HashMap<Vec<u64>, Vec<(f64, Vec<f64>)>>,
    expansions: u64,
    budget: Option<u64>,
}

/// Discrete part of an engine state plus the continuous part used for
/// dominance: clock and per-task stall/work left.
fn signature(e: &Engine<'_>) -> (Vec<u64>, Vec<f64>) {
    let mut key: Vec<u64> = e
        .node_states()
        .iter()
        .map(|s| match s {
            NodeState::Pending => 0,
            NodeState::Done => 1,
            NodeState::Running(l) => 2 + *l as u64,
        })
        .collect();
    let mut rem = Vec::new();
    let mut tasks: Vec<_> = e.tasks().iter().collect();
    tasks.sort_by_key(|t| t.lead);
    for t in tasks {
        key.extend([
            t.lead as u64,
            t.alloc.sm_share.to_bits(),
            t.alloc.mem_share.to_bits(),
            t.partner.map_or(0, |p| p as u64 + 1),
            t.total.to_bits(),
            t.slowdown.to_bits(),
        ]);
        rem.push(t.stall_left);
        rem.push(t.work_left);
    }
    (key, rem)
}

impl Search {
    fn dominated(&mut self, e: &Engine<'_>) -> bool {
        let (key, rem) = signature(e);
        let now = e.now();
        let seen = self.memo.entry(key).or_default();
        if seen
            .iter()
            .any(|(t, r)| *t <= now + TOL && r.iter().zip(&rem).all(|(a, b)| *a <= b + TOL))
        {
            return true;
        }
        seen.push((now, rem));
        false
    }

    fn dfs(&mut self, mut e: Engine<'_>) -> Result<(), ScheduleError> {
        self.expansions += 1;
        if let Some(b) = self.budget {
            if self.expansions > b {
                return Err(ScheduleError::SearchBudget(b));
            }
        }
        let mark = self.path.len();
        let mut waits = Schedule::default();
        start_tool_waits(&mut e, &mut waits)?;
        self.path.extend(waits.actions.into_iter().map(|a| (a.start, a.action)));

        if e.is_finished() {
            let ms = e.makespan();
            if ms < self.best - TOL {
                self.best = ms;
                self.best_path = self.path.clone();
            }
        } else if remaining_bound(&e) < self.best - TOL && !self.dominated(&e) {
            for a in enumerate_actions(&e) {
                let mut f = e.fork();
                if f.apply(&a).is_ok() {
                    self.path.push((e.now(), a));
                    self.dfs(f)?;
                    self.path.pop();
                }
            }
            if e.has_running() {
                let mut f = e.fork();
                f.advance()?;
                self.dfs(f)?;
            }
        }
        self.path.truncate(mark);
        Ok(())
    }
}

/// Exhaustive branch-and-bound over every action sequence the engine
/// accepts, including deliberately waiting. Returns a minimum-makespan
/// schedule; the best heuristic schedule seeds the incumbent.
pub fn brute_force_schedule(
    inst: &Instance,
    model: &SlowdownModel,
    limits: OracleLimits,
) -> Result<Schedule, ScheduleError> {
    if inst.len() > limits.max_nodes {
        return Err(ScheduleError::OverLimit {
            nodes: inst.len(),
            limit: limits.max_nodes,
        });
    }
    let mut seed = serial_schedule(inst, model)?;
    let mut seed_ms = simulate(&seed, inst, model)?.makespan;
    for h in [greedy_schedule(inst, model)?, lookahead_schedule(inst, model, super::DEFAULT_WINDOW)?] {
        let ms = simulate(&h, inst, model)?.makespan;
        if ms < seed_ms - TOL {
            seed = h;
            seed_ms = ms;
        }
    }
    let mut s = Search {
        best: seed_ms,
        best_path: Vec::new(),
        path: Vec::new(),
        memo: HashMap::new(),
        expansions: 0,
        budget: limits.max_expansions,
    };
    s.dfs(Engine::new(inst, model, SimOptions::default()))?;
    if s.best_path.is_empty() {
        let mut seed = seed;
        seed.policy = "oracle".into();
        return Ok(seed);
    }
    let mut out = Schedule::new("oracle");
    for (t, a) in s.best_path {
        out.push(t, a);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, SubStageKind::*};

    #[test]
    fn over_limit_is_rejected() {
        let mut a = GraphBuilder::new(0);
        a.chain(0, &[(DecodeSmall, 1.0); 11]);
        let inst = Instance::new(vec![a.build().unwrap()]).unwrap();
        let err = brute_force_schedule(&inst, &SlowdownModel::default(), OracleLimits::default()).unwrap_err();
        assert!(err.to_string().contains("lookahead"), "{err}");
    }

    #[test]
    fn single_pipeline_matches_critical_path() {
        let mut a = GraphBuilder::new(0);
        a.chain(0, &[(DecodeLarge, 3.0), (DecodeSmall, 4.0), (Training, 5.0)]);
        let inst = Instance::new(vec![a.build().unwrap()]).unwrap();
        let model = SlowdownModel::default();
        let s = brute_force_schedule(&inst, &model, OracleLimits::default()).unwrap();
        assert_eq!(simulate(&s, &inst, &model).unwrap().makespan, inst.critical_path());
    }

    #[test]
    fn complementary_pair_beats_serial() {
        let mut a = GraphBuilder::new(0);
        a.chain(0, &[(DecodeSmall, 6.0), (Training, 4.0)]);
        let mut b = GraphBuilder::new(1);
        b.chain(0, &[(Training, 6.0), (DecodeSmall, 4.0)]);
        let inst = Instance::new(vec![a.build().unwrap(), b.build().unwrap()]).unwrap();
        let model = SlowdownModel::default();
        let serial = simulate(&serial_schedule(&inst, &model).unwrap(), &inst, &model).unwrap();
        let best = simulate(
            &brute_force_schedule(&inst, &model, OracleLimits::default()).unwrap(),
            &inst,
            &model,
        )
        .unwrap();
        assert!(best.makespan < serial.makespan);
    }
}
