use std::fmt;
use std::str::FromStr;

use crate::graph::topological_order;
use crate::sim::{Engine, NodeState, SimOptions};
use crate::slowdown::{ResourceAllocation, SlowdownModel};

use super::{
    brute_force_schedule, enumerate_actions, wait_allowed, Instance, OracleLimits, Schedule,
    ScheduleAction, ScheduleError,
};

pub const DEFAULT_WINDOW: usize = 3;

/// Fixed split used by the naive spatial baseline.
pub const NAIVE_ALLOCATION: ResourceAllocation = ResourceAllocation {
    sm_share: 0.5,
    mem_share: 0.475,
};

/// Fixed grid split used by the rollout-only multiplexing baseline.
pub const ROLLOUT_MUX_ALLOCATION: ResourceAllocation = ResourceAllocation {
    sm_share: 0.5,
    mem_share: 0.4,
};

const COST_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    Serial,
    NaiveSpatial,
    RolloutMux,
    Greedy,
    Lookahead { window: usize },
    Oracle(OracleLimits),
}

impl Policy {
    pub const NAMES: [&'static str; 6] = ["serial", "naive_spatial", "rollout_mux", "greedy", "lookahead", "oracle"];

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Serial => "serial",
            Policy::NaiveSpatial => "naive_spatial",
            Policy::RolloutMux => "rollout_mux",
            Policy::Greedy => "greedy",
            Policy::Lookahead { .. } => "lookahead",
            Policy::Oracle(_) => "oracle",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Lookahead { window } => write!(f, "lookahead(W={window})"),
            p => f.write_str(p.name()),
        }
    }
}

impl FromStr for Policy {
    type Err = ScheduleError;

    /// Accepts the plain names plus `lookahead:<W>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ScheduleError::Policy(format!("unknown policy `{s}` (known: {})", Self::NAMES.join(", ")));
        Ok(match s {
            "serial" => Policy::Serial,
            "naive_spatial" => Policy::NaiveSpatial,
            "rollout_mux" => Policy::RolloutMux,
            "greedy" => Policy::Greedy,
            "lookahead" => Policy::Lookahead { window: DEFAULT_WINDOW },
            "oracle" => Policy::Oracle(OracleLimits::default()),
            other => {
                let w = other.strip_prefix("lookahead:").ok_or_else(bad)?;
                let window: usize = w.parse().map_err(|_| bad())?;
                if window == 0 {
                    return Err(ScheduleError::Policy("window must be at least 1".into()));
                }
                Policy::Lookahead { window }
            }
        })
    }
}

pub fn run_policy(policy: Policy, inst: &Instance, model: &SlowdownModel) -> Result<Schedule, ScheduleError> {
    match policy {
        Policy::Serial => serial_schedule(inst, model),
        Policy::NaiveSpatial => naive_spatial_schedule(inst, model),
        Policy::RolloutMux => rollout_mux_schedule(inst, model),
        Policy::Greedy => greedy_schedule(inst, model),
        Policy::Lookahead { window } => lookahead_schedule(inst, model, window),
        Policy::Oracle(limits) => brute_force_schedule(inst, model, limits),
    }
}

/// Starts every ready tool wait; they hold no GPU slot.
pub(crate) fn start_tool_waits(e: &mut Engine<'_>, sched: &mut Schedule) -> Result<(), ScheduleError> {
    let inst = e.instance();
    for g in e.ready_nodes() {
        if !inst.stage(g).kind.is_compute() {
            let a = ScheduleAction::Exclusive(inst.node_ref(g));
            e.apply(&a)?;
            sched.push(e.now(), a);
        }
    }
    Ok(())
}

/// Event loop shared by every policy. `choose` is asked repeatedly at each
/// decision point until it returns `None`; the clock then moves to the next
/// completion.
fn drive<F>(inst: &Instance, model: &SlowdownModel, name: &str, mut choose: F) -> Result<Schedule, ScheduleError>
where
    F: FnMut(&Engine<'_>) -> Result<Option<ScheduleAction>, ScheduleError>,
{
    let mut e = Engine::new(inst, model, SimOptions::default());
    let mut sched = Schedule::new(name);
    loop {
        start_tool_waits(&mut e, &mut sched)?;
        while let Some(a) = choose(&e)? {
            e.apply(&a)?;
            sched.push(e.now(), a);
        }
        if e.is_finished() {
            return Ok(sched);
        }
        if !e.has_running() {
            return Err(ScheduleError::Deadlock { time: e.now() });
        }
        e.advance()?;
    }
}

/// Pipelines one after another, each sub-stage alone on its worker.
pub fn serial_schedule(inst: &Instance, model: &SlowdownModel) -> Result<Schedule, ScheduleError> {
    let mut e = Engine::new(inst, model, SimOptions::default());
    let mut sched = Schedule::new("serial");
    for p in 0..inst.n_pipelines() {
        let range = inst.pipeline_range(p);
        loop {
            for g in e.ready_nodes() {
                if range.contains(&g) && (!inst.stage(g).kind.is_compute() || e.worker_idle(inst.global(g).worker)) {
                    let a = ScheduleAction::Exclusive(inst.node_ref(g));
                    e.apply(&a)?;
                    sched.push(e.now(), a);
                }
            }
            if range.clone().all(|g| e.finish_time(g) >= 0.0) {
                break;
            }
            e.advance()?;
        }
    }
    Ok(sched)
}

/// Co-locates whatever two pipelines have ready on a worker, always at a
/// fixed even split. Fails at the first pair whose footprints do not fit.
pub fn naive_spatial_schedule(inst: &Instance, model: &SlowdownModel) -> Result<Schedule, ScheduleError> {
    fixed_split(inst, model, "naive_spatial", NAIVE_ALLOCATION, |_, _| true)
}

/// Only rollout sub-stages of different pipelines overlap; Reference and
/// Training run alone.
pub fn rollout_mux_schedule(inst: &Instance, model: &SlowdownModel) -> Result<Schedule, ScheduleError> {
    fixed_split(inst, model, "rollout_mux", ROLLOUT_MUX_ALLOCATION, |a, b| {
        a.is_rollout() && b.is_rollout()
    })
}

fn fixed_split<P>(
    inst: &Instance,
    model: &SlowdownModel,
    name: &str,
    alloc: ResourceAllocation,
    pairable: P,
) -> Result<Schedule, ScheduleError>
where
    P: Fn(crate::graph::SubStageKind, crate::graph::SubStageKind) -> bool,
{
    drive(inst, model, name, |e| {
        let now = e.now();
        for g in e.ready_nodes() {
            let s = inst.stage(g);
            if !s.kind.is_compute() {
                continue;
            }
            let w = inst.global(g).worker;
            let p = inst.global(g).pipeline;
            let occ = e.compute_tasks_on(w);
            let partner = match occ.as_slice() {
                [] => e.ready_nodes().into_iter().find(|&h| {
                    h != g
                        && inst.global(h).worker == w
                        && inst.global(h).pipeline != p
                        && inst.stage(h).kind.is_compute()
                        && pairable(s.kind, inst.stage(h).kind)
                }),
                [t] if t.partner.is_none() && t.pipeline != p && pairable(s.kind, t.kind) => Some(t.lead),
                _ => continue,
            };
            let need_of = |h: usize| e.task(h).map_or(inst.stage(h).mem_fraction, |t| t.mem_need);
            match partner {
                Some(h) => {
                    if !model.feasible(s.mem_fraction, need_of(h)) {
                        return Err(ScheduleError::Infeasible {
                            time: now,
                            worker: w,
                            a: inst.node_ref(g),
                            b: inst.node_ref(h),
                        });
                    }
                    return Ok(Some(ScheduleAction::Multiplex {
                        a: inst.node_ref(g),
                        b: inst.node_ref(h),
                        alloc,
                    }));
                }
                None if occ.is_empty() => return Ok(Some(ScheduleAction::Exclusive(inst.node_ref(g)))),
                None => {}
            }
        }
        Ok(None)
    })
}

/// Window estimate: finish times for running tasks at their current rates,
/// then for each retire-round the admitted nodes at exclusive duration,
/// queued one at a time on their worker.
struct Estimate {
    fin: Vec<f64>,
    busy_until: Vec<f64>,
}

impl Estimate {
    fn running(e: &Engine<'_>) -> Self {
        let inst = e.instance();
        let now = e.now();
        let mut fin = vec![f64::NAN; inst.len()];
        let mut busy_until = vec![now; inst.n_workers()];
        for t in e.tasks() {
            let f = now + t.time_left();
            for &m in &t.members {
                fin[m] = f;
            }
            if t.is_compute() {
                busy_until[t.worker] = busy_until[t.worker].max(f);
            }
        }
        Self { fin, busy_until }
    }

    /// Admits `(node, earliest start)` pairs in order of earliest start.
    fn admit(&mut self, e: &Engine<'_>, mut batch: Vec<(usize, f64)>) {
        let inst = e.instance();
        batch.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
        for (g, est) in batch {
            let s = inst.stage(g);
            self.fin[g] = if s.kind.is_compute() {
                let w = inst.global(g).worker;
                let f = est.max(self.busy_until[w]) + s.duration;
                self.busy_until[w] = f;
                f
            } else {
                est + s.duration
            };
        }
    }

    fn cost(&self, e: &Engine<'_>) -> (f64, f64) {
        self.fin
            .iter()
            .filter(|f| !f.is_nan())
            .fold((e.now(), 0.0), |(c, sum), &f| (c.max(f), sum + f))
    }
}

/// First retire-round: running tasks plus ready nodes behind them.
fn first_round(e: &Engine<'_>) -> Estimate {
    let mut est = Estimate::running(e);
    est.admit(e, e.ready_nodes().into_iter().map(|g| (g, e.now())).collect());
    est
}

/// `(C, Σ finish)` over the first round only: how soon everything now in
/// flight or startable completes.
fn immediate_cost(e: &Engine<'_>) -> Vec<f64> {
    let (c, sum) = first_round(e).cost(e);
    vec![c, sum]
}

/// `(C, Σ finish)` over `window` retire-rounds: later rounds admit pending
/// nodes whose predecessors are done or estimated in an earlier round.
fn window_cost(e: &Engine<'_>, window: usize) -> Vec<f64> {
    let inst = e.instance();
    let mut est = first_round(e);
    for _ in 1..window {
        let admitted: Vec<(usize, f64)> = (0..inst.len())
            .filter(|&g| est.fin[g].is_nan() && e.node_state(g) == NodeState::Pending)
            .filter_map(|g| {
                let mut start = e.now();
                for &p in inst.preds(g) {
                    let f = if e.node_state(p) == NodeState::Done { e.now() } else { est.fin[p] };
                    if f.is_nan() {
                        return None;
                    }
                    start = start.max(f);
                }
                Some((g, start))
            })
            .collect();
        if admitted.is_empty() {
            break;
        }
        est.admit(e, admitted);
    }
    let (c, sum) = est.cost(e);
    vec![c, sum]
}

#[derive(Debug, Clone)]
struct Score {
    keys: Vec<f64>,
    rank: u8,
    serial: usize,
}

impl Score {
    fn better_than(&self, o: &Score) -> bool {
        for (a, b) in self.keys.iter().zip(&o.keys) {
            if (a - b).abs() > COST_TOL * b.abs().max(1.0) {
                return a < b;
            }
        }
        (self.rank, self.serial) < (o.rank, o.serial)
    }
}

/// Picks the candidate with the lowest cost; `None` means wait.
fn pick<F>(e: &Engine<'_>, cost: F) -> Result<Option<ScheduleAction>, ScheduleError>
where
    F: Fn(&Engine<'_>) -> Vec<f64>,
{
    let cands = enumerate_actions(e);
    if cands.is_empty() {
        return Ok(None);
    }
    let mut best: Option<(Score, Option<ScheduleAction>)> = None;
    let mut consider = |score: Score, a: Option<ScheduleAction>| {
        if best.as_ref().is_none_or(|(b, _)| score.better_than(b)) {
            best = Some((score, a));
        }
    };
    for (serial, a) in cands.into_iter().enumerate() {
        let mut f = e.fork();
        f.apply(&a)?;
        consider(Score { keys: cost(&f), rank: a.rank(), serial }, Some(a));
    }
    if wait_allowed(e) {
        consider(Score { keys: cost(e), rank: 3, serial: usize::MAX }, None);
    }
    Ok(best.and_then(|(_, a)| a))
}

/// Chooses the action that minimizes how late the work currently in flight
/// or startable finishes, ignoring successors.
pub fn greedy_schedule(inst: &Instance, model: &SlowdownModel) -> Result<Schedule, ScheduleError> {
    drive(inst, model, "greedy", |e| pick(e, immediate_cost))
}

/// Chooses the action minimizing the critical path of the frontier's
/// successors within `window` retire-rounds.
pub fn lookahead_schedule(inst: &Instance, model: &SlowdownModel, window: usize) -> Result<Schedule, ScheduleError> {
    if window == 0 {
        return Err(ScheduleError::Policy("window must be at least 1".into()));
    }
    let name = if window == DEFAULT_WINDOW { "lookahead".to_string() } else { format!("lookahead:{window}") };
    drive(inst, model, &name, |e| pick(e, |f| window_cost(f, window)))
}

/// Lower bound on the makespan reachable from `e`: the remaining critical
/// path at exclusive rates.
pub(crate) fn remaining_bound(e: &Engine<'_>) -> f64 {
    let inst = e.instance();
    let rem = e.remaining_exclusive();
    let order = topological_order(inst.len(), |g| inst.preds(g).iter().copied()).expect("instance graphs are acyclic");
    let mut head = vec![0.0f64; inst.len()];
    for &g in &order {
        head[g] = inst.preds(g).iter().map(|&p| head[p] + rem[p]).fold(0.0, f64::max);
    }
    let mut tail = vec![0.0f64; inst.len()];
    for &g in order.iter().rev() {
        tail[g] = inst.succs(g).iter().map(|&s| tail[s] + rem[s]).fold(0.0, f64::max);
    }
    let mut best = (0..inst.len()).map(|g| head[g] + rem[g]).fold(0.0, f64::max);

    // Non-mergeable nodes that cannot share a worker pairwise run one at a
    // time, each no faster than exclusive.
    for w in 0..inst.n_workers() {
        let mut clique: Vec<usize> = Vec::new();
        for g in (0..inst.len()).filter(|&g| inst.global(g).worker == w) {
            let st = inst.stage(g);
            if rem[g] <= 0.0 || !st.kind.is_compute() || st.kind.is_mergeable() {
                continue;
            }
            let need = |x: usize| e.task(x).map_or(inst.stage(x).mem_fraction, |t| t.mem_need);
            if clique.iter().all(|&c| !e.model().feasible(need(c), need(g))) {
                clique.push(g);
            }
        }
        if clique.len() < 2 {
            continue;
        }
        let h = clique.iter().map(|&g| head[g]).fold(f64::INFINITY, f64::min);
        let t = clique.iter().map(|&g| tail[g]).fold(f64::INFINITY, f64::min);
        best = best.max(h + clique.iter().map(|&g| rem[g]).sum::<f64>() + t);
    }
    e.now() + best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, SubStageKind::*};
    use crate::sim::simulate;

    fn chain_instance() -> Instance {
        let mut a = GraphBuilder::new(0);
        a.chain(0, &[(DecodeLarge, 3.0), (DecodeSmall, 4.0), (Training, 5.0)]);
        a.chain(1, &[(DecodeLarge, 2.0), (DecodeSmall, 9.0)]);
        Instance::new(vec![a.build().unwrap()]).unwrap()
    }

    #[test]
    fn single_pipeline_policies_match_serial() {
        let inst = chain_instance();
        let model = SlowdownModel::default();
        let serial = simulate(&serial_schedule(&inst, &model).unwrap(), &inst, &model).unwrap();
        assert_eq!(serial.makespan, 12.0);
        for p in ["greedy", "lookahead", "lookahead:1", "naive_spatial", "rollout_mux"] {
            let s = run_policy(p.parse().unwrap(), &inst, &model).unwrap();
            let r = simulate(&s, &inst, &model).unwrap();
            assert!(r.makespan <= serial.makespan + 1e-9, "{p}: {}", r.makespan);
        }
    }

    #[test]
    fn policy_names_parse() {
        assert_eq!("lookahead:5".parse::<Policy>().unwrap(), Policy::Lookahead { window: 5 });
        assert!("lookahead:0".parse::<Policy>().is_err());
        assert!("fifo".parse::<Policy>().is_err());
    }

    #[test]
    fn naive_spatial_detects_training_overlap() {
        let mk = |p: u32| {
            let mut b = GraphBuilder::new(p);
            let t = b.node(0, Training, 5.0);
            b.node_mut(t).mem_fraction = 0.6;
            b.build().unwrap()
        };
        let inst = Instance::new(vec![mk(0), mk(1)]).unwrap();
        let model = SlowdownModel::default();
        assert!(matches!(
            naive_spatial_schedule(&inst, &model),
            Err(ScheduleError::Infeasible { .. })
        ));
    }

    #[test]
    fn rollout_mux_never_pairs_training() {
        let mk = |p: u32| {
            let mut b = GraphBuilder::new(p);
            b.chain(0, &[(DecodeLarge, 3.0), (DecodeSmall, 6.0), (Training, 4.0)]);
            b.build().unwrap()
        };
        let inst = Instance::new(vec![mk(0), mk(1)]).unwrap();
        let model = SlowdownModel::default();
        let s = rollout_mux_schedule(&inst, &model).unwrap();
        for a in s.iter() {
            if let ScheduleAction::Multiplex { a, b, .. } = &a.action {
                for n in [a, b] {
                    let g = inst.resolve(*n).unwrap();
                    assert!(inst.stage(g).kind.is_rollout());
                }
            }
        }
        simulate(&s, &inst, &model).unwrap();
    }
}
