use crate::graph::SubStageKind;
use crate::scheduler::{merged_duration, migration_cost, Instance, NodeRef, ScheduleAction};
use crate::slowdown::{ResourceAllocation, SlowdownModel};

use super::{EventKind, SimError, TimelineEvent, UtilSegment};

/// Absolute slack when deciding that a task has reached zero remaining time.
pub const TIME_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimOptions {
    /// Stall charged when a running rollout sub-stage's memory grant changes.
    pub realloc_penalty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeState {
    Pending,
    /// Executing as part of the task led by the given node.
    Running(usize),
    Done,
}

/// One unit of execution on a worker: a single sub-stage, or several merged
/// rollout fragments led by the merge target.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub lead: usize,
    pub members: Vec<usize>,
    pub worker: usize,
    pub pipeline: usize,
    pub kind: SubStageKind,
    pub mem_need: f64,
    /// Exclusive seconds of work when the task (re)started.
    pub total: f64,
    /// Exclusive seconds of work still to do.
    pub work_left: f64,
    /// Fixed delay before work begins (KV rebuild, reallocation).
    pub stall_left: f64,
    pub slowdown: f64,
    pub alloc: ResourceAllocation,
    /// Lead of the co-located task, if any.
    pub partner: Option<usize>,
    pub merged: bool,
}

impl Task {
    pub fn is_compute(&self) -> bool {
        self.kind.is_compute()
    }

    /// Wall seconds until completion at the current rates.
    pub fn time_left(&self) -> f64 {
        self.stall_left + self.work_left * self.slowdown
    }

    /// Seconds until completion if run alone from now.
    pub fn exclusive_left(&self) -> f64 {
        self.stall_left + self.work_left
    }

    fn progress(&mut self, dt: f64) {
        if self.stall_left >= dt {
            self.stall_left -= dt;
        } else {
            let rest = dt - self.stall_left;
            self.stall_left = 0.0;
            self.work_left = (self.work_left - rest / self.slowdown).max(0.0);
        }
    }
}

#[derive(Debug, Clone)]
struct State {
    now: f64,
    nodes: Vec<NodeState>,
    preds_left: Vec<u32>,
    tasks: Vec<Task>,
    done: usize,
    start: Vec<f64>,
    finish: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Log {
    pub events: Vec<TimelineEvent>,
    pub util: Vec<UtilSegment>,
}

/// Event-driven executor state shared by replay, the policies and the oracle.
#[derive(Debug, Clone)]
pub struct Engine<'a> {
    inst: &'a Instance,
    model: &'a SlowdownModel,
    opts: SimOptions,
    st: State,
    log: Option<Log>,
}

impl<'a> Engine<'a> {
    pub fn new(inst: &'a Instance, model: &'a SlowdownModel, opts: SimOptions) -> Self {
        let n = inst.len();
        Self {
            inst,
            model,
            opts,
            st: State {
                now: 0.0,
                nodes: vec![NodeState::Pending; n],
                preds_left: (0..n).map(|g| inst.preds(g).len() as u32).collect(),
                tasks: Vec::new(),
                done: 0,
                start: vec![f64::NAN; n],
                finish: vec![f64::NAN; n],
            },
            log: Some(Log::default()),
        }
    }

    /// Copy of the state without the event log, for what-if evaluation.
    pub fn fork(&self) -> Engine<'a> {
        Engine {
            inst: self.inst,
            model: self.model,
            opts: self.opts,
            st: self.st.clone(),
            log: None,
        }
    }

    pub fn instance(&self) -> &'a Instance {
        self.inst
    }

    pub fn model(&self) -> &'a SlowdownModel {
        self.model
    }

    pub fn now(&self) -> f64 {
        self.st.now
    }

    pub fn is_finished(&self) -> bool {
        self.st.done == self.inst.len()
    }

    pub fn node_state(&self, g: usize) -> NodeState {
        self.st.nodes[g]
    }

    pub fn node_states(&self) -> &[NodeState] {
        &self.st.nodes
    }

    pub fn is_ready(&self, g: usize) -> bool {
        self.st.nodes[g] == NodeState::Pending && self.st.preds_left[g] == 0
    }

    pub fn ready_nodes(&self) -> Vec<usize> {
        (0..self.inst.len()).filter(|&g| self.is_ready(g)).collect()
    }

    pub fn tasks(&self) -> &[Task] {
        &self.st.tasks
    }

    pub fn task(&self, lead: usize) -> Option<&Task> {
        self.st.tasks.iter().find(|t| t.lead == lead)
    }

    pub fn has_running(&self) -> bool {
        !self.st.tasks.is_empty()
    }

    pub fn compute_tasks_on(&self, worker: usize) -> Vec<&Task> {
        self.st
            .tasks
            .iter()
            .filter(|t| t.worker == worker && t.is_compute())
            .collect()
    }

    pub fn worker_idle(&self, worker: usize) -> bool {
        self.compute_tasks_on(worker).is_empty()
    }

    pub fn start_time(&self, g: usize) -> f64 {
        self.st.start[g]
    }

    pub fn finish_time(&self, g: usize) -> f64 {
        self.st.finish[g]
    }

    pub fn take_log(&mut self) -> Option<Log> {
        self.log.take()
    }

    /// Makespan so far: the latest finish among completed nodes.
    pub fn makespan(&self) -> f64 {
        self.st.finish.iter().copied().filter(|x| !x.is_nan()).fold(0.0, f64::max)
    }

    /// Remaining exclusive seconds per node; running members share their
    /// task's remainder.
    pub fn remaining_exclusive(&self) -> Vec<f64> {
        let mut rem: Vec<f64> = (0..self.inst.len())
            .map(|g| match self.st.nodes[g] {
                NodeState::Pending => self.inst.stage(g).duration,
                _ => 0.0,
            })
            .collect();
        for t in &self.st.tasks {
            for &m in &t.members {
                rem[m] = t.exclusive_left();
            }
        }
        rem
    }

    fn event(&mut self, kind: EventKind, worker: usize, g: usize, alloc: ResourceAllocation) {
        if let Some(log) = &mut self.log {
            log.events.push(TimelineEvent {
                time: self.st.now,
                worker,
                kind,
                node: self.inst.node_ref(g),
                alloc,
            });
        }
    }

    fn resolve(&self, r: NodeRef) -> Result<usize, SimError> {
        self.inst.resolve(r).ok_or(SimError::UnknownNode(r))
    }

    fn task_index(&self, lead: usize) -> Option<usize> {
        self.st.tasks.iter().position(|t| t.lead == lead)
    }

    /// Fails unless `g` is pending with all predecessors done.
    fn require_ready(&self, g: usize) -> Result<(), SimError> {
        match self.st.nodes[g] {
            NodeState::Pending => {}
            _ => return Err(SimError::NotReady(self.inst.node_ref(g))),
        }
        if let Some(&p) = self.inst.preds(g).iter().find(|&&p| self.st.nodes[p] != NodeState::Done) {
            return Err(SimError::Dependency {
                pred: self.inst.node_ref(p),
                node: self.inst.node_ref(g),
            });
        }
        Ok(())
    }

    fn rate(&self, kind: SubStageKind, partner: Option<SubStageKind>, alloc: ResourceAllocation) -> Result<f64, SimError> {
        if kind == SubStageKind::ToolWait {
            return Ok(1.0);
        }
        Ok(self.model.slowdown(kind, partner, alloc)?)
    }

    fn new_task(&self, g: usize) -> Task {
        let s = self.inst.stage(g);
        Task {
            lead: g,
            members: vec![g],
            worker: self.inst.global(g).worker,
            pipeline: self.inst.global(g).pipeline,
            kind: s.kind,
            mem_need: s.mem_fraction,
            total: s.duration,
            work_left: s.duration,
            stall_left: 0.0,
            slowdown: 1.0,
            alloc: ResourceAllocation::EXCLUSIVE,
            partner: None,
            merged: false,
        }
    }

    fn launch(&mut self, task: Task) {
        for &m in &task.members {
            self.st.nodes[m] = NodeState::Running(task.lead);
            if self.st.start[m].is_nan() {
                self.st.start[m] = self.st.now;
                self.event(EventKind::Start, task.worker, m, task.alloc);
            }
        }
        self.st.tasks.push(task);
    }

    /// Drops co-location from the task led by `lead`; it runs alone from now.
    fn isolate(&mut self, lead: usize) {
        if let Some(i) = self.task_index(lead) {
            let t = &mut self.st.tasks[i];
            t.partner = None;
            t.slowdown = 1.0;
            let changed = t.alloc != ResourceAllocation::EXCLUSIVE;
            t.alloc = ResourceAllocation::EXCLUSIVE;
            let (w, a) = (t.worker, t.alloc);
            if changed {
                self.event(EventKind::Reallocation, w, lead, a);
            }
        }
    }

    fn rerate_pair(&mut self, x: usize, y: usize) -> Result<(), SimError> {
        let (ix, iy) = (self.task_index(x).unwrap(), self.task_index(y).unwrap());
        let (kx, ky) = (self.st.tasks[ix].kind, self.st.tasks[iy].kind);
        let sx = self.rate(kx, Some(ky), self.st.tasks[ix].alloc)?;
        let sy = self.rate(ky, Some(kx), self.st.tasks[iy].alloc)?;
        self.st.tasks[ix].slowdown = sx;
        self.st.tasks[iy].slowdown = sy;
        Ok(())
    }

    pub fn apply(&mut self, action: &ScheduleAction) -> Result<(), SimError> {
        match action {
            ScheduleAction::Exclusive(n) => {
                let g = self.resolve(*n)?;
                self.start_exclusive(g)
            }
            ScheduleAction::Multiplex { a, b, alloc } => {
                let (a, b) = (self.resolve(*a)?, self.resolve(*b)?);
                self.multiplex(a, b, *alloc)
            }
            ScheduleAction::Merge { members, target } => {
                let ms = members.iter().map(|m| self.resolve(*m)).collect::<Result<Vec<_>, _>>()?;
                let t = self.resolve(*target)?;
                self.merge(&ms, t)
            }
        }
    }

    pub fn start_exclusive(&mut self, g: usize) -> Result<(), SimError> {
        self.require_ready(g)?;
        let task = self.new_task(g);
        if task.is_compute() && !self.worker_idle(task.worker) {
            return Err(SimError::WorkerBusy {
                worker: task.worker,
                node: self.inst.node_ref(g),
            });
        }
        self.launch(task);
        Ok(())
    }

    /// Co-locates `a` (granted `alloc`) with `b` (granted the complement).
    /// At most one side may already be running, and then only alone.
    pub fn multiplex(&mut self, a: usize, b: usize, alloc: ResourceAllocation) -> Result<(), SimError> {
        let invalid = |msg: String| Err(SimError::InvalidAction(msg));
        let (ra, rb) = (self.inst.node_ref(a), self.inst.node_ref(b));
        if a == b {
            return invalid(format!("multiplex of {ra} with itself"));
        }
        if !alloc.is_valid() {
            return invalid(format!("multiplex {ra} {rb}: allocation {alloc} out of range"));
        }
        let running = |g: usize| matches!(self.st.nodes[g], NodeState::Running(l) if l == g);
        let (a_run, b_run) = (running(a), running(b));
        if a_run && b_run {
            return invalid(format!("multiplex {ra} {rb}: both already running"));
        }
        let side = |g: usize, run: bool| -> Result<Task, SimError> {
            if run {
                let t = self.task(g).unwrap();
                if t.partner.is_some() {
                    return Err(SimError::InvalidAction(format!(
                        "{} is already co-located",
                        self.inst.node_ref(g)
                    )));
                }
                Ok(t.clone())
            } else {
                self.require_ready(g)?;
                Ok(self.new_task(g))
            }
        };
        let ta = side(a, a_run)?;
        let tb = side(b, b_run)?;
        if !ta.is_compute() || !tb.is_compute() {
            return invalid(format!("multiplex {ra} {rb}: tool waits need no co-location"));
        }
        if ta.worker != tb.worker {
            return invalid(format!("multiplex {ra} {rb}: different workers"));
        }
        if ta.pipeline == tb.pipeline {
            return invalid(format!("multiplex {ra} {rb}: same pipeline"));
        }
        let worker = ta.worker;
        let occupants: Vec<usize> = self.compute_tasks_on(worker).iter().map(|t| t.lead).collect();
        let expected: Vec<usize> = [(a, a_run), (b, b_run)].iter().filter(|x| x.1).map(|x| x.0).collect();
        if occupants != expected {
            return Err(SimError::WorkerBusy {
                worker,
                node: if a_run { rb } else { ra },
            });
        }
        if !self.model.feasible(ta.mem_need, tb.mem_need) {
            return Err(SimError::Memory {
                time: self.st.now,
                worker,
                a: ra,
                b: rb,
                need: ta.mem_need + tb.mem_need,
            });
        }
        let grants = [alloc, self.model.complement(alloc)];
        for (mut t, run, grant) in [(ta, a_run, grants[0]), (tb, b_run, grants[1])] {
            let partner = if t.lead == a { b } else { a };
            if run {
                let i = self.task_index(t.lead).unwrap();
                let cur = &mut self.st.tasks[i];
                if cur.kind.is_rollout() && cur.alloc.mem_share != grant.mem_share {
                    cur.stall_left += self.opts.realloc_penalty;
                }
                cur.alloc = grant;
                cur.partner = Some(partner);
                let (w, l) = (cur.worker, cur.lead);
                self.event(EventKind::Reallocation, w, l, grant);
            } else {
                t.alloc = grant;
                t.partner = Some(partner);
                self.launch(t);
            }
        }
        self.rerate_pair(a, b)
    }

    /// Moves rollout fragments of one pipeline onto `target`'s worker and
    /// runs them there as one decode batch.
    pub fn merge(&mut self, members: &[usize], target: usize) -> Result<(), SimError> {
        let names = || {
            members
                .iter()
                .map(|&g| self.inst.node_ref(g).to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let invalid = |msg: &str| SimError::InvalidAction(format!("merge {}: {msg}", names()));
        if members.len() < 2 {
            return Err(invalid("needs at least two members"));
        }
        if !members.contains(&target) {
            return Err(invalid("target is not a member"));
        }
        let pipeline = self.inst.global(target).pipeline;
        let mut workers = Vec::new();
        let mut running = Vec::new();
        for (i, &g) in members.iter().enumerate() {
            if members[..i].contains(&g) {
                return Err(invalid("repeated member"));
            }
            let gn = self.inst.global(g);
            if gn.pipeline != pipeline {
                return Err(invalid("members span pipelines"));
            }
            if workers.contains(&gn.worker) {
                return Err(invalid("two members on one worker"));
            }
            workers.push(gn.worker);
            if !self.inst.stage(g).kind.is_mergeable() {
                return Err(invalid("member kind is not a mergeable decode fragment"));
            }
            match self.st.nodes[g] {
                NodeState::Running(l) if l == g && !self.task(g).unwrap().merged => running.push(true),
                NodeState::Pending => {
                    self.require_ready(g)?;
                    running.push(false)
                }
                _ => return Err(invalid("member is neither ready nor running alone")),
            }
        }
        let t_idx = members.iter().position(|&g| g == target).unwrap();
        let t_worker = self.inst.global(target).worker;
        if !running[t_idx] && !self.worker_idle(t_worker) {
            return Err(SimError::WorkerBusy {
                worker: t_worker,
                node: self.inst.node_ref(target),
            });
        }

        let graph = self.inst.graph_of(target);
        let mut staged = Vec::new();
        let mut stall = 0.0;
        let mut mem_need: f64 = 0.0;
        for (i, &g) in members.iter().enumerate() {
            let s = self.inst.stage(g);
            let frac = if running[i] {
                let t = self.task(g).unwrap();
                if t.total > 0.0 {
                    t.work_left / t.total
                } else {
                    0.0
                }
            } else {
                1.0
            };
            staged.push((s, frac));
            mem_need = mem_need.max(s.mem_fraction);
            if g != target {
                stall += migration_cost(s, &graph.params).map_err(|e| invalid(&e.to_string()))?;
            }
        }
        let (t_merged, kind) = merged_duration(graph, &staged);

        if running[t_idx] {
            if let Some(p) = self.task(target).unwrap().partner {
                if !self.model.feasible(mem_need, self.task(p).unwrap().mem_need) {
                    return Err(SimError::Memory {
                        time: self.st.now,
                        worker: t_worker,
                        a: self.inst.node_ref(target),
                        b: self.inst.node_ref(p),
                        need: mem_need + self.task(p).unwrap().mem_need,
                    });
                }
            }
        }

        for (i, &g) in members.iter().enumerate() {
            if g == target {
                continue;
            }
            if running[i] {
                let idx = self.task_index(g).unwrap();
                let gone = self.st.tasks.remove(idx);
                if let Some(p) = gone.partner {
                    self.isolate(p);
                }
            }
            self.st.nodes[g] = NodeState::Running(target);
            if self.st.start[g].is_nan() {
                self.st.start[g] = self.st.now;
                self.event(EventKind::Start, t_worker, g, ResourceAllocation::EXCLUSIVE);
            }
            self.event(EventKind::Migration, t_worker, g, ResourceAllocation::EXCLUSIVE);
        }

        let mut sorted = members.to_vec();
        sorted.sort_unstable();
        if running[t_idx] {
            let idx = self.task_index(target).unwrap();
            let t = &mut self.st.tasks[idx];
            t.members = sorted;
            t.kind = kind;
            t.total = t_merged;
            t.work_left = t_merged;
            t.stall_left += stall;
            t.mem_need = mem_need;
            t.merged = true;
            match t.partner {
                Some(p) => self.rerate_pair(target, p)?,
                None => self.st.tasks[idx].slowdown = 1.0,
            }
        } else {
            let mut t = self.new_task(target);
            t.members = sorted;
            t.kind = kind;
            t.total = t_merged;
            t.work_left = t_merged;
            t.stall_left = stall;
            t.mem_need = mem_need;
            t.merged = true;
            self.launch(t);
        }
        Ok(())
    }

    /// Time of the next task completion.
    pub fn next_event_time(&self) -> Option<f64> {
        self.st
            .tasks
            .iter()
            .map(|t| self.st.now + t.time_left())
            .min_by(f64::total_cmp)
    }

    fn record_util(&mut self, until: f64) {
        if self.log.is_none() || until <= self.st.now {
            return;
        }
        let mut per_worker = vec![0.0; self.inst.n_workers()];
        for t in &self.st.tasks {
            if t.kind.is_compute_bound() {
                per_worker[t.worker] += t.alloc.sm_share;
            }
        }
        let now = self.st.now;
        let log = self.log.as_mut().unwrap();
        for (w, u) in per_worker.into_iter().enumerate() {
            let u = u.min(1.0);
            if u <= 0.0 {
                continue;
            }
            if let Some(last) = log.util.iter_mut().rev().find(|s| s.worker == w) {
                if last.end == now && last.util == u {
                    last.end = until;
                    continue;
                }
            }
            log.util.push(UtilSegment {
                worker: w,
                start: now,
                end: until,
                util: u,
            });
        }
    }

    /// Runs to the next completion and retires every task finishing then.
    pub fn advance(&mut self) -> Result<(), SimError> {
        let next = self.next_event_time().ok_or(SimError::Deadlock { time: self.st.now })?;
        self.step_to(next, true);
        Ok(())
    }

    /// Moves the clock to `t`. Running tasks progress; tasks reaching zero
    /// are retired. `t` must not lie past the next completion.
    pub fn advance_to(&mut self, t: f64) {
        match self.next_event_time() {
            Some(next) if t + TIME_TOL * t.abs().max(1.0) >= next => self.step_to(next, true),
            Some(_) => self.step_to(t, false),
            None => self.st.now = self.st.now.max(t),
        }
    }

    fn step_to(&mut self, t: f64, retire: bool) {
        self.record_util(t);
        let dt = t - self.st.now;
        let tol = TIME_TOL * t.abs().max(1.0);
        let mut finished = Vec::new();
        for task in &mut self.st.tasks {
            if retire && task.time_left() - dt <= tol {
                task.stall_left = 0.0;
                task.work_left = 0.0;
                finished.push(task.lead);
            } else {
                task.progress(dt);
            }
        }
        self.st.now = t;
        if finished.is_empty() {
            return;
        }
        finished.sort_unstable();
        let mut survivors = Vec::new();
        for &lead in &finished {
            let i = self.task_index(lead).unwrap();
            let task = self.st.tasks.remove(i);
            if let Some(p) = task.partner {
                if !finished.contains(&p) {
                    survivors.push(p);
                }
            }
            for &m in &task.members {
                self.st.nodes[m] = NodeState::Done;
                self.st.finish[m] = t;
                self.st.done += 1;
                self.event(EventKind::Finish, task.worker, m, task.alloc);
                for &s in self.inst.succs(m) {
                    self.st.preds_left[s] -= 1;
                }
            }
        }
        for p in survivors {
            self.isolate(p);
        }
    }
}
