use crate::scheduler::{Instance, Schedule};
use crate::slowdown::SlowdownModel;

use super::{Engine, NodeState, SimError, SimOptions, SimulationReport, TIME_TOL};

pub fn simulate(
    schedule: &Schedule,
    inst: &Instance,
    model: &SlowdownModel,
) -> Result<SimulationReport, SimError> {
    simulate_with(schedule, inst, model, SimOptions::default())
}

/// Replays `schedule` action by action. Each action is applied once the
/// clock reaches its start time; the clock then runs until every task ends.
pub fn simulate_with(
    schedule: &Schedule,
    inst: &Instance,
    model: &SlowdownModel,
    opts: SimOptions,
) -> Result<SimulationReport, SimError> {
    let mut e = Engine::new(inst, model, opts);
    for a in schedule.iter() {
        while e.now() < a.start - TIME_TOL * a.start.abs().max(1.0) {
            match e.next_event_time() {
                Some(next) if next <= a.start => e.advance()?,
                _ => e.advance_to(a.start),
            }
        }
        e.apply(&a.action)?;
    }
    while e.has_running() {
        e.advance()?;
    }
    if let Some(g) = (0..inst.len()).find(|&g| e.node_state(g) != NodeState::Done) {
        return Err(SimError::Unscheduled(inst.node_ref(g)));
    }
    Ok(SimulationReport::from_engine(&schedule.policy, &mut e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphBuilder, SubStageKind::*};
    use crate::scheduler::{NodeRef, ScheduleAction};

    #[test]
    fn chain_makespan_is_sum() {
        let mut b = GraphBuilder::new(0);
        b.chain(0, &[(DecodeLarge, 3.0), (DecodeSmall, 4.0), (Training, 5.0)]);
        let inst = Instance::new(vec![b.build().unwrap()]).unwrap();
        let model = SlowdownModel::default();
        let mut s = Schedule::new("serial");
        s.push(0.0, ScheduleAction::Exclusive(NodeRef::new(0, 0)));
        s.push(3.0, ScheduleAction::Exclusive(NodeRef::new(0, 1)));
        s.push(7.0, ScheduleAction::Exclusive(NodeRef::new(0, 2)));
        let r = simulate(&s, &inst, &model).unwrap();
        assert_eq!(r.makespan, 12.0);
        assert_eq!(r.makespan, inst.critical_path());
    }

    #[test]
    fn unretired_predecessor_is_an_error() {
        let mut b = GraphBuilder::new(0);
        b.chain(0, &[(DecodeLarge, 3.0), (Training, 5.0)]);
        let inst = Instance::new(vec![b.build().unwrap()]).unwrap();
        let model = SlowdownModel::default();
        let mut s = Schedule::new("bad");
        s.push(0.0, ScheduleAction::Exclusive(NodeRef::new(0, 1)));
        assert!(matches!(simulate(&s, &inst, &model), Err(SimError::Dependency { .. })));
        let s = Schedule::new("empty");
        assert!(matches!(simulate(&s, &inst, &model), Err(SimError::Unscheduled(_))));
    }
}
