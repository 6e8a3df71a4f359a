use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;
use rlmux::graph::{exclusive_critical_path, GraphBuilder, SubStageKind};
use rlmux::scheduler::fixtures::{random_small_instance, trap_instance};
use rlmux::scheduler::{run_policy, Instance, NodeRef, Policy, Schedule, ScheduleAction, ScheduleError};
use rlmux::sim::{compare, simulate, EventKind, SimulationReport};
use rlmux::slowdown::SlowdownModel;

const POLICIES: [Policy; 5] = [
    Policy::Serial,
    Policy::NaiveSpatial,
    Policy::RolloutMux,
    Policy::Greedy,
    Policy::Lookahead { window: 3 },
];

/// The fixed-split baselines refuse pairs that do not fit in memory; that
/// is their expected failure mode, not a bug.
fn schedule(policy: Policy, inst: &Instance, model: &SlowdownModel) -> Option<Schedule> {
    match run_policy(policy, inst, model) {
        Ok(s) => Some(s),
        Err(ScheduleError::Infeasible { .. }) if matches!(policy, Policy::NaiveSpatial | Policy::RolloutMux) => None,
        Err(e) => panic!("{policy}: {e}"),
    }
}

fn node_spans(r: &SimulationReport) -> BTreeMap<NodeRef, (f64, f64)> {
    let mut spans = BTreeMap::new();
    for ev in &r.events {
        match ev.kind {
            EventKind::Start => {
                spans.entry(ev.node).or_insert((ev.time, f64::NAN));
            }
            EventKind::Finish => spans.get_mut(&ev.node).expect("start before finish").1 = ev.time,
            _ => {}
        }
    }
    spans
}

fn merged_nodes(s: &Schedule) -> HashSet<NodeRef> {
    s.iter()
        .filter_map(|a| match &a.action {
            ScheduleAction::Merge { members, .. } => Some(members.clone()),
            _ => None,
        })
        .flatten()
        .collect()
}

/// Disjoint per-worker chains with a per-worker Training step behind a
/// barrier. Nothing ever shares a worker, so no policy can add slowdown.
fn isolated_pipeline(lens: &[Vec<f64>], train: f64) -> Instance {
    let mut b = GraphBuilder::new(0);
    let mut tails = Vec::new();
    for (w, durs) in lens.iter().enumerate() {
        let items: Vec<(SubStageKind, f64)> = durs.iter().map(|&d| (SubStageKind::DecodeMedium, d)).collect();
        tails.push(*b.chain(w as u32, &items).last().unwrap());
    }
    for w in 0..lens.len() {
        let t = b.node(w as u32, SubStageKind::Training, train);
        for &tail in &tails {
            b.edge(tail, t);
        }
    }
    Instance::new(vec![b.build().unwrap()]).unwrap()
}

#[test]
fn tokens_conserved_under_every_policy() {
    let model = SlowdownModel::default();
    for seed in 0..40 {
        let inst = random_small_instance(seed);
        let want: Vec<u64> = inst.graphs().iter().map(|g| g.total_tokens()).collect();
        for policy in POLICIES {
            let Some(sched) = schedule(policy, &inst, &model) else { continue };
            let r = simulate(&sched, &inst, &model).unwrap();
            let got: Vec<u64> = r.pipelines.iter().map(|p| p.tokens).collect();
            assert_eq!(got, want, "seed {seed} {policy}");
            assert_eq!(r.total_tokens, inst.total_tokens());
            let rel = (r.aggregate_throughput * r.makespan - r.total_tokens as f64).abs() / r.total_tokens as f64;
            assert!(rel < 1e-12, "seed {seed} {policy}: {rel}");
            assert!(r.utilization.iter().all(|u| (0.0..=1.0 + 1e-12).contains(&u.mean)));
        }
    }
}

#[test]
fn events_are_ordered_and_paired() {
    let model = SlowdownModel::default();
    for seed in 0..20 {
        let inst = random_small_instance(seed);
        let r = simulate(&run_policy(Policy::Lookahead { window: 3 }, &inst, &model).unwrap(), &inst, &model).unwrap();
        assert!(r.events.windows(2).all(|w| w[0].time <= w[1].time), "seed {seed}");
        let spans = node_spans(&r);
        assert_eq!(spans.len(), inst.len());
        assert!(spans.values().all(|&(s, f)| f >= s), "seed {seed}");
    }
}

#[test]
fn rerated_durations_stay_in_bounds() {
    let model = SlowdownModel::default();
    let cap = model.table.max_factor();
    for seed in 0..40 {
        let inst = random_small_instance(seed);
        for policy in POLICIES {
            let Some(sched) = schedule(policy, &inst, &model) else { continue };
            let skip = merged_nodes(&sched);
            let r = simulate(&sched, &inst, &model).unwrap();
            for (node, (start, finish)) in node_spans(&r) {
                if skip.contains(&node) {
                    continue;
                }
                let d = inst.stage(inst.resolve(node).unwrap()).duration;
                let took = finish - start;
                assert!(took >= d - 1e-9, "seed {seed} {policy} {node}: {took} < {d}");
                assert!(took <= d * cap + 1e-9, "seed {seed} {policy} {node}: {took} > {d} x {cap}");
            }
        }
    }
}

#[test]
fn replay_is_bit_deterministic() {
    let model = SlowdownModel::default();
    for seed in [1, 9, 23] {
        let inst = random_small_instance(seed);
        let sched = run_policy(Policy::Lookahead { window: 3 }, &inst, &model).unwrap();
        let a = simulate(&sched, &inst, &model).unwrap();
        let b = simulate(&Schedule::parse(&sched.to_text()).unwrap(), &inst, &model).unwrap();
        assert_eq!(a.makespan.to_bits(), b.makespan.to_bits());
        assert_eq!(a.metrics_csv(), b.metrics_csv());
        assert_eq!(a.events, b.events);
    }
}

#[test]
fn comparison_identities() {
    let model = SlowdownModel::default();
    let run = |policy: Policy, inst: &Instance| simulate(&run_policy(policy, inst, &model).unwrap(), inst, &model).unwrap();
    let ratios = |table: &str| -> Vec<Vec<f64>> {
        table
            .lines()
            .skip(1)
            .map(|row| row.split(',').skip(3).map(|x| x.parse().unwrap()).collect())
            .collect()
    };

    let inst = random_small_instance(4);
    let serial = run(Policy::Serial, &inst);
    assert_eq!(ratios(&compare(&serial, &[&serial]).unwrap()), vec![vec![1.0; 4]; 2]);

    let la = run(Policy::Lookahead { window: 3 }, &inst);
    let row = ratios(&compare(&serial, &[&la]).unwrap())[1].clone();
    assert!((row[0] - serial.makespan / la.makespan).abs() < 1e-12);
    assert!((row[1] - row[0]).abs() < 1e-12, "tokens match, so throughput ratio equals speedup");

    let trap = trap_instance();
    let row = ratios(&compare(&run(Policy::Serial, &trap), &[&run(Policy::Lookahead { window: 3 }, &trap)]).unwrap())[1].clone();
    assert!(row[0] > 1.0, "{row:?}");

    assert!(compare(&serial, &[&run(Policy::Serial, &trap)]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn isolated_makespan_is_critical_path(
        lens in prop::collection::vec(prop::collection::vec(1u32..80, 1..4), 1..4),
        train in 1u32..40,
    ) {
        let lens: Vec<Vec<f64>> = lens.iter().map(|l| l.iter().map(|&d| d as f64 * 0.25).collect()).collect();
        let inst = isolated_pipeline(&lens, train as f64 * 0.25);
        let model = SlowdownModel::default();
        let cp = exclusive_critical_path(&inst.graphs()[0]);
        for policy in POLICIES {
            let r = simulate(&run_policy(policy, &inst, &model).unwrap(), &inst, &model).unwrap();
            prop_assert_eq!(r.makespan, cp);
        }
    }

    #[test]
    fn makespan_at_least_critical_path(seed in 0u64..10_000) {
        let inst = random_small_instance(seed);
        let model = SlowdownModel::default();
        let cp = inst.critical_path();
        for policy in POLICIES {
            let Some(sched) = schedule(policy, &inst, &model) else { continue };
            let r = simulate(&sched, &inst, &model).unwrap();
            prop_assert!(r.makespan >= cp - 1e-9, "{} {} < {}", policy, r.makespan, cp);
        }
    }
}
