use rlmux::scheduler::fixtures::{random_small_instance, trap_instance};
use rlmux::scheduler::{
    brute_force_schedule, greedy_schedule, lookahead_schedule, run_policy, serial_schedule, OracleLimits, Policy,
    ScheduleError,
};
use rlmux::sim::simulate;
use rlmux::slowdown::SlowdownModel;

fn makespan(policy: Policy, seed: u64, model: &SlowdownModel) -> f64 {
    let inst = random_small_instance(seed);
    simulate(&run_policy(policy, &inst, model).unwrap(), &inst, model).unwrap().makespan
}

#[test]
fn trap_fixture_values() {
    let model = SlowdownModel::default();
    let inst = trap_instance();
    let ms = |s| simulate(&s, &inst, &model).unwrap().makespan;
    assert_eq!(ms(greedy_schedule(&inst, &model).unwrap()), 26.0);
    assert_eq!(ms(lookahead_schedule(&inst, &model, 3).unwrap()), 17.5);
    assert_eq!(ms(brute_force_schedule(&inst, &model, OracleLimits::default()).unwrap()), 17.5);
    assert_eq!(ms(serial_schedule(&inst, &model).unwrap()), 26.0);
}

#[test]
fn window_of_one_is_greedy() {
    let model = SlowdownModel::default();
    for seed in 0..60 {
        let inst = random_small_instance(seed);
        let g = greedy_schedule(&inst, &model).unwrap();
        let w1 = lookahead_schedule(&inst, &model, 1).unwrap();
        assert_eq!(
            g.iter().map(|a| (a.start, a.action.clone())).collect::<Vec<_>>(),
            w1.iter().map(|a| (a.start, a.action.clone())).collect::<Vec<_>>(),
            "seed {seed}"
        );
    }
}

#[test]
fn greedy_never_loses_to_serial() {
    let model = SlowdownModel::default();
    for seed in 0..100 {
        let g = makespan(Policy::Greedy, seed, &model);
        let s = makespan(Policy::Serial, seed, &model);
        assert!(g <= s + 1e-9, "seed {seed}: greedy {g} serial {s}");
    }
}

#[test]
fn oracle_lower_bounds_heuristics() {
    let model = SlowdownModel::default();
    for seed in [2, 5, 11, 17, 30, 44] {
        let o = makespan(Policy::Oracle(OracleLimits::default()), seed, &model);
        for p in [Policy::Lookahead { window: 3 }, Policy::Greedy, Policy::Serial] {
            let h = makespan(p, seed, &model);
            assert!(o <= h + 1e-9, "seed {seed}: oracle {o} > {p} {h}");
        }
    }
}

#[test]
fn oracle_limits_are_enforced() {
    let model = SlowdownModel::default();
    let inst = random_small_instance(8);
    let tight = OracleLimits {
        max_nodes: inst.len() - 1,
        max_expansions: None,
    };
    let err = brute_force_schedule(&inst, &model, tight).unwrap_err();
    assert!(matches!(err, ScheduleError::OverLimit { .. }));
    assert!(err.to_string().contains("oracle limit"));

    let starved = OracleLimits {
        max_nodes: 10,
        max_expansions: Some(0),
    };
    match brute_force_schedule(&inst, &model, starved) {
        Err(ScheduleError::SearchBudget(0)) | Ok(_) => {}
        Err(e) => panic!("{e}"),
    }
}
