use proptest::prelude::*;
use rlmux::scheduler::fixtures::random_migration_case;
use rlmux::scheduler::{balance_batches, estimate, MemberTerms};
use rlmux::slowdown::SlowdownModel;

fn terms(t_k: f64, s_k: f64, t_partner: f64, s_partner: f64, cost: f64) -> MemberTerms {
    MemberTerms {
        t_k,
        s_k,
        t_partner,
        s_partner,
        cost,
    }
}

#[test]
fn hand_examples() {
    let c = estimate(&[terms(20.0, 1.3, 15.0, 1.3, 2.0), terms(30.0, 1.3, 15.0, 1.3, 2.0)], 1, 32.0, 1.2).unwrap();
    assert_eq!((c.t_origin, c.t_migr, c.delta), (58.5, 52.0, 6.5));
    assert_eq!(c.member_costs, vec![2.0, 0.0]);

    let a = estimate(&[terms(10.0, 1.0, 10.0, 1.0, 0.0), terms(10.0, 1.0, 10.0, 1.0, 0.0)], 0, 12.0, 1.0).unwrap();
    assert_eq!((a.t_origin, a.t_migr, a.delta), (20.0, 22.0, -2.0));
    assert!(!a.recommends_migration());
}

#[test]
fn random_cases_replay_cleanly() {
    let model = SlowdownModel::default();
    for seed in 0..100 {
        let case = random_migration_case(seed, &model);
        let est = case.estimate(&model).unwrap();
        assert!(est.t_origin > 0.0 && est.t_migr > 0.0, "seed {seed}");
        assert_eq!(est.member_costs[case.target], 0.0);
        let (stay, moved) = case.simulate(&model).unwrap();
        assert!(stay > 0.0 && moved > 0.0, "seed {seed}");
        // Merged work cannot finish before its own exclusive batch does.
        assert!(moved >= est.merged_time - 1e-9, "seed {seed}: {moved} < {}", est.merged_time);
    }
}

proptest! {
    #[test]
    fn realized_ratio_within_one_sample(
        n in 2usize..8,
        extra in 0usize..500,
        s in 1.0f64..3.0,
        c in 0.01f64..1.0,
        target_pick in 0usize..64,
    ) {
        let global = 2 * n + extra;
        let target = target_pick % n;
        let t = move |bs: usize| c * bs as f64;
        let b_star = s * global as f64 / (1.0 + s * (n - 1) as f64);
        let (lo, hi) = (b_star.floor() as usize, b_star.ceil() as usize);
        prop_assume!(lo >= 1 && global > (n - 1) * hi);
        let ratio = |b: usize| t(b) / t(global - (n - 1) * b);
        let plan = balance_batches(global, n, target, s, t).unwrap();
        prop_assert_eq!(plan.batch_sizes.iter().sum::<usize>(), global);
        prop_assert!((plan.realized_ratio - s).abs() <= (ratio(hi) - ratio(lo)).abs() + 1e-12);
    }
}
