mod common;

use comdp_core::envs::{build_spiders_and_flies, grid, GridMode, GridSpec};
use comdp_core::{
    bellman_backup, evaluate_policy_exact_fh, evaluate_policy_exact_ih, finite_horizon_dp, greedy_joint_policy,
    policy_iteration_joint, value_iteration, CoMdp, CoMdpBuilder, Horizon, JointPolicy, NonstationaryPolicy,
    ValueFunction,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> ValueFunction {
    ValueFunction::exact((0..n).map(|_| rng.random_range(-10.0..10.0)).collect())
}

fn random_policy(mdp: &CoMdp, rng: &mut ChaCha8Rng) -> JointPolicy {
    JointPolicy::new(
        (0..mdp.m())
            .map(|i| (0..mdp.n()).map(|x| mdp.actions(x, i)[rng.random_range(0..mdp.actions(x, i).len())]).collect())
            .collect(),
    )
}

#[test]
fn expected_stage_value_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..20 {
        let mdp = random_ih(seed, 4, 2, 2, 0.9);
        let d = densify(&mdp);
        let j = random_values(&mut rng, 4);
        for x in 0..4 {
            for (k, u) in mdp.joint_actions(x).iter().enumerate() {
                let got = mdp.expected_stage_value(x, u, &j, 0.9).unwrap();
                assert!((got - direct_sum(&d, x, k, &j.values, 0.9)).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn backup_and_greedy_match_joint_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..20 {
        let mdp = random_ih(seed, 5, 2, 2, 0.8);
        let d = densify(&mdp);
        let j = random_values(&mut rng, 5);
        let tj = bellman_backup(&mdp, &j).unwrap();
        let mu = greedy_joint_policy(&mdp, &j).unwrap();
        for x in 0..5 {
            let vals: Vec<f64> = (0..4).map(|k| direct_sum(&d, x, k, &j.values, 0.8)).collect();
            let best = vals.iter().copied().fold(f64::INFINITY, f64::min);
            assert!((tj[x] - best).abs() <= 1e-12);
            let chosen = direct_sum(&d, x, local_index(&mdp, &mu, x), &j.values, 0.8);
            assert!((chosen - tj[x]).abs() <= 1e-12);
        }
    }
}

#[test]
fn exact_evaluation_matches_repeated_backups() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..10 {
        let mdp = random_ih(seed, 6, 2, 2, 0.9);
        let d = densify(&mdp);
        let mu = random_policy(&mdp, &mut rng);
        let exact = evaluate_policy_exact_ih(&mdp, &mu).unwrap();
        let mut j = vec![0.0; 6];
        for _ in 0..500 {
            j = (0..6).map(|x| direct_sum(&d, x, local_index(&mdp, &mu, x), &j, 0.9)).collect();
        }
        // g <= 5, so the truncation error is at most 5 * 0.9^500 / 0.1
        let tail = 5.0 * 0.9f64.powi(500) / 0.1;
        for x in 0..6 {
            assert!((exact[x] - j[x]).abs() <= tail + 1e-9);
        }
        let residual = (0..6)
            .map(|x| (direct_sum(&d, x, local_index(&mdp, &mu, x), &exact.values, 0.9) - exact[x]).abs())
            .fold(0.0, f64::max);
        assert!(residual <= 1e-9);
    }
}

#[test]
fn optimal_cost_agrees_with_policy_enumeration() {
    for seed in 0..10 {
        let n = 3 + (seed as usize % 3);
        let mdp = random_ih(100 + seed, n, 2, 2, 0.9);
        let best = best_cost_by_enumeration(&mdp, 0.9);
        let vi = value_iteration(&mdp, 1e-11).unwrap();
        let vi_cost = evaluate_policy_exact_ih(&mdp, &vi.policy).unwrap();
        let pi = policy_iteration_joint(&mdp, &JointPolicy::first_actions(&mdp)).unwrap();
        for x in 0..n {
            assert!((vi_cost[x] - best[x]).abs() <= 1e-8);
            assert!((pi.values[x] - best[x]).abs() <= 1e-8);
        }
        let tj = bellman_backup(&mdp, &pi.values).unwrap();
        assert!(tj.max_abs_diff(&pi.values) <= 1e-9);
    }
}

#[test]
fn policy_iteration_from_optimum_stops_after_one_sweep() {
    let mdp = random_ih(7, 6, 2, 2, 0.9);
    let first = policy_iteration_joint(&mdp, &JointPolicy::first_actions(&mdp)).unwrap();
    let again = policy_iteration_joint(&mdp, &first.policy).unwrap();
    assert_eq!(again.iterations, 1);
    assert_eq!(again.policy, first.policy);
}

#[test]
fn fh_evaluation_matches_trajectory_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..10 {
        let mdp = random_fh(seed, 4, 2, 2, 3);
        let (_, terminal) = mdp.finite().unwrap();
        let pi = NonstationaryPolicy::new((0..3).map(|_| random_policy(&mdp, &mut rng)).collect());
        let values = evaluate_policy_exact_fh(&mdp, &pi).unwrap();
        for x in 0..4 {
            let oracle = trajectory_cost(&mdp, &pi.stages, terminal, x);
            assert!((values[0][x] - oracle).abs() <= 1e-10);
        }
        for k in 0..=3 {
            for x in 0..4 {
                let oracle = trajectory_cost(&mdp, &pi.stages[k..], terminal, x);
                assert!((values[k][x] - oracle).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn fh_dp_on_grid_matches_forward_chain() {
    let spec = GridSpec::new(3, GridMode::Finite { stages: 6 });
    let mdp = build_spiders_and_flies(&spec).unwrap();
    let sol = finite_horizon_dp(&mdp).unwrap();
    let terminal = vec![0.0; 81];
    for x in 0..81 {
        let oracle = forward_chain_cost(&mdp, &sol.policy.stages, &terminal, x);
        assert!((sol.values[0][x] - oracle).abs() <= 1e-10, "state {x}: {} vs {oracle}", sol.values[0][x]);
    }
    let eval = evaluate_policy_exact_fh(&mdp, &sol.policy).unwrap();
    for (a, b) in eval.iter().zip(&sol.values) {
        assert!(a.max_abs_diff(b) <= 1e-12);
    }
}

#[test]
fn fh_dp_is_optimal_against_all_policies_on_tiny_model() {
    for seed in 0..5 {
        let mdp = random_fh(seed, 3, 1, 2, 2);
        let (_, terminal) = mdp.finite().unwrap();
        let sol = finite_horizon_dp(&mdp).unwrap();
        let all = all_policies(&mdp);
        for x in 0..3 {
            let mut best = f64::INFINITY;
            for a in &all {
                for b in &all {
                    best = best.min(trajectory_cost(&mdp, &[a.clone(), b.clone()], terminal, x));
                }
            }
            assert!((sol.values[0][x] - best).abs() <= 1e-10);
        }
    }
}

#[test]
fn deterministic_two_by_two_capture_costs() {
    let mut spec = GridSpec::new(2, GridMode::Finite { stages: 3 });
    spec.slip_p = 1.0;
    let mdp = build_spiders_and_flies(&spec).unwrap();
    let sol = finite_horizon_dp(&mdp).unwrap();
    assert!(spec.is_goal(spec.encode(0, 3)) && spec.is_goal(spec.encode(3, 0)));
    assert_eq!(sol.values[0][spec.encode(0, 3)], 0.0);
    // spiders on cells 1 and 2 each step straight onto a fly
    assert_eq!(sol.values[0][spec.encode(1, 2)], 1.0);
    // both on cell 0: split to cells 1 and 2, then onto the flies
    assert_eq!(sol.values[0][spec.encode(0, 0)], 2.0);
    // both on cell 3, symmetric
    assert_eq!(sol.values[0][spec.encode(3, 3)], 2.0);
    let k = sol.policy.stages[0].action_at(spec.encode(1, 2)).0;
    // ties between the two capture moves go to the smaller joint action
    assert_eq!(k, vec![grid::DOWN, grid::UP]);
}

#[test]
fn trivial_fh_cases() {
    let mut b = CoMdpBuilder::uniform(2, 1, 1, Horizon::Finite { stages: 1, terminal: vec![0.0; 2] }).unwrap();
    b.set_row(0, &[0], &[(1, 1.0, 1.0)]).unwrap();
    b.set_row(1, &[0], &[(0, 0.5, 1.0), (1, 0.5, 1.0)]).unwrap();
    let sol = finite_horizon_dp(&b.build()).unwrap();
    assert_eq!(sol.values[0].values, vec![1.0, 1.0]);
}
