mod common;

use comdp_core::envs::{build_random_comdp, build_spiders_and_flies, GridMode, GridSpec, RandomMode, RandomSpec};
use comdp_core::{
    dpi_agent_step, dpi_sweep, evaluate_policy_exact_fh, evaluate_policy_exact_ih, greedy_joint_policy_counted,
    policy_iteration_joint, solve_fh_dpi_alp, solve_ih_dpi_alp, CoMdp, CoMdpBuilder, FeatureMatrix, FhOptions,
    Horizon, IhOptions, JointPolicy, NonstationaryPolicy, StateWeights, ValueFunction,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

/// Checks that no single agent changing its action at a single state lowers
/// the one-step value against `j`.
fn no_profitable_deviation(mdp: &CoMdp, mu: &JointPolicy, j: &[f64], discount: f64) -> bool {
    let d = densify(mdp);
    for x in 0..mdp.n() {
        let current = direct_sum(&d, x, local_index(mdp, mu, x), j, discount);
        for i in 0..mdp.m() {
            for &a in mdp.actions(x, i) {
                let mut dev = mu.clone();
                dev.agents[i][x] = a;
                let v = direct_sum(&d, x, local_index(mdp, &dev, x), j, discount);
                if v < current - 1e-12 {
                    return false;
                }
            }
        }
    }
    true
}

#[test]
fn sweep_counters_match_closed_forms() {
    let grid = build_spiders_and_flies(&GridSpec::new(4, GridMode::Infinite { alpha: 0.9 })).unwrap();
    let j = ValueFunction::zeros(256);
    let sweep = dpi_sweep(&grid, &JointPolicy::first_actions(&grid), &j, 0.9).unwrap();
    let (_, joint) = greedy_joint_policy_counted(&grid, &j).unwrap();
    assert_eq!(sweep.evaluations, 256 * 8);
    assert_eq!(joint, 256 * 16);

    let synthetic = build_random_comdp(&RandomSpec {
        seed: 1,
        n: 5,
        m: 4,
        actions_per_agent: 3,
        branching: 2,
        cost_range: (0.0, 1.0),
        mode: RandomMode::Infinite { alpha: 0.9 },
    })
    .unwrap();
    let j = ValueFunction::zeros(5);
    let sweep = dpi_sweep(&synthetic, &JointPolicy::first_actions(&synthetic), &j, 0.9).unwrap();
    let (_, joint) = greedy_joint_policy_counted(&synthetic, &j).unwrap();
    assert_eq!(sweep.evaluations, 5 * 12);
    assert_eq!(joint, 5 * 81);
}

#[test]
fn state_dependent_sets_count_per_state() {
    let sets = vec![vec![vec![0], vec![0, 1, 2]], vec![vec![0, 1], vec![5, 6]]];
    let mut b = CoMdpBuilder::new(sets, Horizon::Infinite { alpha: 0.5 }).unwrap();
    for x in 0..2 {
        for k in 0..b.num_joint_actions(x) {
            b.set_row_index(x, k, &[(x, 1.0, k as f64)]).unwrap();
        }
    }
    let mdp = b.build();
    let j = ValueFunction::zeros(2);
    let sweep = dpi_sweep(&mdp, &JointPolicy::first_actions(&mdp), &j, 0.5).unwrap();
    let (_, joint) = greedy_joint_policy_counted(&mdp, &j).unwrap();
    assert_eq!(sweep.evaluations, (1 + 3) + (2 + 2));
    assert_eq!(joint, 3 + 4);
}

#[test]
fn later_agent_step_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..10 {
        let mdp = random_ih(seed, 5, 3, 3, 0.9);
        let d = densify(&mdp);
        let j: Vec<f64> = (0..5).map(|_| rng.random_range(-5.0..5.0)).collect();
        let prefix = vec![(0..5).map(|_| rng.random_range(0..3)).collect::<Vec<usize>>()];
        let suffix = vec![(0..5).map(|_| rng.random_range(0..3)).collect::<Vec<usize>>()];
        let step = dpi_agent_step(&mdp, 1, &prefix, &suffix, &ValueFunction::exact(j.clone()), 0.9).unwrap();
        assert_eq!(step.evaluations, 15);
        for x in 0..5 {
            let mut best = (f64::INFINITY, 0);
            for a in 0..3 {
                let k = local_index(&mdp, &JointPolicy::new(vec![prefix[0].clone(), vec![a; 5], suffix[0].clone()]), x);
                let v = direct_sum(&d, x, k, &j, 0.9);
                if v < best.0 {
                    best = (v, a);
                }
            }
            assert_eq!(step.actions[x], best.1);
        }
    }
}

#[test]
fn separable_model_reduces_to_marginal_greedy() {
    // two agents, each moving its own coordinate of a 2x2 product chain; the
    // cost is additive, so agent i's best reply ignores the other agent
    let mut b = CoMdpBuilder::uniform(4, 2, 2, Horizon::Infinite { alpha: 0.5 }).unwrap();
    let cost = [[1.0, 3.0], [2.0, 0.5]];
    for x in 0..4 {
        let (c1, c2) = (x / 2, x % 2);
        for a1 in 0..2 {
            for a2 in 0..2 {
                // action 0 stays, action 1 flips the agent's coordinate
                let y1 = if a1 == 0 { c1 } else { 1 - c1 };
                let y2 = if a2 == 0 { c2 } else { 1 - c2 };
                let g = cost[c1][a1] + cost[c2][a2];
                b.set_row(x, &[a1, a2], &[(y1 * 2 + y2, 1.0, g)]).unwrap();
            }
        }
    }
    let mdp = b.build();
    let j = ValueFunction::exact(vec![0.0, 4.0, 1.0, 5.0]);
    // marginal values: coordinate 1 contributes 0 / 1, coordinate 2 0 / 4
    let step = dpi_agent_step(&mdp, 1, &[vec![0; 4]], &[], &j, 0.5).unwrap();
    for x in 0..4 {
        let c2 = x % 2;
        let v = |a: usize| cost[c2][a] + 0.5 * if (if a == 0 { c2 } else { 1 - c2 }) == 1 { 4.0 } else { 0.0 };
        let want = if v(1) < v(0) { 1 } else { 0 };
        assert_eq!(step.actions[x], want, "state {x}");
    }
}

#[test]
fn fixed_point_is_agent_by_agent_optimal() {
    for seed in 0..20 {
        let mdp = random_ih(300 + seed, 5, 2, 2, 0.9);
        let mut mu = JointPolicy::first_actions(&mdp);
        for _ in 0..100 {
            let j = evaluate_policy_exact_ih(&mdp, &mu).unwrap();
            let next = dpi_sweep(&mdp, &mu, &j, 0.9).unwrap().policy;
            if next == mu {
                assert!(no_profitable_deviation(&mdp, &mu, &j.values, 0.9));
                break;
            }
            mu = next;
        }
    }
}

#[test]
fn optimal_policy_is_a_fixed_point() {
    let mdp = random_ih(17, 6, 2, 2, 0.9);
    let opt = policy_iteration_joint(&mdp, &JointPolicy::first_actions(&mdp)).unwrap();
    let sweep = dpi_sweep(&mdp, &opt.policy, &opt.values, 0.9).unwrap();
    assert_eq!(sweep.policy, opt.policy);
}

#[test]
fn identity_basis_ih_costs_never_increase() {
    for seed in 0..15 {
        let mdp = random_ih(500 + seed, 6, 2, 3, 0.9);
        let opts = IhOptions { verify: true, ..IhOptions::default() };
        let out =
            solve_ih_dpi_alp(&mdp, &JointPolicy::first_actions(&mdp), &FeatureMatrix::identity(6), &StateWeights::uniform(6), &opts)
                .unwrap();
        let exact: Vec<&Vec<f64>> = out.trace.records.iter().map(|r| r.exact_values.as_ref().unwrap()).collect();
        for w in exact.windows(2) {
            for x in 0..6 {
                assert!(w[1][x] <= w[0][x] + 1e-9);
            }
        }
        let j = evaluate_policy_exact_ih(&mdp, &out.last_policy).unwrap();
        assert!(no_profitable_deviation(&mdp, &out.last_policy, &j.values, 0.9));
    }
}

#[test]
fn fh_identity_basis_improves_every_stage() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for seed in 0..10 {
        let mdp = random_fh(seed, 5, 2, 2, 4);
        let pi0 = NonstationaryPolicy::new(
            (0..4)
                .map(|_| JointPolicy::new((0..2).map(|_| (0..5).map(|_| rng.random_range(0..2)).collect()).collect()))
                .collect(),
        );
        let out = solve_fh_dpi_alp(&mdp, &pi0, &FeatureMatrix::identity(5), &StateWeights::uniform(5), &FhOptions::default())
            .unwrap();
        let before = evaluate_policy_exact_fh(&mdp, &pi0).unwrap();
        let after = evaluate_policy_exact_fh(&mdp, &out.policy).unwrap();
        for k in 0..=4 {
            for x in 0..5 {
                assert!(after[k][x] <= before[k][x] + 1e-9);
            }
            assert!(out.alp_values[k].max_abs_diff(&after[k]) <= 1e-6);
        }
    }
}

#[test]
fn fh_grid_stage_loop_is_short() {
    let mdp = build_spiders_and_flies(&GridSpec::new(3, GridMode::Finite { stages: 6 })).unwrap();
    let phi = comdp_core::build_features(comdp_core::BasisKind::GridDistance, &mdp).unwrap();
    let pi0 = NonstationaryPolicy::new(vec![JointPolicy::first_actions(&mdp); 6]);
    let out = solve_fh_dpi_alp(&mdp, &pi0, &phi, &StateWeights::uniform(81), &FhOptions::default()).unwrap();
    assert!(out.iterations_per_stage.iter().all(|&i| i <= 2), "{:?}", out.iterations_per_stage);
}

#[test]
fn one_state_ih_converges_to_cheapest_action() {
    let mut b = CoMdpBuilder::uniform(1, 2, 3, Horizon::Infinite { alpha: 0.9 }).unwrap();
    let g = [5.0, 4.0, 6.0, 3.0, 7.0, 8.0, 9.0, 2.5, 4.0];
    for (k, &c) in g.iter().enumerate() {
        b.set_row_index(0, k, &[(0, 1.0, c)]).unwrap();
    }
    let mdp = b.build();
    let out = solve_ih_dpi_alp(&mdp, &JointPolicy::first_actions(&mdp), &FeatureMatrix::identity(1), &StateWeights::uniform(1), &IhOptions::default())
        .unwrap();
    // from (0,0): agent 0 picks 1 (g = 3), agent 1 then picks 0; next sweep:
    // agent 0 stays, agent 1 stays; the pair (2,1) at 2.5 is not reachable
    // by single-agent moves from (1,0)
    assert_eq!(out.last_policy.action_at(0).0, vec![1, 0]);
}
