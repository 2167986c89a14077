//! Shared fixtures for the solver benchmarks.

use comdp_core::envs::{build_random_comdp, build_spiders_and_flies, GridMode, GridSpec, RandomMode, RandomSpec};
use comdp_core::{build_features, BasisKind, CoMdp, FeatureMatrix, JointPolicy, NonstationaryPolicy, StateWeights};

/// Default spiders-and-flies world with `p = 0.7`.
pub fn grid_ih(h: usize) -> CoMdp {
    build_spiders_and_flies(&GridSpec::new(h, GridMode::Infinite { alpha: 0.9 })).expect("valid grid spec")
}

pub fn grid_fh(h: usize, stages: usize) -> CoMdp {
    build_spiders_and_flies(&GridSpec::new(h, GridMode::Finite { stages })).expect("valid grid spec")
}

/// Random IH model with `actions` per agent and dense-ish rows.
pub fn random_ih(seed: u64, n: usize, m: usize, actions: usize) -> CoMdp {
    build_random_comdp(&RandomSpec {
        seed,
        n,
        m,
        actions_per_agent: actions,
        branching: n.min(8),
        cost_range: (0.0, 10.0),
        mode: RandomMode::Infinite { alpha: 0.9 },
    })
    .expect("valid random spec")
}

/// Grid-distance features and uniform weights, the usual benchmark setup.
pub fn grid_features(mdp: &CoMdp) -> (FeatureMatrix, StateWeights) {
    let phi = build_features(BasisKind::GridDistance, mdp).expect("grid model");
    (phi, StateWeights::uniform(mdp.n()))
}

pub fn first_actions_fh(mdp: &CoMdp) -> NonstationaryPolicy {
    let (stages, _) = mdp.finite().expect("finite-horizon model");
    NonstationaryPolicy::new(vec![JointPolicy::first_actions(mdp); stages])
}
