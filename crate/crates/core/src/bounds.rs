//! Executable checks of the cost-improvement guarantees of DPI with
//! approximate evaluation, and the randomized suites that exercise them.
//!
//! Infinite horizon: `J_next <= J_base + beta / (1 - alpha)` where `beta` is
//! the max-norm gap between the base policy's exact and approximate costs.
//! Finite horizon: `J_{k,rollout} <= J_{k,base} + (N - k) beta`.
//!
//! Both reports also check the premise `J_alp <= J_exact`, which every
//! genuine ALP solution satisfies; a violation points at a broken evaluator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alp::{alp_evaluate_fh_stage, alp_evaluate_ih, FeatureMatrix, StateWeights};
use crate::dp::{evaluate_policy_exact_fh, evaluate_policy_exact_ih};
use crate::dpi::dpi_sweep;
use crate::envs::{build_random_comdp, RandomMode, RandomSpec};
use crate::error::{Error, Result};
use crate::mdp::{CoMdp, JointPolicy, NonstationaryPolicy, ValueFunction};

/// Additive slack on the improvement bound.
pub const BOUND_TOL: f64 = 1e-7;
/// Slack on the lower-bound premise.
pub const PREMISE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub beta: f64,
    /// `min_{k,x} (bound - lhs)`; negative means violated.
    pub worst_slack: f64,
    /// `(stage, state)` of the worst slack; stage is `None` for infinite horizon.
    pub worst_at: (Option<usize>, usize),
    pub bound_holds: bool,
    /// `max_{k,x} (J_alp - J_exact)`.
    pub premise_excess: f64,
    pub premise_holds: bool,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.bound_holds && self.premise_holds
    }
}

fn premise(exact: &[f64], alp: &[f64]) -> f64 {
    alp.iter().zip(exact).map(|(a, e)| a - e).fold(f64::NEG_INFINITY, f64::max)
}

/// Infinite-horizon check for one improvement step `mu_t -> mu_next`,
/// with `j_alp` the approximate cost of `mu_t` used by the sweep.
pub fn verify_ih_bound(
    mdp: &CoMdp,
    mu_t: &JointPolicy,
    mu_next: &JointPolicy,
    j_alp: &ValueFunction,
) -> Result<BoundReport> {
    let alpha = mdp.discount()?;
    if j_alp.len() != mdp.n() {
        return Err(Error::Dimension("approximate values have the wrong length".into()));
    }
    let base = evaluate_policy_exact_ih(mdp, mu_t)?;
    let next = evaluate_policy_exact_ih(mdp, mu_next)?;
    let beta = base.max_abs_diff(j_alp);
    let allowance = beta / (1.0 - alpha);
    let mut worst_slack = f64::INFINITY;
    let mut worst_x = 0;
    for x in 0..mdp.n() {
        let slack = base[x] + allowance - next[x];
        if slack < worst_slack {
            worst_slack = slack;
            worst_x = x;
        }
    }
    let premise_excess = premise(&base.values, &j_alp.values);
    Ok(BoundReport {
        beta,
        worst_slack,
        worst_at: (None, worst_x),
        bound_holds: worst_slack >= -BOUND_TOL,
        premise_excess,
        premise_holds: premise_excess <= PREMISE_TOL,
    })
}

/// Finite-horizon check. `alp_values` holds the base policy's approximate
/// stage costs `V_0..V_N` (`V_N = g_N`).
pub fn verify_fh_bound(
    mdp: &CoMdp,
    pi: &NonstationaryPolicy,
    pi_tilde: &NonstationaryPolicy,
    alp_values: &[ValueFunction],
) -> Result<BoundReport> {
    let (stages, _) = mdp.finite()?;
    if alp_values.len() != stages + 1 || alp_values.iter().any(|v| v.len() != mdp.n()) {
        return Err(Error::Dimension(format!("expected {} stage value vectors of length {}", stages + 1, mdp.n())));
    }
    let base = evaluate_policy_exact_fh(mdp, pi)?;
    let rollout = evaluate_policy_exact_fh(mdp, pi_tilde)?;
    let beta = base
        .iter()
        .zip(alp_values)
        .map(|(e, a)| e.max_abs_diff(a))
        .fold(0.0, f64::max);
    let mut worst_slack = f64::INFINITY;
    let mut worst_at = (Some(0), 0);
    let mut premise_excess = f64::NEG_INFINITY;
    for k in 0..=stages {
        let allowance = (stages - k) as f64 * beta;
        for x in 0..mdp.n() {
            let slack = base[k][x] + allowance - rollout[k][x];
            if slack < worst_slack {
                worst_slack = slack;
                worst_at = (Some(k), x);
            }
        }
        premise_excess = premise_excess.max(premise(&base[k].values, &alp_values[k].values));
    }
    Ok(BoundReport {
        beta,
        worst_slack,
        worst_at,
        bound_holds: worst_slack >= -BOUND_TOL,
        premise_excess,
        premise_holds: premise_excess <= PREMISE_TOL,
    })
}

#[derive(Debug, Clone)]
pub struct RolloutPass {
    pub pi_tilde: NonstationaryPolicy,
    /// Base policy's approximate stage costs `V_0..V_N`.
    pub alp_values: Vec<ValueFunction>,
    pub lp_pivots: usize,
}

/// One improvement pass over all stages: the base policy's approximate
/// costs are built backward from `g_N`, and each stage policy is swept once
/// against the next stage's approximate cost.
pub fn fh_rollout_pass(
    mdp: &CoMdp,
    pi: &NonstationaryPolicy,
    phi: &FeatureMatrix,
    c: &StateWeights,
) -> Result<RolloutPass> {
    let (stages, terminal) = mdp.finite()?;
    if pi.horizon() != stages {
        return Err(Error::Dimension(format!("policy has {} stages, horizon is {stages}", pi.horizon())));
    }
    let mut alp_values = vec![ValueFunction::exact(terminal.to_vec()); stages + 1];
    let mut improved = pi.stages.clone();
    let mut lp_pivots = 0;
    for k in (0..stages).rev() {
        improved[k] = dpi_sweep(mdp, &pi.stages[k], &alp_values[k + 1], 1.0)?.policy;
        let res = alp_evaluate_fh_stage(mdp, k, &pi.stages[k], &alp_values[k + 1], phi, c)?;
        lp_pivots += res.pivot_count;
        alp_values[k] = res.values;
    }
    Ok(RolloutPass { pi_tilde: NonstationaryPolicy::new(improved), alp_values, lp_pivots })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Ih,
    Fh,
}

/// Everything needed to rebuild a suite instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteInstance {
    pub seed: u64,
    pub model: RandomSpec,
    pub basis_d: usize,
    pub basis_seed: u64,
    /// Seed of the random base policy (finite horizon only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub policy_seed: Option<u64>,
}

impl SuiteInstance {
    pub fn build(&self) -> Result<(CoMdp, FeatureMatrix)> {
        let mdp = build_random_comdp(&self.model)?;
        let phi = FeatureMatrix::random_projection(mdp.n(), self.basis_d, self.basis_seed)?;
        Ok((mdp, phi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteFailure {
    pub instance: SuiteInstance,
    /// Improvement iteration (infinite horizon) at which the check failed.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iteration: Option<usize>,
    pub report: BoundReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seeds: u64,
    pub checks: usize,
    pub all_hold: bool,
    pub worst_slack: f64,
    pub worst_seed: u64,
    pub max_beta: f64,
    pub inject_bug: bool,
    pub failures: Vec<SuiteFailure>,
}

/// Iterations per infinite-horizon instance.
const IH_MAX_STEPS: usize = 10;

fn draw_instance(suite: Suite, seed: u64) -> SuiteInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=10);
    let (m, actions_per_agent, mode) = match suite {
        Suite::Ih => {
            let alpha = if seed.is_multiple_of(2) { 0.5 } else { 0.9 };
            (rng.random_range(1..=3), rng.random_range(2..=3), RandomMode::Infinite { alpha })
        }
        Suite::Fh => (2, rng.random_range(2..=3), RandomMode::Finite { stages: rng.random_range(1..=5) }),
    };
    SuiteInstance {
        seed,
        model: RandomSpec {
            seed: rng.random(),
            n,
            m,
            actions_per_agent,
            branching: rng.random_range(1..=n),
            cost_range: (0.0, 10.0),
            mode,
        },
        basis_d: rng.random_range(1..n),
        basis_seed: rng.random(),
        policy_seed: (suite == Suite::Fh).then(|| rng.random()),
    }
}

fn random_policy(mdp: &CoMdp, rng: &mut ChaCha8Rng) -> JointPolicy {
    let agents = (0..mdp.m())
        .map(|i| {
            (0..mdp.n())
                .map(|x| {
                    let set = mdp.actions(x, i);
                    set[rng.random_range(0..set.len())]
                })
                .collect()
        })
        .collect();
    JointPolicy::new(agents)
}

fn shifted(v: &ValueFunction, by: f64) -> ValueFunction {
    ValueFunction::alp(v.values.iter().map(|x| x + by).collect())
}

/// Runs the randomized suite over seeds `0..seeds`. With `inject_bug`, the
/// approximate values handed to the checks are raised by one, which must be
/// caught by the premise check.
pub fn run_suite(suite: Suite, seeds: u64, inject_bug: bool) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        suite,
        seeds,
        checks: 0,
        all_hold: true,
        worst_slack: f64::INFINITY,
        worst_seed: 0,
        max_beta: 0.0,
        inject_bug,
        failures: Vec::new(),
    };
    let note = |report: &mut SuiteReport, inst: &SuiteInstance, iteration, r: BoundReport| {
        report.checks += 1;
        report.max_beta = report.max_beta.max(r.beta);
        if r.worst_slack < report.worst_slack {
            report.worst_slack = r.worst_slack;
            report.worst_seed = inst.seed;
        }
        if !r.passed() {
            report.all_hold = false;
            report.failures.push(SuiteFailure { instance: inst.clone(), iteration, report: r });
        }
    };
    for seed in 0..seeds {
        let inst = draw_instance(suite, seed);
        let (mdp, phi) = inst.build()?;
        let c = StateWeights::uniform(mdp.n());
        match suite {
            Suite::Ih => {
                let alpha = mdp.discount()?;
                let mut mu = JointPolicy::first_actions(&mdp);
                for t in 0..IH_MAX_STEPS {
                    let alp = alp_evaluate_ih(&mdp, &mu, &phi, &c)?.values;
                    let next = dpi_sweep(&mdp, &mu, &alp, alpha)?.policy;
                    let checked = if inject_bug { shifted(&alp, 1.0) } else { alp };
                    let r = verify_ih_bound(&mdp, &mu, &next, &checked)?;
                    note(&mut report, &inst, Some(t), r);
                    if next == mu {
                        break;
                    }
                    mu = next;
                }
            }
            Suite::Fh => {
                let (stages, _) = mdp.finite()?;
                let mut rng = ChaCha8Rng::seed_from_u64(inst.policy_seed.unwrap_or(seed));
                let pi = NonstationaryPolicy::new((0..stages).map(|_| random_policy(&mdp, &mut rng)).collect());
                let pass = fh_rollout_pass(&mdp, &pi, &phi, &c)?;
                let mut alp = pass.alp_values;
                if inject_bug {
                    for v in &mut alp[..stages] {
                        *v = shifted(v, 1.0);
                    }
                }
                let r = verify_fh_bound(&mdp, &pi, &pass.pi_tilde, &alp)?;
                note(&mut report, &inst, None, r);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alp::BasisKind;

    #[test]
    fn unchanged_policy_has_nonnegative_slack() {
        let inst = draw_instance(Suite::Ih, 3);
        let (mdp, phi) = inst.build().unwrap();
        let mu = JointPolicy::first_actions(&mdp);
        let alp = alp_evaluate_ih(&mdp, &mu, &phi, &StateWeights::uniform(mdp.n())).unwrap();
        let r = verify_ih_bound(&mdp, &mu, &mu, &alp.values).unwrap();
        assert!(r.passed());
        let alpha = mdp.discount().unwrap();
        assert!((r.worst_slack - r.beta / (1.0 - alpha)).abs() < 1e-12);
    }

    #[test]
    fn identity_basis_fh_reduces_to_improvement() {
        let inst = draw_instance(Suite::Fh, 5);
        let mdp = build_random_comdp(&inst.model).unwrap();
        let phi = FeatureMatrix::identity(mdp.n());
        assert_eq!(phi.kind(), BasisKind::Identity);
        let (stages, _) = mdp.finite().unwrap();
        let pi = NonstationaryPolicy::new(vec![JointPolicy::first_actions(&mdp); stages]);
        let pass = fh_rollout_pass(&mdp, &pi, &phi, &StateWeights::uniform(mdp.n())).unwrap();
        let r = verify_fh_bound(&mdp, &pi, &pass.pi_tilde, &pass.alp_values).unwrap();
        assert!(r.beta < 1e-6);
        assert!(r.worst_slack > -1e-6);
    }

    #[test]
    fn same_policy_fh() {
        let inst = draw_instance(Suite::Fh, 8);
        let (mdp, phi) = inst.build().unwrap();
        let (stages, _) = mdp.finite().unwrap();
        let pi = NonstationaryPolicy::new(vec![JointPolicy::first_actions(&mdp); stages]);
        let pass = fh_rollout_pass(&mdp, &pi, &phi, &StateWeights::uniform(mdp.n())).unwrap();
        let r = verify_fh_bound(&mdp, &pi, &pi, &pass.alp_values).unwrap();
        assert!(r.passed());
    }

    #[test]
    fn small_suites_and_injected_bug() {
        assert!(run_suite(Suite::Ih, 5, false).unwrap().all_hold);
        assert!(run_suite(Suite::Fh, 5, false).unwrap().all_hold);
        let bad = run_suite(Suite::Ih, 3, true).unwrap();
        assert!(!bad.all_hold);
        assert!(bad.failures.iter().all(|f| !f.report.premise_holds));
        assert!(!run_suite(Suite::Fh, 3, true).unwrap().all_hold);
    }

    #[test]
    fn instances_respect_suite_limits() {
        for seed in 0..50 {
            let i = draw_instance(Suite::Ih, seed);
            assert!(i.model.n <= 10 && i.model.m <= 3 && i.basis_d < i.model.n);
            let f = draw_instance(Suite::Fh, seed);
            assert!(matches!(f.model.mode, RandomMode::Finite { stages } if (1..=5).contains(&stages)));
            assert_eq!(f.model.m, 2);
        }
    }
}
