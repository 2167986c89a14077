//! Exact full-state dynamic programming over the joint action space.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{max_abs_diff, CoMdp, JointPolicy, NonstationaryPolicy, ValueFunction};

/// Minimum over the joint actions of `x` and the first minimizing local index.
#[inline]
fn joint_min(mdp: &CoMdp, x: usize, j: &[f64], discount: f64) -> (f64, usize) {
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for k in 0..mdp.num_joint_actions(x) {
        let v = mdp.row(x, k).expectation(j, discount);
        if v < best {
            best = v;
            arg = k;
        }
    }
    (best, arg)
}

fn policy_from_local(mdp: &CoMdp, local: &[usize]) -> JointPolicy {
    let mut agents = vec![vec![0; mdp.n()]; mdp.m()];
    for (x, &k) in local.iter().enumerate() {
        for (i, a) in mdp.joint_action(x, k).0.into_iter().enumerate() {
            agents[i][x] = a;
        }
    }
    JointPolicy::new(agents)
}

fn check_len(mdp: &CoMdp, j: &ValueFunction) -> Result<()> {
    if j.len() != mdp.n() {
        return Err(Error::Dimension(format!(
            "value function has {} entries, model has {} states",
            j.len(),
            mdp.n()
        )));
    }
    Ok(())
}

/// `(TJ)(x) = min_u sum_y p_xy(u)[g_xy(u) + alpha J(y)]`.
pub fn bellman_backup(mdp: &CoMdp, j: &ValueFunction) -> Result<ValueFunction> {
    let alpha = mdp.discount()?;
    check_len(mdp, j)?;
    Ok(ValueFunction::exact(
        (0..mdp.n()).map(|x| joint_min(mdp, x, &j.values, alpha).0).collect(),
    ))
}

/// Greedy joint policy of `J`; ties go to the lexicographically smallest
/// joint action.
pub fn greedy_joint_policy(mdp: &CoMdp, j: &ValueFunction) -> Result<JointPolicy> {
    Ok(greedy_joint_policy_counted(mdp, j)?.0)
}

/// [`greedy_joint_policy`] plus the number of one-step expectations
/// evaluated, `sum_x prod_i |U^i(x)|`.
pub fn greedy_joint_policy_counted(mdp: &CoMdp, j: &ValueFunction) -> Result<(JointPolicy, u64)> {
    let alpha = mdp.discount()?;
    check_len(mdp, j)?;
    let local: Vec<usize> = (0..mdp.n()).map(|x| joint_min(mdp, x, &j.values, alpha).1).collect();
    let count = (0..mdp.n()).map(|x| mdp.num_joint_actions(x) as u64).sum();
    Ok((policy_from_local(mdp, &local), count))
}

/// `(T_mu J)(x)`.
pub fn apply_policy_operator(mdp: &CoMdp, mu: &JointPolicy, j: &ValueFunction) -> Result<ValueFunction> {
    let alpha = mdp.discount()?;
    check_len(mdp, j)?;
    mdp.check_policy(mu)?;
    Ok(ValueFunction::exact(policy_backup(mdp, mu, &j.values, alpha)))
}

/// `sum_y p_xy(mu(x)) [g + discount J(y)]` for every `x`, no checks.
pub(crate) fn policy_backup(mdp: &CoMdp, mu: &JointPolicy, j: &[f64], discount: f64) -> Vec<f64> {
    (0..mdp.n())
        .map(|x| mdp.policy_row(x, mu).expectation(j, discount))
        .collect()
}

/// Solves `(I - alpha P_mu) J = g_mu` by LU with partial pivoting.
pub fn evaluate_policy_exact_ih(mdp: &CoMdp, mu: &JointPolicy) -> Result<ValueFunction> {
    let alpha = mdp.discount()?;
    mdp.check_policy(mu)?;
    let n = mdp.n();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut g = DVector::<f64>::zeros(n);
    for x in 0..n {
        let row = mdp.policy_row(x, mu);
        for (y, p, c) in row.entries() {
            a[(x, y)] -= alpha * p;
            g[x] += p * c;
        }
    }
    let j = a.lu().solve(&g).ok_or(Error::Singular)?;
    Ok(ValueFunction::exact(j.iter().copied().collect()))
}

#[derive(Debug, Clone)]
pub struct ValueIterationResult {
    pub values: ValueFunction,
    pub policy: JointPolicy,
    pub iterations: usize,
}

/// Iterates `J <- TJ` from zero until `||TJ - J||_inf <= tol`.
pub fn value_iteration(mdp: &CoMdp, tol: f64) -> Result<ValueIterationResult> {
    let alpha = mdp.discount()?;
    if !(tol > 0.0) {
        return Err(Error::Dimension(format!("tolerance must be positive, got {tol}")));
    }
    let n = mdp.n();
    let mut j = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let next: Vec<f64> = (0..n).map(|x| joint_min(mdp, x, &j, alpha).0).collect();
        iterations += 1;
        let residual = max_abs_diff(&next, &j);
        if residual <= tol {
            break;
        }
        j = next;
    }
    let values = ValueFunction::exact(j);
    let policy = greedy_joint_policy(mdp, &values)?;
    Ok(ValueIterationResult { values, policy, iterations })
}

#[derive(Debug, Clone)]
pub struct PolicyIterationResult {
    pub policy: JointPolicy,
    pub values: ValueFunction,
    /// Number of improvement steps, including the final one that leaves the
    /// policy unchanged.
    pub iterations: usize,
    /// One-step expectations evaluated by the improvement steps.
    pub evaluations: u64,
}

/// Relative margin by which a challenger must beat the incumbent action in
/// policy iteration.
const IMPROVEMENT_MARGIN: f64 = 1e-12;

/// Joint policy iteration: exact evaluation followed by exact joint greedy
/// improvement until the policy repeats. The incumbent action is kept
/// unless another joint action is strictly better.
pub fn policy_iteration_joint(mdp: &CoMdp, mu0: &JointPolicy) -> Result<PolicyIterationResult> {
    let alpha = mdp.discount()?;
    mdp.check_policy(mu0)?;
    let n = mdp.n();
    let mut mu = mu0.clone();
    let mut iterations = 0;
    let mut evaluations = 0;
    loop {
        let values = evaluate_policy_exact_ih(mdp, &mu)?;
        let mut next = mu.clone();
        for x in 0..n {
            let current = mdp.policy_row(x, &mu).expectation(&values.values, alpha);
            let (best, k) = joint_min(mdp, x, &values.values, alpha);
            evaluations += mdp.num_joint_actions(x) as u64;
            if best < current - IMPROVEMENT_MARGIN * (1.0 + current.abs()) {
                for (i, a) in mdp.joint_action(x, k).0.into_iter().enumerate() {
                    next.agents[i][x] = a;
                }
            }
        }
        iterations += 1;
        if next == mu {
            return Ok(PolicyIterationResult { policy: mu, values, iterations, evaluations });
        }
        mu = next;
    }
}

#[derive(Debug, Clone)]
pub struct FiniteHorizonSolution {
    pub policy: NonstationaryPolicy,
    /// `J_0, ..., J_N`.
    pub values: Vec<ValueFunction>,
}

/// Backward induction `J_N = g_N`, `J_k = T J_{k+1}` with undiscounted stages.
pub fn finite_horizon_dp(mdp: &CoMdp) -> Result<FiniteHorizonSolution> {
    let (stages, terminal) = mdp.finite()?;
    let n = mdp.n();
    let mut values = vec![ValueFunction::exact(terminal.to_vec())];
    let mut policies = Vec::with_capacity(stages);
    for _ in 0..stages {
        let next = &values.last().expect("terminal stage present").values;
        let mut j = vec![0.0; n];
        let mut local = vec![0; n];
        for x in 0..n {
            let (v, k) = joint_min(mdp, x, next, 1.0);
            j[x] = v;
            local[x] = k;
        }
        values.push(ValueFunction::exact(j));
        policies.push(policy_from_local(mdp, &local));
    }
    values.reverse();
    policies.reverse();
    Ok(FiniteHorizonSolution { policy: NonstationaryPolicy::new(policies), values })
}

/// Exact per-stage costs `J_{0,pi}, ..., J_{N,pi}` of a nonstationary policy.
pub fn evaluate_policy_exact_fh(mdp: &CoMdp, pi: &NonstationaryPolicy) -> Result<Vec<ValueFunction>> {
    let (stages, terminal) = mdp.finite()?;
    if pi.horizon() != stages {
        return Err(Error::Dimension(format!(
            "policy has {} stages, horizon is {stages}",
            pi.horizon()
        )));
    }
    for mu in &pi.stages {
        mdp.check_policy(mu)?;
    }
    let mut values = vec![ValueFunction::exact(terminal.to_vec())];
    for mu in pi.stages.iter().rev() {
        let next = &values.last().expect("terminal stage present").values;
        values.push(ValueFunction::exact(policy_backup(mdp, mu, next, 1.0)));
    }
    values.reverse();
    Ok(values)
}

/// Mean of `J_0` over the given states (all states when `states` is empty).
pub fn mean_over(values: &ValueFunction, states: &[usize]) -> f64 {
    if states.is_empty() {
        return values.values.iter().sum::<f64>() / values.len().max(1) as f64;
    }
    states.iter().map(|&x| values[x]).sum::<f64>() / states.len() as f64
}
