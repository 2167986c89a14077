//! Decentralized (agent-by-agent) policy improvement and the solver loops
//! that pair it with approximate evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alp::{alp_evaluate_fh_stage, alp_evaluate_ih, AlpResult, FeatureMatrix, StateWeights};
use crate::dp::{evaluate_policy_exact_fh, evaluate_policy_exact_ih, mean_over, policy_backup};
use crate::error::{Error, Result};
use crate::mdp::{max_abs_diff, CoMdp, JointPolicy, NonstationaryPolicy, ValueFunction};

/// Best action of `agent` at `x` with every other component read from
/// `working`. Returns the action id and leaves the evaluation count to the
/// caller (`|U^agent(x)|`).
fn agent_argmin(mdp: &CoMdp, x: usize, agent: usize, working: &JointPolicy, j: &[f64], discount: f64) -> usize {
    let mut base = 0;
    let mut stride = 1;
    for i in 0..mdp.m() {
        let size = mdp.actions(x, i).len();
        let pos = if i == agent {
            stride = 1;
            0
        } else {
            stride *= size;
            mdp.action_position(x, i, working.agents[i][x])
                .unwrap_or_else(|| panic!("agent {i} action {} invalid at state {x}", working.agents[i][x]))
        };
        base = base * size + pos;
    }
    // `stride` now holds the product of the set sizes after `agent`.
    let mut best = f64::INFINITY;
    let mut best_a = usize::MAX;
    for (p, &a) in mdp.actions(x, agent).iter().enumerate() {
        let v = mdp.row(x, base + p * stride).expectation(j, discount);
        if v < best || (v == best && a < best_a) {
            best = v;
            best_a = a;
        }
    }
    best_a
}

fn step_in_place(mdp: &CoMdp, agent: usize, working: &mut JointPolicy, j: &[f64], discount: f64) -> (usize, u64) {
    let mut changed = 0;
    let mut evaluations = 0;
    for x in 0..mdp.n() {
        let a = agent_argmin(mdp, x, agent, working, j, discount);
        evaluations += mdp.actions(x, agent).len() as u64;
        if working.agents[agent][x] != a {
            working.agents[agent][x] = a;
            changed += 1;
        }
    }
    (changed, evaluations)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentStep {
    pub actions: Vec<usize>,
    /// One-step expectations evaluated, `sum_x |U^i(x)|`.
    pub evaluations: u64,
}

/// Improves agent `agent` alone: agents before it use `updated_prefix`,
/// agents after it use `base_suffix`.
pub fn dpi_agent_step(
    mdp: &CoMdp,
    agent: usize,
    updated_prefix: &[Vec<usize>],
    base_suffix: &[Vec<usize>],
    j: &ValueFunction,
    discount: f64,
) -> Result<AgentStep> {
    if agent >= mdp.m() || updated_prefix.len() != agent || base_suffix.len() != mdp.m() - agent - 1 {
        return Err(Error::Dimension(format!(
            "agent {agent} of {} needs {agent} prefix and {} suffix policies, got {} and {}",
            mdp.m(),
            mdp.m().saturating_sub(agent + 1),
            updated_prefix.len(),
            base_suffix.len()
        )));
    }
    if j.len() != mdp.n() {
        return Err(Error::Dimension("value function length differs from state count".into()));
    }
    let placeholder = (0..mdp.n()).map(|x| mdp.actions(x, agent)[0]).collect();
    let mut agents = updated_prefix.to_vec();
    agents.push(placeholder);
    agents.extend_from_slice(base_suffix);
    let mut working = JointPolicy::new(agents);
    mdp.check_policy(&working)?;
    let (_, evaluations) = step_in_place(mdp, agent, &mut working, &j.values, discount);
    Ok(AgentStep { actions: working.agents.swap_remove(agent), evaluations })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub policy: JointPolicy,
    /// `sum_x sum_i |U^i(x)|`.
    pub evaluations: u64,
    /// Changed states per agent, indexed by agent.
    pub changed: Vec<usize>,
}

/// One pass of agent steps in the order `0..m`.
pub fn dpi_sweep(mdp: &CoMdp, base: &JointPolicy, j: &ValueFunction, discount: f64) -> Result<SweepOutcome> {
    let order: Vec<usize> = (0..mdp.m()).collect();
    dpi_sweep_ordered(mdp, base, j, discount, &order)
}

/// One pass of agent steps in the given order (a permutation of `0..m`).
pub fn dpi_sweep_ordered(
    mdp: &CoMdp,
    base: &JointPolicy,
    j: &ValueFunction,
    discount: f64,
    order: &[usize],
) -> Result<SweepOutcome> {
    mdp.check_policy(base)?;
    if j.len() != mdp.n() {
        return Err(Error::Dimension("value function length differs from state count".into()));
    }
    let mut seen = vec![false; mdp.m()];
    if order.len() != mdp.m() || order.iter().any(|&i| i >= mdp.m() || std::mem::replace(&mut seen[i], true)) {
        return Err(Error::Dimension(format!("agent order {order:?} is not a permutation of 0..{}", mdp.m())));
    }
    let mut working = base.clone();
    let mut changed = vec![0; mdp.m()];
    let mut evaluations = 0;
    for &agent in order {
        let (c, e) = step_in_place(mdp, agent, &mut working, &j.values, discount);
        changed[agent] = c;
        evaluations += e;
    }
    Ok(SweepOutcome { policy: working, evaluations, changed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum AgentOrder {
    #[default]
    Fixed,
    /// A fresh random permutation before every sweep.
    Shuffled { seed: u64 },
}

struct OrderSource {
    order: Vec<usize>,
    rng: Option<ChaCha8Rng>,
}

impl OrderSource {
    fn new(m: usize, kind: AgentOrder) -> Self {
        let rng = match kind {
            AgentOrder::Fixed => None,
            AgentOrder::Shuffled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        OrderSource { order: (0..m).collect(), rng }
    }

    fn next(&mut self) -> &[usize] {
        if let Some(rng) = &mut self.rng {
            self.order.shuffle(rng);
        }
        &self.order
    }
}

/// One solver iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpiRecord {
    pub iteration: usize,
    /// Stage index for finite-horizon runs.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stage: Option<usize>,
    /// Policy that was evaluated and then swept.
    pub policy: JointPolicy,
    pub alp_values: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub exact_values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta: Option<f64>,
    pub changed: Vec<usize>,
    pub evaluations: u64,
    pub lp_pivots: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DpiTrace {
    pub records: Vec<DpiRecord>,
}

impl DpiTrace {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(DpiTrace { records })
    }

    pub fn lp_pivots(&self) -> usize {
        self.records.iter().map(|r| r.lp_pivots).sum()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.beta).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    PolicyRepeated,
    ValuesSettled,
    IterationCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IhOptions {
    pub max_iters: usize,
    pub stop_eps: f64,
    /// Exact evaluation of every iterate, enabling `beta` and best-policy
    /// selection.
    pub verify: bool,
    pub order: AgentOrder,
}

impl Default for IhOptions {
    fn default() -> Self {
        IhOptions { max_iters: 100, stop_eps: 1e-9, verify: false, order: AgentOrder::Fixed }
    }
}

#[derive(Debug, Clone)]
pub struct IhOutcome {
    /// Best iterate by mean exact cost in verify mode, the last one otherwise.
    pub policy: JointPolicy,
    pub last_policy: JointPolicy,
    pub trace: DpiTrace,
    pub sweeps: usize,
    pub stop: StopReason,
    /// Exact cost of `policy` (verify mode).
    pub exact: Option<ValueFunction>,
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Alternates approximate evaluation and a DPI sweep until the policy
/// repeats, successive approximate values differ by less than `stop_eps`,
/// or `max_iters` sweeps have run.
pub fn solve_ih_dpi_alp(
    mdp: &CoMdp,
    mu0: &JointPolicy,
    phi: &FeatureMatrix,
    c: &StateWeights,
    opts: &IhOptions,
) -> Result<IhOutcome> {
    let alpha = mdp.discount()?;
    mdp.check_policy(mu0)?;
    if opts.max_iters == 0 {
        return Err(Error::InvalidModel("iteration cap must be at least 1".into()));
    }
    let mut orders = OrderSource::new(mdp.m(), opts.order);
    let mut trace = DpiTrace::default();
    let mut mu = mu0.clone();
    let mut clock = Instant::now();
    let mut alp = alp_evaluate_ih(mdp, &mu, phi, c)?;
    let mut best: Option<(f64, JointPolicy, ValueFunction)> = None;
    let mut consider = |mu: &JointPolicy, exact: &ValueFunction| {
        let score = mean_over(exact, &[]);
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, mu.clone(), exact.clone()));
        }
    };
    let stop = loop {
        let exact = if opts.verify { Some(evaluate_policy_exact_ih(mdp, &mu)?) } else { None };
        let sweep = dpi_sweep_ordered(mdp, &mu, &alp.values, alpha, orders.next())?;
        if let Some(e) = &exact {
            consider(&mu, e);
        }
        trace.records.push(DpiRecord {
            iteration: trace.records.len(),
            stage: None,
            beta: exact.as_ref().map(|e| e.max_abs_diff(&alp.values)),
            exact_values: exact.map(|e| e.values),
            policy: mu.clone(),
            alp_values: alp.values.values.clone(),
            changed: sweep.changed,
            evaluations: sweep.evaluations,
            lp_pivots: alp.pivot_count,
            wall_ms: elapsed_ms(clock),
        });
        clock = Instant::now();
        if sweep.policy == mu {
            break StopReason::PolicyRepeated;
        }
        mu = sweep.policy;
        if trace.records.len() == opts.max_iters {
            break StopReason::IterationCap;
        }
        let next = alp_evaluate_ih(mdp, &mu, phi, c)?;
        let settled = next.values.max_abs_diff(&alp.values) < opts.stop_eps;
        alp = next;
        if settled {
            break StopReason::ValuesSettled;
        }
    };
    let sweeps = trace.records.len();
    let (policy, exact) = if opts.verify {
        if stop != StopReason::PolicyRepeated {
            let e = evaluate_policy_exact_ih(mdp, &mu)?;
            consider(&mu, &e);
        }
        let (_, p, e) = best.expect("verify mode evaluates at least one policy");
        (p, Some(e))
    } else {
        (mu.clone(), None)
    };
    Ok(IhOutcome { policy, last_policy: mu, trace, sweeps, stop, exact })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FhOptions {
    pub max_iters_per_stage: usize,
    pub stop_eps: f64,
    /// Exact stage values of every iterate (later stages already improved).
    pub verify: bool,
    pub order: AgentOrder,
}

impl Default for FhOptions {
    fn default() -> Self {
        FhOptions { max_iters_per_stage: 50, stop_eps: 1e-9, verify: false, order: AgentOrder::Fixed }
    }
}

#[derive(Debug, Clone)]
pub struct FhOutcome {
    pub policy: NonstationaryPolicy,
    /// Approximate stage values `V_0, ..., V_N` with `V_N = g_N`.
    pub alp_values: Vec<ValueFunction>,
    pub trace: DpiTrace,
    /// Inner iterations (sweeps) per stage, indexed by stage.
    pub iterations_per_stage: Vec<usize>,
}

/// Backward stage loop: at stage `k` the stage policy is swept against the
/// approximate stage-`k+1` values (discount 1) and re-evaluated until no
/// state's approximate cost drops by more than `stop_eps`, the stage policy
/// repeats, or the per-stage cap is hit.
pub fn solve_fh_dpi_alp(
    mdp: &CoMdp,
    pi0: &NonstationaryPolicy,
    phi: &FeatureMatrix,
    c: &StateWeights,
    opts: &FhOptions,
) -> Result<FhOutcome> {
    let (stages, terminal) = mdp.finite()?;
    if pi0.horizon() != stages {
        return Err(Error::Dimension(format!("policy has {} stages, horizon is {stages}", pi0.horizon())));
    }
    if opts.max_iters_per_stage == 0 {
        return Err(Error::InvalidModel("iteration cap must be at least 1".into()));
    }
    let mut orders = OrderSource::new(mdp.m(), opts.order);
    let mut trace = DpiTrace::default();
    let mut policies = pi0.stages.clone();
    let mut alp_values = vec![ValueFunction::exact(terminal.to_vec()); stages + 1];
    let mut exact_next = terminal.to_vec();
    let mut iterations_per_stage = vec![0; stages];
    for k in (0..stages).rev() {
        let j_next = alp_values[k + 1].clone();
        let mut mu = policies[k].clone();
        let mut clock = Instant::now();
        let mut cur: AlpResult = alp_evaluate_fh_stage(mdp, k, &mu, &j_next, phi, c)?;
        loop {
            let sweep = dpi_sweep_ordered(mdp, &mu, &j_next, 1.0, orders.next())?;
            iterations_per_stage[k] += 1;
            let exact = opts.verify.then(|| policy_backup(mdp, &mu, &exact_next, 1.0));
            let repeated = sweep.policy == mu;
            trace.records.push(DpiRecord {
                iteration: iterations_per_stage[k] - 1,
                stage: Some(k),
                policy: mu.clone(),
                alp_values: cur.values.values.clone(),
                beta: exact.as_ref().map(|e| max_abs_diff(e, &cur.values.values)),
                exact_values: exact,
                changed: sweep.changed,
                evaluations: sweep.evaluations,
                lp_pivots: cur.pivot_count,
                wall_ms: elapsed_ms(clock),
            });
            clock = Instant::now();
            if repeated {
                break;
            }
            mu = sweep.policy;
            let next = alp_evaluate_fh_stage(mdp, k, &mu, &j_next, phi, c)?;
            let improved = next
                .values
                .values
                .iter()
                .zip(&cur.values.values)
                .any(|(new, old)| *new < old - opts.stop_eps);
            cur = next;
            if !improved || iterations_per_stage[k] == opts.max_iters_per_stage {
                if opts.verify {
                    // the accepted policy gets its own record so that the
                    // trace ends on the stage policy actually returned
                    let e = policy_backup(mdp, &mu, &exact_next, 1.0);
                    trace.records.push(DpiRecord {
                        iteration: iterations_per_stage[k],
                        stage: Some(k),
                        policy: mu.clone(),
                        alp_values: cur.values.values.clone(),
                        beta: Some(max_abs_diff(&e, &cur.values.values)),
                        exact_values: Some(e),
                        changed: vec![0; mdp.m()],
                        evaluations: 0,
                        lp_pivots: cur.pivot_count,
                        wall_ms: elapsed_ms(clock),
                    });
                }
                break;
            }
        }
        if opts.verify {
            exact_next = policy_backup(mdp, &mu, &exact_next, 1.0);
        }
        policies[k] = mu;
        alp_values[k] = cur.values;
    }
    Ok(FhOutcome {
        policy: NonstationaryPolicy::new(policies),
        alp_values,
        trace,
        iterations_per_stage,
    })
}

/// Exact costs `J_{0..N}` of an FH outcome, convenience for reporting.
pub fn exact_fh_costs(mdp: &CoMdp, outcome: &FhOutcome) -> Result<Vec<ValueFunction>> {
    evaluate_policy_exact_fh(mdp, &outcome.policy)
}
