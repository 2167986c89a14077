//! Method dispatch shared by `solve` and `bench`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Result};
use comdp_core::dp::mean_over;
use comdp_core::{
    build_features, evaluate_policy_exact_fh, evaluate_policy_exact_ih, finite_horizon_dp, policy_iteration_joint,
    solve_fh_dpi_alp, solve_ih_dpi_alp, value_iteration, AgentOrder, BasisKind, CoMdp, DpiTrace, FeatureMatrix,
    FhOptions, Horizon, IhOptions, JointPolicy, NonstationaryPolicy, StateWeights, ValueFunction,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DpiAlp,
    PiJoint,
    Vi,
    DpFh,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::DpiAlp => "dpi-alp",
            Method::PiJoint => "pi-joint",
            Method::Vi => "vi",
            Method::DpFh => "dp-fh",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dpi-alp" => Ok(Method::DpiAlp),
            "pi-joint" => Ok(Method::PiJoint),
            "vi" => Ok(Method::Vi),
            "dp-fh" => Ok(Method::DpFh),
            _ => Err(format!("unknown method {s:?}; expected dpi-alp, pi-joint, vi or dp-fh")),
        }
    }
}

impl Method {
    /// Whether the method runs on the given horizon type.
    pub fn supports(self, horizon: &Horizon) -> bool {
        matches!(
            (self, horizon),
            (Method::DpiAlp, _)
                | (Method::PiJoint | Method::Vi, Horizon::Infinite { .. })
                | (Method::DpFh, Horizon::Finite { .. })
        )
    }

    /// Exact baseline for speedup columns.
    pub fn baseline_for(horizon: &Horizon) -> Method {
        match horizon {
            Horizon::Infinite { .. } => Method::PiJoint,
            Horizon::Finite { .. } => Method::DpFh,
        }
    }
}

/// Basis used when none is given: grid-distance on grid models, identity
/// otherwise.
pub fn default_basis(mdp: &CoMdp) -> BasisKind {
    if mdp.layout().is_some() {
        BasisKind::GridDistance
    } else {
        BasisKind::Identity
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub method: Method,
    pub basis: BasisKind,
    pub weights: Option<StateWeights>,
    pub verify: bool,
    pub max_iters: usize,
    pub stop_eps: f64,
    pub vi_tol: f64,
    pub order: AgentOrder,
}

impl RunConfig {
    pub fn new(method: Method, basis: BasisKind) -> Self {
        RunConfig {
            method,
            basis,
            weights: None,
            verify: false,
            max_iters: 0,
            stop_eps: 1e-9,
            vi_tol: 1e-10,
            order: AgentOrder::Fixed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PolicyOut {
    Stationary { policy: JointPolicy },
    Nonstationary { policy: NonstationaryPolicy },
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub method: Method,
    pub basis: Option<String>,
    pub n: usize,
    pub d: usize,
    pub dim_reduction_factor: f64,
    /// Outer iterations (DPI records, PI improvements, VI sweeps, FH stages).
    pub iterations: usize,
    /// Improvement sweeps actually performed.
    pub sweeps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations_per_stage: Option<Vec<usize>>,
    pub wall_ms: f64,
    pub lp_pivots: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_cost_at_start_states: Option<CostSummary>,
    pub beta_per_iter: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CostSummary {
    pub mean: f64,
    pub max: f64,
}

pub struct RunOutput {
    pub summary: Summary,
    pub policy: PolicyOut,
    pub trace: Option<DpiTrace>,
}

fn cost_summary(mdp: &CoMdp, j: &ValueFunction) -> CostSummary {
    let starts = mdp.start_states();
    CostSummary {
        mean: mean_over(j, &starts),
        max: starts.iter().map(|&x| j[x]).fold(f64::NEG_INFINITY, f64::max),
    }
}

fn features(mdp: &CoMdp, cfg: &RunConfig) -> Result<(FeatureMatrix, StateWeights)> {
    let phi = build_features(cfg.basis, mdp)?;
    let c = cfg.weights.clone().unwrap_or_else(|| StateWeights::uniform(mdp.n()));
    Ok((phi, c))
}

/// Runs one method. Only the solver call is timed.
pub fn run(mdp: &CoMdp, cfg: &RunConfig) -> Result<RunOutput> {
    if !cfg.method.supports(mdp.horizon()) {
        bail!("method {} does not apply to this model's horizon", cfg.method);
    }
    let n = mdp.n();
    let finite = matches!(mdp.horizon(), Horizon::Finite { .. });
    let mut summary = Summary {
        method: cfg.method,
        basis: None,
        n,
        d: n,
        dim_reduction_factor: 1.0,
        iterations: 0,
        sweeps: 0,
        iterations_per_stage: None,
        wall_ms: 0.0,
        lp_pivots: 0,
        exact_cost_at_start_states: None,
        beta_per_iter: Vec::new(),
        stop: None,
    };
    let ms = |t: Instant| t.elapsed().as_secs_f64() * 1e3;
    match (cfg.method, finite) {
        (Method::DpiAlp, false) => {
            let (phi, c) = features(mdp, cfg)?;
            let opts = IhOptions {
                max_iters: if cfg.max_iters == 0 { IhOptions::default().max_iters } else { cfg.max_iters },
                stop_eps: cfg.stop_eps,
                verify: cfg.verify,
                order: cfg.order,
            };
            let mu0 = JointPolicy::first_actions(mdp);
            let t = Instant::now();
            let out = solve_ih_dpi_alp(mdp, &mu0, &phi, &c, &opts)?;
            summary.wall_ms = ms(t);
            summary.basis = Some(cfg.basis.to_string());
            summary.d = phi.d();
            summary.dim_reduction_factor = phi.reduction_factor();
            summary.iterations = out.trace.records.len();
            summary.sweeps = out.sweeps;
            summary.lp_pivots = out.trace.lp_pivots();
            summary.beta_per_iter = out.trace.betas();
            summary.stop = Some(serde_json::to_value(out.stop)?.as_str().unwrap_or_default().to_string());
            summary.exact_cost_at_start_states = out.exact.as_ref().map(|e| cost_summary(mdp, e));
            Ok(RunOutput { summary, policy: PolicyOut::Stationary { policy: out.policy }, trace: Some(out.trace) })
        }
        (Method::DpiAlp, true) => {
            let (phi, c) = features(mdp, cfg)?;
            let opts = FhOptions {
                max_iters_per_stage: if cfg.max_iters == 0 { FhOptions::default().max_iters_per_stage } else { cfg.max_iters },
                stop_eps: cfg.stop_eps,
                verify: cfg.verify,
                order: cfg.order,
            };
            let (stages, _) = mdp.finite()?;
            let pi0 = NonstationaryPolicy::new(vec![JointPolicy::first_actions(mdp); stages]);
            let t = Instant::now();
            let out = solve_fh_dpi_alp(mdp, &pi0, &phi, &c, &opts)?;
            summary.wall_ms = ms(t);
            summary.basis = Some(cfg.basis.to_string());
            summary.d = phi.d();
            summary.dim_reduction_factor = phi.reduction_factor();
            summary.iterations = stages;
            summary.sweeps = out.iterations_per_stage.iter().sum();
            summary.iterations_per_stage = Some(out.iterations_per_stage.clone());
            summary.lp_pivots = out.trace.lp_pivots();
            summary.beta_per_iter = out.trace.betas();
            if cfg.verify {
                let exact = evaluate_policy_exact_fh(mdp, &out.policy)?;
                summary.exact_cost_at_start_states = Some(cost_summary(mdp, &exact[0]));
            }
            Ok(RunOutput { summary, policy: PolicyOut::Nonstationary { policy: out.policy }, trace: Some(out.trace) })
        }
        (Method::PiJoint, _) => {
            let mu0 = JointPolicy::first_actions(mdp);
            let t = Instant::now();
            let out = policy_iteration_joint(mdp, &mu0)?;
            summary.wall_ms = ms(t);
            summary.iterations = out.iterations;
            summary.sweeps = out.iterations;
            if cfg.verify {
                summary.exact_cost_at_start_states = Some(cost_summary(mdp, &out.values));
            }
            Ok(RunOutput { summary, policy: PolicyOut::Stationary { policy: out.policy }, trace: None })
        }
        (Method::Vi, _) => {
            let t = Instant::now();
            let out = value_iteration(mdp, cfg.vi_tol)?;
            summary.wall_ms = ms(t);
            summary.iterations = out.iterations;
            summary.sweeps = out.iterations;
            if cfg.verify {
                let exact = evaluate_policy_exact_ih(mdp, &out.policy)?;
                summary.exact_cost_at_start_states = Some(cost_summary(mdp, &exact));
            }
            Ok(RunOutput { summary, policy: PolicyOut::Stationary { policy: out.policy }, trace: None })
        }
        (Method::DpFh, _) => {
            let t = Instant::now();
            let out = finite_horizon_dp(mdp)?;
            summary.wall_ms = ms(t);
            let stages = out.policy.horizon();
            summary.iterations = stages;
            summary.sweeps = stages;
            summary.iterations_per_stage = Some(vec![1; stages]);
            if cfg.verify {
                summary.exact_cost_at_start_states = Some(cost_summary(mdp, &out.values[0]));
            }
            Ok(RunOutput { summary, policy: PolicyOut::Nonstationary { policy: out.policy }, trace: None })
        }
    }
}
