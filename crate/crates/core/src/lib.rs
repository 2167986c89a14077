//! Cooperative multi-agent MDP solvers: exact dynamic programming,
//! approximate evaluation by linear programming, and agent-by-agent policy
//! improvement.

pub mod alp;
pub mod bounds;
pub mod dp;
pub mod dpi;
pub mod envs;
pub mod error;
pub mod io;
pub mod lp;
pub mod mdp;

pub use alp::{
    alp_evaluate_fh_stage, alp_evaluate_ih, beta, build_features, AlpResult, BasisKind, FeatureMatrix, StateWeights,
};
pub use bounds::{fh_rollout_pass, run_suite, verify_fh_bound, verify_ih_bound, BoundReport, Suite, SuiteReport};
pub use dp::{
    apply_policy_operator, bellman_backup, evaluate_policy_exact_fh, evaluate_policy_exact_ih, finite_horizon_dp,
    greedy_joint_policy, greedy_joint_policy_counted, policy_iteration_joint, value_iteration,
};
pub use dpi::{
    dpi_agent_step, dpi_sweep, dpi_sweep_ordered, solve_fh_dpi_alp, solve_ih_dpi_alp, AgentOrder, DpiRecord, DpiTrace,
    FhOptions, IhOptions, StopReason,
};
pub use error::{Error, Result};
pub use lp::{solve_lp, LpProblem, LpSolution, LpStatus};
pub use mdp::{
    CoMdp, CoMdpBuilder, GridLayout, Horizon, JointAction, JointPolicy, NonstationaryPolicy, ValueFunction, ValueKind,
    Violation,
};
