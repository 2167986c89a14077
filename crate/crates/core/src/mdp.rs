//! Cooperative multi-agent MDP model.
//!
//! A [`CoMdp`] stores, for every state `x` and every joint action
//! `u = (u^1, ..., u^m)` in the Cartesian product of the per-agent action
//! sets, a transition row `y -> (p_xy(u), g_xy(u))`. Joint actions at a state
//! are laid out in lexicographic order of the per-agent positions, agent 0
//! being the most significant digit.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows whose non-zero count is at most this fraction of `n` are stored sparse.
const SPARSE_FRACTION: f64 = 0.1;

/// Tolerance for row-stochasticity checks.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Horizon {
    Finite {
        #[serde(rename = "N")]
        stages: usize,
        terminal: Vec<f64>,
    },
    Infinite {
        alpha: f64,
    },
}

/// Grid geometry attached to generated spiders-and-flies models. Needed by
/// basis constructions that look at cell coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub h: usize,
    pub flies: [usize; 2],
}

impl GridLayout {
    /// Both fly cells covered, in either assignment.
    pub fn is_goal(&self, x: usize) -> bool {
        let cells = self.h * self.h;
        let (s1, s2) = (x / cells, x % cells);
        let [a, b] = self.flies;
        (s1 == a && s2 == b) || (s1 == b && s2 == a)
    }

    /// Non-goal states.
    pub fn start_states(&self) -> Vec<usize> {
        (0..self.h.pow(4)).filter(|&x| !self.is_goal(x)).collect()
    }
}

/// One transition row `y -> (p, g)` for a fixed `(x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub enum TransitionRow {
    Dense { p: Vec<f64>, g: Vec<f64> },
    Sparse { y: Vec<usize>, p: Vec<f64>, g: Vec<f64> },
}

impl TransitionRow {
    /// Builds a row from `(y, p, g)` entries, picking the dense or sparse
    /// layout from the entry count. Entries with `p == 0 && g == 0` are
    /// dropped; duplicated successors are summed in probability and keep the
    /// last cost.
    pub fn from_entries(n: usize, entries: &[(usize, f64, f64)]) -> Self {
        let mut merged: Vec<(usize, f64, f64)> = Vec::with_capacity(entries.len());
        let mut sorted = entries.to_vec();
        sorted.sort_by_key(|e| e.0);
        for (y, p, g) in sorted {
            if p == 0.0 && g == 0.0 {
                continue;
            }
            match merged.last_mut() {
                Some(last) if last.0 == y => {
                    last.1 += p;
                    last.2 = g;
                }
                _ => merged.push((y, p, g)),
            }
        }
        if (merged.len() as f64) <= SPARSE_FRACTION * n as f64 {
            TransitionRow::Sparse {
                y: merged.iter().map(|e| e.0).collect(),
                p: merged.iter().map(|e| e.1).collect(),
                g: merged.iter().map(|e| e.2).collect(),
            }
        } else {
            let mut p = vec![0.0; n];
            let mut g = vec![0.0; n];
            for &(y, py, gy) in &merged {
                p[y] = py;
                g[y] = gy;
            }
            TransitionRow::Dense { p, g }
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, TransitionRow::Sparse { .. })
    }

    /// Iterates the stored `(y, p, g)` entries, skipping all-zero dense slots.
    pub fn entries(&self) -> Box<dyn Iterator<Item = (usize, f64, f64)> + '_> {
        match self {
            TransitionRow::Dense { p, g } => Box::new(
                p.iter()
                    .zip(g)
                    .enumerate()
                    .filter(|(_, (&p, &g))| p != 0.0 || g != 0.0)
                    .map(|(y, (&p, &g))| (y, p, g)),
            ),
            TransitionRow::Sparse { y, p, g } => Box::new(
                y.iter()
                    .zip(p.iter().zip(g))
                    .map(|(&y, (&p, &g))| (y, p, g)),
            ),
        }
    }

    /// `sum_y p_y (g_y + discount * J(y))`.
    #[inline]
    pub fn expectation(&self, j: &[f64], discount: f64) -> f64 {
        match self {
            TransitionRow::Dense { p, g } => p
                .iter()
                .zip(g)
                .zip(j)
                .map(|((&p, &g), &jy)| p * (g + discount * jy))
                .sum(),
            TransitionRow::Sparse { y, p, g } => y
                .iter()
                .zip(p.iter().zip(g))
                .map(|(&y, (&p, &g))| p * (g + discount * j[y]))
                .sum(),
        }
    }

    /// Expected one-step cost `sum_y p_y g_y`.
    pub fn expected_cost(&self) -> f64 {
        match self {
            TransitionRow::Dense { p, g } => p.iter().zip(g).map(|(p, g)| p * g).sum(),
            TransitionRow::Sparse { p, g, .. } => p.iter().zip(g).map(|(p, g)| p * g).sum(),
        }
    }

    pub fn probability_sum(&self) -> f64 {
        match self {
            TransitionRow::Dense { p, .. } | TransitionRow::Sparse { p, .. } => p.iter().sum(),
        }
    }

    /// Probability of moving to `y`.
    pub fn prob(&self, target: usize) -> f64 {
        match self {
            TransitionRow::Dense { p, .. } => p.get(target).copied().unwrap_or(0.0),
            TransitionRow::Sparse { y, p, .. } => {
                y.binary_search(&target).map(|k| p[k]).unwrap_or(0.0)
            }
        }
    }

    /// Cost attached to the transition to `y`.
    pub fn cost(&self, target: usize) -> f64 {
        match self {
            TransitionRow::Dense { g, .. } => g.get(target).copied().unwrap_or(0.0),
            TransitionRow::Sparse { y, g, .. } => {
                y.binary_search(&target).map(|k| g[k]).unwrap_or(0.0)
            }
        }
    }
}

/// A tuple of per-agent action ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JointAction(pub Vec<usize>);

impl fmt::Display for JointAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, a) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// Deterministic stationary joint policy: `agents[i][x]` is the action id of
/// agent `i` in state `x`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointPolicy {
    pub agents: Vec<Vec<usize>>,
}

impl JointPolicy {
    pub fn new(agents: Vec<Vec<usize>>) -> Self {
        JointPolicy { agents }
    }

    /// Every agent plays the first action of its set in every state.
    pub fn first_actions(mdp: &CoMdp) -> Self {
        let agents = (0..mdp.m())
            .map(|i| (0..mdp.n()).map(|x| mdp.actions(x, i)[0]).collect())
            .collect();
        JointPolicy { agents }
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn action_at(&self, x: usize) -> JointAction {
        JointAction(self.agents.iter().map(|a| a[x]).collect())
    }

    /// Number of states where agent `i` differs between the two policies.
    pub fn changed_states(&self, other: &JointPolicy, agent: usize) -> usize {
        self.agents[agent]
            .iter()
            .zip(&other.agents[agent])
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// Per-stage policy `(mu_0, ..., mu_{N-1})` for finite-horizon models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NonstationaryPolicy {
    pub stages: Vec<JointPolicy>,
}

impl NonstationaryPolicy {
    pub fn new(stages: Vec<JointPolicy>) -> Self {
        NonstationaryPolicy { stages }
    }

    pub fn horizon(&self) -> usize {
        self.stages.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Exact,
    Alp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
    pub kind: ValueKind,
}

impl ValueFunction {
    pub fn exact(values: Vec<f64>) -> Self {
        ValueFunction { values, kind: ValueKind::Exact }
    }

    pub fn alp(values: Vec<f64>) -> Self {
        ValueFunction { values, kind: ValueKind::Alp }
    }

    pub fn zeros(n: usize) -> Self {
        Self::exact(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// `max_x |self(x) - other(x)|`.
    pub fn max_abs_diff(&self, other: &ValueFunction) -> f64 {
        max_abs_diff(&self.values, &other.values)
    }
}

impl std::ops::Index<usize> for ValueFunction {
    type Output = f64;
    fn index(&self, x: usize) -> &f64 {
        &self.values[x]
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// A single invariant violation found by [`CoMdp::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyActionSet { x: usize, agent: usize },
    NegativeProbability { x: usize, u: JointAction, y: usize, p: f64 },
    RowSum { x: usize, u: JointAction, sum: f64 },
    NonFinite { x: usize, u: JointAction, y: usize },
    BadDiscount { alpha: f64 },
    BadHorizon { stages: usize },
    TerminalLength { expected: usize, found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyActionSet { x, agent } => {
                write!(f, "state {x}: agent {agent} has an empty action set")
            }
            Violation::NegativeProbability { x, u, y, p } => {
                write!(f, "row (x={x}, u={u}): p[{y}] = {p} is negative")
            }
            Violation::RowSum { x, u, sum } => {
                write!(f, "row (x={x}, u={u}) sums to {sum}")
            }
            Violation::NonFinite { x, u, y } => {
                write!(f, "row (x={x}, u={u}): entry for y={y} is not finite")
            }
            Violation::BadDiscount { alpha } => {
                write!(f, "discount alpha = {alpha} is outside (0, 1)")
            }
            Violation::BadHorizon { stages } => write!(f, "horizon N = {stages} must be >= 1"),
            Violation::TerminalLength { expected, found } => {
                write!(f, "terminal cost has length {found}, expected {expected}")
            }
        }
    }
}

/// Cooperative multi-agent MDP with a Cartesian-product action space.
#[derive(Debug, Clone, PartialEq)]
pub struct CoMdp {
    n: usize,
    m: usize,
    agent_actions: Vec<Vec<Vec<usize>>>,
    /// `row_start[x]..row_start[x + 1]` indexes the joint actions of `x`.
    row_start: Vec<usize>,
    rows: Vec<TransitionRow>,
    horizon: Horizon,
    layout: Option<GridLayout>,
}

impl CoMdp {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> &Horizon {
        &self.horizon
    }

    pub fn layout(&self) -> Option<&GridLayout> {
        self.layout.as_ref()
    }

    /// States used for cost reporting: non-goal states on grid models, all
    /// states otherwise.
    pub fn start_states(&self) -> Vec<usize> {
        match &self.layout {
            Some(l) if l.h.pow(4) == self.n => l.start_states(),
            _ => (0..self.n).collect(),
        }
    }

    pub fn with_layout(mut self, layout: GridLayout) -> Self {
        self.layout = Some(layout);
        self
    }

    /// Discount factor of an infinite-horizon model.
    pub fn discount(&self) -> Result<f64> {
        match self.horizon {
            Horizon::Infinite { alpha } => Ok(alpha),
            Horizon::Finite { .. } => Err(Error::HorizonMismatch {
                expected: "infinite",
                found: "finite",
            }),
        }
    }

    /// `(N, g_N)` of a finite-horizon model.
    pub fn finite(&self) -> Result<(usize, &[f64])> {
        match &self.horizon {
            Horizon::Finite { stages, terminal } => Ok((*stages, terminal)),
            Horizon::Infinite { .. } => Err(Error::HorizonMismatch {
                expected: "finite",
                found: "infinite",
            }),
        }
    }

    /// Ordered action ids of agent `i` at state `x`.
    pub fn actions(&self, x: usize, agent: usize) -> &[usize] {
        &self.agent_actions[x][agent]
    }

    pub fn agent_actions(&self) -> &[Vec<Vec<usize>>] {
        &self.agent_actions
    }

    pub fn num_joint_actions(&self, x: usize) -> usize {
        self.row_start[x + 1] - self.row_start[x]
    }

    pub fn total_joint_actions(&self) -> usize {
        self.rows.len()
    }

    /// Joint actions of `x` in lexicographic order.
    pub fn joint_actions(&self, x: usize) -> Vec<JointAction> {
        (0..self.num_joint_actions(x))
            .map(|k| self.joint_action(x, k))
            .collect()
    }

    /// Decodes the `k`-th joint action of state `x`.
    pub fn joint_action(&self, x: usize, mut k: usize) -> JointAction {
        let sets = &self.agent_actions[x];
        let mut ids = vec![0; self.m];
        for i in (0..self.m).rev() {
            let size = sets[i].len();
            ids[i] = sets[i][k % size];
            k /= size;
        }
        JointAction(ids)
    }

    /// Position of action id `a` in `U^i(x)`.
    #[inline]
    pub fn action_position(&self, x: usize, agent: usize, a: usize) -> Option<usize> {
        self.agent_actions[x][agent].iter().position(|&b| b == a)
    }

    /// Local (per-state) index of the joint action with the given ids.
    pub fn joint_index<I>(&self, x: usize, ids: I) -> Option<usize>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut k = 0;
        let mut count = 0;
        for (i, a) in ids.into_iter().enumerate() {
            if i >= self.m {
                return None;
            }
            let pos = self.action_position(x, i, a)?;
            k = k * self.agent_actions[x][i].len() + pos;
            count += 1;
        }
        (count == self.m).then_some(k)
    }

    pub fn row(&self, x: usize, k: usize) -> &TransitionRow {
        &self.rows[self.row_start[x] + k]
    }

    /// Row used by `policy` at `x`.
    pub fn policy_row(&self, x: usize, policy: &JointPolicy) -> &TransitionRow {
        let k = self
            .joint_index(x, policy.agents.iter().map(|a| a[x]))
            .unwrap_or_else(|| panic!("policy action {} invalid at state {x}", policy.action_at(x)));
        self.row(x, k)
    }

    /// `sum_y p_xy(u) [g_xy(u) + discount J(y)]`.
    pub fn expected_stage_value(
        &self,
        x: usize,
        u: &JointAction,
        j: &ValueFunction,
        discount: f64,
    ) -> Result<f64> {
        let k = self
            .joint_index(x, u.0.iter().copied())
            .ok_or_else(|| Error::InvalidAction { x, action: u.to_string() })?;
        Ok(self.row(x, k).expectation(&j.values, discount))
    }

    /// Expected one-step cost `g_mu(x)` under `policy`.
    pub fn expected_cost(&self, x: usize, policy: &JointPolicy) -> f64 {
        self.policy_row(x, policy).expected_cost()
    }

    /// Checks that every action id used by `policy` is admissible.
    pub fn check_policy(&self, policy: &JointPolicy) -> Result<()> {
        if policy.agents.len() != self.m {
            return Err(Error::Dimension(format!(
                "policy has {} agents, model has {}",
                policy.agents.len(),
                self.m
            )));
        }
        for (i, agent) in policy.agents.iter().enumerate() {
            if agent.len() != self.n {
                return Err(Error::Dimension(format!(
                    "policy of agent {i} covers {} states, model has {}",
                    agent.len(),
                    self.n
                )));
            }
            for (x, &a) in agent.iter().enumerate() {
                if self.action_position(x, i, a).is_none() {
                    return Err(Error::InvalidAction { x, action: format!("agent {i}: {a}") });
                }
            }
        }
        Ok(())
    }

    /// Lists every violated model invariant; empty iff the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for x in 0..self.n {
            for (agent, set) in self.agent_actions[x].iter().enumerate() {
                if set.is_empty() {
                    out.push(Violation::EmptyActionSet { x, agent });
                }
            }
            for k in 0..self.num_joint_actions(x) {
                let row = self.row(x, k);
                let u = || self.joint_action(x, k);
                for (y, p, g) in row.entries() {
                    if !p.is_finite() || !g.is_finite() {
                        out.push(Violation::NonFinite { x, u: u(), y });
                    } else if p < 0.0 {
                        out.push(Violation::NegativeProbability { x, u: u(), y, p });
                    }
                }
                let sum = row.probability_sum();
                if !sum.is_finite() || (sum - 1.0).abs() > STOCHASTIC_TOL {
                    out.push(Violation::RowSum { x, u: u(), sum });
                }
            }
        }
        match &self.horizon {
            Horizon::Infinite { alpha } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    out.push(Violation::BadDiscount { alpha: *alpha });
                }
            }
            Horizon::Finite { stages, terminal } => {
                if *stages == 0 {
                    out.push(Violation::BadHorizon { stages: *stages });
                }
                if terminal.len() != self.n {
                    out.push(Violation::TerminalLength { expected: self.n, found: terminal.len() });
                }
            }
        }
        out
    }

    /// Fails with the first violation, if any.
    pub fn ensure_valid(&self) -> Result<()> {
        match self.validate().into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::InvalidModel(v.to_string())),
        }
    }
}

/// Incremental constructor for [`CoMdp`]. Rows that are never set stay
/// empty (and are then reported by `validate`).
#[derive(Debug, Clone)]
pub struct CoMdpBuilder {
    n: usize,
    m: usize,
    agent_actions: Vec<Vec<Vec<usize>>>,
    row_start: Vec<usize>,
    rows: Vec<Option<TransitionRow>>,
    horizon: Horizon,
}

impl CoMdpBuilder {
    /// `agent_actions[x][i]` is the ordered action-id list of agent `i` at `x`.
    pub fn new(agent_actions: Vec<Vec<Vec<usize>>>, horizon: Horizon) -> Result<Self> {
        let n = agent_actions.len();
        if n == 0 {
            return Err(Error::Dimension("model needs at least one state".into()));
        }
        let m = agent_actions[0].len();
        if m == 0 {
            return Err(Error::Dimension("model needs at least one agent".into()));
        }
        let mut row_start = Vec::with_capacity(n + 1);
        row_start.push(0);
        for (x, sets) in agent_actions.iter().enumerate() {
            if sets.len() != m {
                return Err(Error::Dimension(format!(
                    "state {x} lists {} agents, expected {m}",
                    sets.len()
                )));
            }
            for (i, set) in sets.iter().enumerate() {
                let mut sorted = set.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != set.len() {
                    return Err(Error::Dimension(format!(
                        "state {x}, agent {i}: duplicated action ids"
                    )));
                }
            }
            let count: usize = sets.iter().map(|s| s.len()).product();
            row_start.push(row_start[x] + count);
        }
        let total = row_start[n];
        Ok(CoMdpBuilder {
            n,
            m,
            agent_actions,
            row_start,
            rows: vec![None; total],
            horizon,
        })
    }

    /// Same action set for every agent in every state.
    pub fn uniform(n: usize, m: usize, actions: usize, horizon: Horizon) -> Result<Self> {
        let set: Vec<usize> = (0..actions).collect();
        Self::new(vec![vec![set; m]; n], horizon)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_joint_actions(&self, x: usize) -> usize {
        self.row_start[x + 1] - self.row_start[x]
    }

    /// Sets the row of the `k`-th joint action (lexicographic order) of `x`.
    pub fn set_row_index(&mut self, x: usize, k: usize, entries: &[(usize, f64, f64)]) -> Result<()> {
        if x >= self.n || k >= self.num_joint_actions(x) {
            return Err(Error::Dimension(format!("no joint action {k} at state {x}")));
        }
        if let Some(&(y, _, _)) = entries.iter().find(|e| e.0 >= self.n) {
            return Err(Error::Dimension(format!("successor {y} out of range at state {x}")));
        }
        self.rows[self.row_start[x] + k] = Some(TransitionRow::from_entries(self.n, entries));
        Ok(())
    }

    /// Sets the row of the joint action with the given ids.
    pub fn set_row(&mut self, x: usize, u: &[usize], entries: &[(usize, f64, f64)]) -> Result<()> {
        if x >= self.n || u.len() != self.m {
            return Err(Error::InvalidAction { x, action: JointAction(u.to_vec()).to_string() });
        }
        let mut k = 0;
        for (i, &a) in u.iter().enumerate() {
            let set = &self.agent_actions[x][i];
            let pos = set.iter().position(|&b| b == a).ok_or_else(|| Error::InvalidAction {
                x,
                action: JointAction(u.to_vec()).to_string(),
            })?;
            k = k * set.len() + pos;
        }
        self.set_row_index(x, k, entries)
    }

    pub fn is_set(&self, x: usize, k: usize) -> bool {
        self.rows[self.row_start[x] + k].is_some()
    }

    pub fn build(self) -> CoMdp {
        let n = self.n;
        CoMdp {
            n,
            m: self.m,
            agent_actions: self.agent_actions,
            row_start: self.row_start,
            rows: self
                .rows
                .into_iter()
                .map(|r| r.unwrap_or_else(|| TransitionRow::from_entries(n, &[])))
                .collect(),
            horizon: self.horizon,
            layout: None,
        }
    }
}
