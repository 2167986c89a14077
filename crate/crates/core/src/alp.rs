//! Policy evaluation by approximate linear programming.
//!
//! Values are restricted to the span of a feature matrix `Φ` (`n x d`) and
//! the LP pushes `c·Φr` up against the policy's Bellman constraints, so the
//! result is a pointwise lower approximation of the true policy cost.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpProblem, LpStatus};
use crate::mdp::{max_abs_diff, CoMdp, JointPolicy, ValueFunction};

const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasisKind {
    Identity,
    /// Constant column plus indicators of `cells - 1` contiguous index blocks.
    Aggregation { cells: usize },
    /// Constant, spider-to-nearest-fly distances, collision indicator.
    GridDistance,
    /// Monomials of normalized state coordinates up to `degree`, plus constant.
    Polynomial { degree: usize },
    /// Constant plus `d - 1` Gaussian columns.
    RandomProjection { d: usize, seed: u64 },
    /// Caller-supplied columns.
    Custom,
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisKind::Identity => write!(f, "identity"),
            BasisKind::Aggregation { cells } => write!(f, "aggregation:{cells}"),
            BasisKind::GridDistance => write!(f, "grid-distance"),
            BasisKind::Polynomial { degree } => write!(f, "poly:{degree}"),
            BasisKind::RandomProjection { d, seed } => write!(f, "random:{d}:{seed}"),
            BasisKind::Custom => write!(f, "custom"),
        }
    }
}

impl FromStr for BasisKind {
    type Err = Error;

    /// `identity`, `aggregation:k`, `grid-distance`, `poly:degree`, `random:d:seed`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| {
            t.parse::<u64>()
                .map_err(|_| Error::Basis(format!("bad number {t:?} in basis {s:?}")))
        };
        match parts.as_slice() {
            ["identity"] => Ok(BasisKind::Identity),
            ["grid-distance"] => Ok(BasisKind::GridDistance),
            ["aggregation", k] => Ok(BasisKind::Aggregation { cells: num(k)? as usize }),
            ["poly", deg] => Ok(BasisKind::Polynomial { degree: num(deg)? as usize }),
            ["random", d, seed] => Ok(BasisKind::RandomProjection { d: num(d)? as usize, seed: num(seed)? }),
            _ => Err(Error::Basis(format!("unknown basis {s:?}"))),
        }
    }
}

/// Row-major `n x d` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    phi: Vec<f64>,
    kind: BasisKind,
}

impl FeatureMatrix {
    /// Checks the basis invariants: `d <= n`, a leading all-ones column
    /// (identity excepted) and full column rank.
    pub fn from_columns(n: usize, columns: Vec<Vec<f64>>, kind: BasisKind) -> Result<Self> {
        let d = columns.len();
        if d == 0 || d > n {
            return Err(Error::Basis(format!("need 1 <= d <= n, got d = {d}, n = {n}")));
        }
        if let Some(c) = columns.iter().position(|c| c.len() != n) {
            return Err(Error::Basis(format!("column {c} has {} entries, expected {n}", columns[c].len())));
        }
        if !columns.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::Basis("non-finite feature value".into()));
        }
        if kind != BasisKind::Identity && columns[0].iter().any(|&v| v != 1.0) {
            return Err(Error::Basis("first column must be the constant 1".into()));
        }
        let mut phi = vec![0.0; n * d];
        for (j, col) in columns.iter().enumerate() {
            for (x, &v) in col.iter().enumerate() {
                phi[x * d + j] = v;
            }
        }
        let fm = FeatureMatrix { n, d, phi, kind };
        if kind != BasisKind::Identity {
            let rank = fm.rank();
            if rank < d {
                return Err(Error::Basis(format!("{kind} basis has rank {rank} < d = {d}")));
            }
        }
        Ok(fm)
    }

    pub fn identity(n: usize) -> Self {
        let mut phi = vec![0.0; n * n];
        for x in 0..n {
            phi[x * n + x] = 1.0;
        }
        FeatureMatrix { n, d: n, phi, kind: BasisKind::Identity }
    }

    /// Constant column followed by `d - 1` standard normal columns.
    pub fn random_projection(n: usize, d: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut columns = vec![vec![1.0; n]];
        for _ in 1..d {
            columns.push((0..n).map(|_| StandardNormal.sample(&mut rng)).collect());
        }
        Self::from_columns(n, columns, BasisKind::RandomProjection { d, seed })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.phi[x * self.d..(x + 1) * self.d]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|x| self.phi[x * self.d + j]).collect()
    }

    /// `Φ r`.
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|x| self.row(x).iter().zip(r).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Numerical column rank (singular values above `1e-9 * sigma_max`).
    pub fn rank(&self) -> usize {
        let m = DMatrix::from_row_slice(self.n, self.d, &self.phi);
        let sv = m.singular_values();
        let top = sv.iter().copied().fold(0.0, f64::max);
        sv.iter().filter(|&&s| s > RANK_TOL * top.max(f64::MIN_POSITIVE)).count()
    }

    /// `n / d`, the dimensionality reduction factor.
    pub fn reduction_factor(&self) -> f64 {
        self.n as f64 / self.d as f64
    }
}

/// Builds a feature matrix of the requested kind for `mdp`.
pub fn build_features(kind: BasisKind, mdp: &CoMdp) -> Result<FeatureMatrix> {
    let n = mdp.n();
    match kind {
        BasisKind::Identity => Ok(FeatureMatrix::identity(n)),
        BasisKind::Aggregation { cells } => {
            if cells == 0 || cells > n {
                return Err(Error::Basis(format!("aggregation needs 1..={n} cells, got {cells}")));
            }
            let cell_of = |x: usize| x * cells / n;
            let mut columns = vec![vec![1.0; n]];
            for c in 1..cells {
                columns.push((0..n).map(|x| if cell_of(x) == c { 1.0 } else { 0.0 }).collect());
            }
            FeatureMatrix::from_columns(n, columns, kind)
        }
        BasisKind::GridDistance => {
            let layout = mdp
                .layout()
                .ok_or_else(|| Error::Basis("grid-distance basis needs a grid-world model".into()))?;
            let h = layout.h;
            let cells = h * h;
            let manhattan = |a: usize, b: usize| {
                ((a / h).abs_diff(b / h) + (a % h).abs_diff(b % h)) as f64
            };
            let nearest = |s: usize| {
                layout.flies.iter().map(|&f| manhattan(s, f)).fold(f64::INFINITY, f64::min)
            };
            let mut columns = vec![vec![1.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
            for x in 0..n {
                let (s1, s2) = (x / cells, x % cells);
                columns[1][x] = nearest(s1);
                columns[2][x] = nearest(s2);
                columns[3][x] = if s1 == s2 { 1.0 } else { 0.0 };
            }
            FeatureMatrix::from_columns(n, columns, kind)
        }
        BasisKind::Polynomial { degree } => {
            let coords = state_coordinates(mdp);
            let dims = coords.first().map_or(0, Vec::len);
            let mut columns = vec![vec![1.0; n]];
            for exps in monomials(dims, degree) {
                columns.push(
                    coords
                        .iter()
                        .map(|c| c.iter().zip(&exps).map(|(v, &e)| v.powi(e as i32)).product())
                        .collect(),
                );
            }
            FeatureMatrix::from_columns(n, columns, kind)
        }
        BasisKind::RandomProjection { d, seed } => FeatureMatrix::random_projection(n, d, seed),
        BasisKind::Custom => Err(Error::Basis("custom bases are built with from_columns".into())),
    }
}

/// Coordinates in `[0, 1]`: spider rows/columns on grid models, the scaled
/// state index otherwise.
fn state_coordinates(mdp: &CoMdp) -> Vec<Vec<f64>> {
    let n = mdp.n();
    match mdp.layout() {
        Some(layout) => {
            let h = layout.h;
            let scale = (h - 1) as f64;
            (0..n)
                .map(|x| {
                    let (s1, s2) = (x / (h * h), x % (h * h));
                    [s1 / h, s1 % h, s2 / h, s2 % h].iter().map(|&v| v as f64 / scale).collect()
                })
                .collect()
        }
        None => {
            let scale = (n.max(2) - 1) as f64;
            (0..n).map(|x| vec![x as f64 / scale]).collect()
        }
    }
}

/// Exponent vectors with total degree in `1..=degree`, graded then
/// lexicographic.
fn monomials(dims: usize, degree: usize) -> Vec<Vec<usize>> {
    fn fill(dims: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == dims - 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e);
            fill(dims, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if dims == 0 {
        return out;
    }
    for total in 1..=degree {
        fill(dims, total, &mut Vec::with_capacity(dims), &mut out);
    }
    out
}

/// State-relevance weights: strictly positive, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateWeights(Vec<f64>);

impl StateWeights {
    pub fn uniform(n: usize) -> Self {
        StateWeights(vec![1.0 / n as f64; n])
    }

    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.is_empty() || c.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Weights("weights must be finite and strictly positive".into()));
        }
        let sum: f64 = c.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Weights(format!("weights sum to {sum}, expected 1")));
        }
        Ok(StateWeights(c))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlpResult {
    pub r: Vec<f64>,
    /// `Φ r`.
    pub values: ValueFunction,
    pub status: LpStatus,
    pub pivot_count: usize,
}

fn check_shapes(mdp: &CoMdp, phi: &FeatureMatrix, c: &StateWeights) -> Result<()> {
    if phi.n() != mdp.n() || c.as_slice().len() != mdp.n() {
        return Err(Error::Dimension(format!(
            "basis has {} rows, weights {} entries, model {} states",
            phi.n(),
            c.as_slice().len(),
            mdp.n()
        )));
    }
    Ok(())
}

fn objective(phi: &FeatureMatrix, c: &StateWeights) -> Vec<f64> {
    let mut obj = vec![0.0; phi.d()];
    for (x, &w) in c.as_slice().iter().enumerate() {
        for (o, &f) in obj.iter_mut().zip(phi.row(x)) {
            *o += w * f;
        }
    }
    obj
}

/// LP of the infinite-horizon evaluation: for every `x`,
/// `(Φr)(x) - alpha sum_y p_xy(mu(x)) (Φr)(y) <= g_mu(x)`.
pub fn assemble_ih_problem(
    mdp: &CoMdp,
    mu: &JointPolicy,
    phi: &FeatureMatrix,
    c: &StateWeights,
) -> Result<LpProblem> {
    let alpha = mdp.discount()?;
    check_shapes(mdp, phi, c)?;
    mdp.check_policy(mu)?;
    let (n, d) = (mdp.n(), phi.d());
    let mut a = vec![0.0; n * d];
    let mut b = vec![0.0; n];
    for x in 0..n {
        let line = &mut a[x * d..(x + 1) * d];
        line.copy_from_slice(phi.row(x));
        for (y, p, g) in mdp.policy_row(x, mu).entries() {
            for (v, &f) in line.iter_mut().zip(phi.row(y)) {
                *v -= alpha * p * f;
            }
            b[x] += p * g;
        }
    }
    LpProblem::from_flat(objective(phi, c), a, b)
}

/// LP of one finite-horizon stage: `(Φr)(x) <= sum_y p_xy(mu_k(x)) [g + J_next(y)]`.
pub fn assemble_fh_stage_problem(
    mdp: &CoMdp,
    mu_k: &JointPolicy,
    j_next: &ValueFunction,
    phi: &FeatureMatrix,
    c: &StateWeights,
) -> Result<LpProblem> {
    mdp.finite()?;
    check_shapes(mdp, phi, c)?;
    mdp.check_policy(mu_k)?;
    if j_next.len() != mdp.n() {
        return Err(Error::Dimension("next-stage values have the wrong length".into()));
    }
    let (n, d) = (mdp.n(), phi.d());
    let mut a = Vec::with_capacity(n * d);
    let mut b = Vec::with_capacity(n);
    for x in 0..n {
        a.extend_from_slice(phi.row(x));
        b.push(mdp.policy_row(x, mu_k).expectation(&j_next.values, 1.0));
    }
    LpProblem::from_flat(objective(phi, c), a, b)
}

fn finish(problem: &LpProblem, phi: &FeatureMatrix, stage: Option<usize>) -> Result<AlpResult> {
    let sol = solve_lp(problem);
    match (sol.status, sol.x) {
        (LpStatus::Optimal, Some(r)) => Ok(AlpResult {
            values: ValueFunction::alp(phi.apply(&r)),
            r,
            status: LpStatus::Optimal,
            pivot_count: sol.pivot_count,
        }),
        (status, _) => Err(Error::Alp {
            status,
            stage,
            detail: format!(
                "{} basis with d = {} on {} states after {} pivots; the constant column should make the LP feasible and bounded",
                phi.kind(),
                phi.d(),
                phi.n(),
                sol.pivot_count
            ),
        }),
    }
}

/// Approximate cost of a stationary policy.
pub fn alp_evaluate_ih(
    mdp: &CoMdp,
    mu: &JointPolicy,
    phi: &FeatureMatrix,
    c: &StateWeights,
) -> Result<AlpResult> {
    let problem = assemble_ih_problem(mdp, mu, phi, c)?;
    finish(&problem, phi, None)
}

/// Approximate stage-`k` cost of `mu_k` given next-stage values.
pub fn alp_evaluate_fh_stage(
    mdp: &CoMdp,
    k: usize,
    mu_k: &JointPolicy,
    j_next: &ValueFunction,
    phi: &FeatureMatrix,
    c: &StateWeights,
) -> Result<AlpResult> {
    let problem = assemble_fh_stage_problem(mdp, mu_k, j_next, phi, c)?;
    finish(&problem, phi, Some(k))
}

/// `max_x |J(x) - J_alp(x)|`.
pub fn beta(exact: &ValueFunction, approx: &ValueFunction) -> f64 {
    max_abs_diff(&exact.values, &approx.values)
}
