//! Dense linear programming: `maximize c·x subject to A x <= b`, `x` free.
//!
//! The problem is solved through its dual in standard form,
//!
//! ```text
//! minimize b·y  subject to  Aᵀ y = c,  y >= 0,
//! ```
//!
//! with a two-phase primal simplex on a dense tableau. The dual has one row
//! per primal variable, so ALP instances (many states, few basis columns)
//! give a short, wide tableau and no free-variable splitting is needed. The
//! primal point is recovered from the optimal dual basis by solving
//! `A_B x = b_B` on the original data; it is a vertex of the feasible set.
//!
//! Pivoting follows Dantzig's most-negative rule and switches to Bland's
//! smallest-index rule after `3 * (rows + columns)` pivots without objective
//! progress.

use std::fmt::Write as _;
use std::io;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const PIVOT_TOL: f64 = 1e-10;
pub const FEASIBILITY_TOL: f64 = 1e-7;
const PHASE1_TOL: f64 = 1e-8;
/// Reduced costs above `-OPTIMALITY_TOL` count as non-negative.
const OPTIMALITY_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    objective: Vec<f64>,
    /// Row-major `rows x cols`.
    a: Vec<f64>,
    b: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl LpProblem {
    pub fn new(objective: Vec<f64>, a: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let cols = objective.len();
        let rows = a.len();
        if b.len() != rows {
            return Err(Error::Dimension(format!("A has {rows} rows but b has {}", b.len())));
        }
        let mut flat = Vec::with_capacity(rows * cols);
        for (r, row) in a.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {r} of A has {} entries, expected {cols}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        Self::from_flat(objective, flat, b)
    }

    /// `a` is row-major with `b.len()` rows.
    pub fn from_flat(objective: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let cols = objective.len();
        let rows = b.len();
        if a.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "A has {} entries, expected {rows}x{cols}",
                a.len()
            )));
        }
        if !objective.iter().chain(&a).chain(&b).all(|v| v.is_finite()) {
            return Err(Error::Dimension("LP data contains non-finite entries".into()));
        }
        Ok(LpProblem { objective, a, b, rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.a[r * self.cols..(r + 1) * self.cols]
    }

    /// Largest constraint violation `max_r (A x - b)_r`, or 0 if feasible.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        (0..self.rows)
            .map(|r| dot(self.row(r), x) - self.b[r])
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Option<Vec<f64>>,
    pub objective_value: Option<f64>,
    pub pivot_count: usize,
}

impl LpSolution {
    fn without_point(status: LpStatus, pivot_count: usize) -> Self {
        LpSolution { status, x: None, objective_value: None, pivot_count }
    }
}

pub fn solve_lp(problem: &LpProblem) -> LpSolution {
    solve(problem, false).0
}

/// Like [`solve_lp`], additionally writing the final dual tableau as text.
pub fn solve_lp_with_dump(problem: &LpProblem, out: &mut dyn io::Write) -> io::Result<LpSolution> {
    let (sol, dump) = solve(problem, true);
    out.write_all(dump.unwrap_or_default().as_bytes())?;
    Ok(sol)
}

fn solve(problem: &LpProblem, dump: bool) -> (LpSolution, Option<String>) {
    let d = problem.cols;
    let n = problem.rows;

    // Dual standard form: rows = primal variables, columns = primal constraints.
    let mut m = vec![0.0; d * n];
    for r in 0..n {
        for (j, &v) in problem.row(r).iter().enumerate() {
            m[j * n + r] = v;
        }
    }
    let mut tab = Tableau::new(d, n, &m, &problem.objective);
    let mut pivots = 0;

    let dual_feasible = tab.phase_one();
    pivots += tab.pivots;
    if dual_feasible {
        tab.pivots = 0;
        let outcome = tab.phase_two(&problem.b);
        pivots += tab.pivots;
        let text = dump.then(|| tab.render("dual phase 2"));
        if outcome == PhaseOutcome::Unbounded {
            return (LpSolution::without_point(LpStatus::Infeasible, pivots), text);
        }
        let basic: Vec<usize> = tab.basis.iter().copied().filter(|&c| c < n).collect();
        let x = recover_primal(problem, &basic);
        let objective_value = dot(&problem.objective, &x);
        let sol = LpSolution {
            status: LpStatus::Optimal,
            x: Some(x),
            objective_value: Some(objective_value),
            pivot_count: pivots,
        };
        return (sol, text);
    }

    // Dual infeasible: the primal is unbounded or infeasible. A Farkas
    // certificate `y >= 0, Aᵀy = 0, b·y < 0` exists iff the primal is
    // infeasible, which shows up as an unbounded ray of
    // `min b·y s.t. Aᵀy = 0, y >= 0`.
    let zeros = vec![0.0; d];
    let mut farkas = Tableau::new(d, n, &m, &zeros);
    farkas.phase_one();
    farkas.pivots = 0;
    let outcome = farkas.phase_two(&problem.b);
    pivots += farkas.pivots;
    let text = dump.then(|| farkas.render("feasibility certificate"));
    let status = match outcome {
        PhaseOutcome::Unbounded => LpStatus::Infeasible,
        PhaseOutcome::Optimal => LpStatus::Unbounded,
    };
    (LpSolution::without_point(status, pivots), text)
}

/// Solves `A_B x = b_B` for the constraints in `basic`. With fewer than
/// `cols` basic constraints the remaining freedom does not change `A x` and
/// the minimum-norm solution is returned.
fn recover_primal(problem: &LpProblem, basic: &[usize]) -> Vec<f64> {
    let d = problem.cols;
    if basic.is_empty() || d == 0 {
        return vec![0.0; d];
    }
    let k = basic.len();
    let a = DMatrix::from_fn(k, d, |i, j| problem.row(basic[i])[j]);
    let rhs = DVector::from_iterator(k, basic.iter().map(|&r| problem.b[r]));
    let x = if k == d {
        a.clone().full_piv_lu().solve(&rhs)
    } else {
        None
    };
    let x = x.unwrap_or_else(|| {
        a.svd(true, true)
            .solve(&rhs, 1e-12)
            .expect("svd with both factors computed")
    });
    x.iter().copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PhaseOutcome {
    Optimal,
    Unbounded,
}

/// Dense simplex tableau for `min cost·y, M y = rhs, y >= 0`, with one
/// artificial column per row appended after the `real` columns.
struct Tableau {
    rows: usize,
    real: usize,
    width: usize,
    t: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    /// `m` is row-major `rows x real`.
    fn new(rows: usize, real: usize, m: &[f64], rhs: &[f64]) -> Self {
        let cols = real + rows;
        let width = cols + 1;
        let mut t = vec![0.0; (rows + 1) * width];
        for r in 0..rows {
            let sign = if rhs[r] < 0.0 { -1.0 } else { 1.0 };
            let line = &mut t[r * width..(r + 1) * width];
            for j in 0..real {
                line[j] = sign * m[r * real + j];
            }
            line[real + r] = 1.0;
            line[cols] = sign * rhs[r];
        }
        Tableau {
            rows,
            real,
            width,
            t,
            basis: (real..real + rows).collect(),
            pivots: 0,
        }
    }

    #[inline]
    fn at(&self, r: usize, j: usize) -> f64 {
        self.t[r * self.width + j]
    }

    fn rhs_col(&self) -> usize {
        self.width - 1
    }

    fn objective(&self) -> f64 {
        -self.at(self.rows, self.rhs_col())
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let inv = 1.0 / self.t[pr * w + pc];
        for v in &mut self.t[pr * w..(pr + 1) * w] {
            *v *= inv;
        }
        self.t[pr * w + pc] = 1.0;
        let (before, rest) = self.t.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        let eliminate = |line: &mut [f64]| {
            let f = line[pc];
            if f != 0.0 {
                for (v, &p) in line.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
                line[pc] = 0.0;
            }
        };
        before.chunks_exact_mut(w).for_each(eliminate);
        after.chunks_exact_mut(w).for_each(eliminate);
        self.basis[pr] = pc;
        self.pivots += 1;
    }

    /// Runs simplex iterations over columns `0..limit` until optimal or an
    /// unbounded column is found.
    fn iterate(&mut self, limit: usize) -> PhaseOutcome {
        let obj = self.rows * self.width;
        let rhs = self.rhs_col();
        let stall_limit = 3 * (self.rows + limit);
        let mut bland = false;
        let mut stall = 0;
        let mut best = self.objective();
        loop {
            let reduced = &self.t[obj..obj + limit];
            let entering = if bland {
                reduced.iter().position(|&v| v < -OPTIMALITY_TOL)
            } else {
                let mut pick = None;
                let mut most = -OPTIMALITY_TOL;
                for (j, &v) in reduced.iter().enumerate() {
                    if v < most {
                        most = v;
                        pick = Some(j);
                    }
                }
                pick
            };
            let Some(pc) = entering else {
                return PhaseOutcome::Optimal;
            };

            let mut leaving: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.at(r, rhs).max(0.0) / a;
                    leaving = match leaving {
                        None => Some((r, ratio)),
                        Some((br, bv)) => {
                            if ratio < bv - 1e-12 * (1.0 + bv.abs())
                                || (ratio <= bv + 1e-12 * (1.0 + bv.abs())
                                    && self.basis[r] < self.basis[br])
                            {
                                Some((r, ratio))
                            } else {
                                Some((br, bv))
                            }
                        }
                    };
                }
            }
            let Some((pr, _)) = leaving else {
                return PhaseOutcome::Unbounded;
            };
            self.pivot(pr, pc);

            let z = self.objective();
            if z < best - 1e-12 * (1.0 + best.abs()) {
                best = z;
                stall = 0;
            } else {
                stall += 1;
                if stall > stall_limit {
                    bland = true;
                }
            }
        }
    }

    /// Minimizes the sum of artificials. Returns whether the system is
    /// feasible; afterwards every artificial left in the basis sits on a
    /// redundant row.
    fn phase_one(&mut self) -> bool {
        let w = self.width;
        let obj = self.rows * w;
        let cols = self.real + self.rows;
        for j in 0..self.real {
            self.t[obj + j] = -(0..self.rows).map(|r| self.at(r, j)).sum::<f64>();
        }
        for j in self.real..cols {
            self.t[obj + j] = 0.0;
        }
        self.t[obj + cols] = -(0..self.rows).map(|r| self.at(r, cols)).sum::<f64>();
        let scale = (0..self.rows).map(|r| self.at(r, cols).abs()).fold(1.0, f64::max);

        self.iterate(cols);
        if self.objective() > PHASE1_TOL * scale {
            return false;
        }
        for r in 0..self.rows {
            if self.basis[r] < self.real {
                continue;
            }
            let mut pick = None;
            let mut largest = PIVOT_TOL;
            for j in 0..self.real {
                let a = self.at(r, j).abs();
                if a > largest {
                    largest = a;
                    pick = Some(j);
                }
            }
            if let Some(pc) = pick {
                self.pivot(r, pc);
            }
        }
        // Artificials still basic are zero; clamp round-off in the rhs.
        for r in 0..self.rows {
            let i = r * w + cols;
            if self.t[i] < 0.0 {
                self.t[i] = 0.0;
            }
        }
        true
    }

    /// Minimizes `cost` over the real columns starting from the phase-one basis.
    fn phase_two(&mut self, cost: &[f64]) -> PhaseOutcome {
        let w = self.width;
        let obj = self.rows * w;
        let cols = self.real + self.rows;
        let basic_cost: Vec<f64> = self
            .basis
            .iter()
            .map(|&c| if c < self.real { cost[c] } else { 0.0 })
            .collect();
        for j in 0..self.real {
            let z: f64 = (0..self.rows).map(|r| basic_cost[r] * self.at(r, j)).sum();
            self.t[obj + j] = cost[j] - z;
        }
        for j in self.real..cols {
            self.t[obj + j] = 0.0;
        }
        let z: f64 = (0..self.rows).map(|r| basic_cost[r] * self.at(r, cols)).sum();
        self.t[obj + cols] = -z;
        self.iterate(self.real)
    }

    fn render(&self, label: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# {label}: {} rows x {} columns ({} artificial), {} pivots",
            self.rows,
            self.width - 1,
            self.rows,
            self.pivots
        );
        let _ = writeln!(s, "# basis {:?}", self.basis);
        for r in 0..=self.rows {
            let line: Vec<String> = (0..self.width).map(|j| format!("{:.6e}", self.at(r, j))).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}
