//! Brute-force oracles shared by the integration tests. None of these call
//! into the solver code paths they check.
#![allow(dead_code)]

use comdp_core::envs::{build_random_comdp, RandomMode, RandomSpec};
use comdp_core::{CoMdp, JointPolicy};

pub fn random_ih(seed: u64, n: usize, m: usize, actions: usize, alpha: f64) -> CoMdp {
    build_random_comdp(&RandomSpec {
        seed,
        n,
        m,
        actions_per_agent: actions,
        branching: n,
        cost_range: (0.0, 5.0),
        mode: RandomMode::Infinite { alpha },
    })
    .unwrap()
}

pub fn random_fh(seed: u64, n: usize, m: usize, actions: usize, stages: usize) -> CoMdp {
    build_random_comdp(&RandomSpec {
        seed,
        n,
        m,
        actions_per_agent: actions,
        branching: n.min(3),
        cost_range: (0.0, 5.0),
        mode: RandomMode::Finite { stages },
    })
    .unwrap()
}

/// Dense `p[x][k][y]` and `g[x][k][y]` copies of the kernel.
pub struct Dense {
    pub p: Vec<Vec<Vec<f64>>>,
    pub g: Vec<Vec<Vec<f64>>>,
}

pub fn densify(mdp: &CoMdp) -> Dense {
    let n = mdp.n();
    let mut p = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    for x in 0..n {
        let rows = mdp.num_joint_actions(x);
        p.push((0..rows).map(|k| (0..n).map(|y| mdp.row(x, k).prob(y)).collect()).collect());
        g.push((0..rows).map(|k| (0..n).map(|y| mdp.row(x, k).cost(y)).collect()).collect());
    }
    Dense { p, g }
}

/// `sum_y p[y] (g[y] + discount j[y])` by plain summation over every `y`.
pub fn direct_sum(d: &Dense, x: usize, k: usize, j: &[f64], discount: f64) -> f64 {
    let mut s = 0.0;
    for y in 0..j.len() {
        s += d.p[x][k][y] * (d.g[x][k][y] + discount * j[y]);
    }
    s
}

/// Local joint index of `mu` at `x`, found by scanning the decoded list.
pub fn local_index(mdp: &CoMdp, mu: &JointPolicy, x: usize) -> usize {
    let want: Vec<usize> = mu.agents.iter().map(|a| a[x]).collect();
    mdp.joint_actions(x).iter().position(|u| u.0 == want).expect("policy action admissible")
}

/// Exact infinite-horizon cost by Gauss-Jordan elimination on dense data.
pub fn policy_cost_gauss(mdp: &CoMdp, d: &Dense, mu: &JointPolicy, alpha: f64) -> Vec<f64> {
    let n = mdp.n();
    let mut a = vec![vec![0.0; n + 1]; n];
    for x in 0..n {
        let k = local_index(mdp, mu, x);
        for y in 0..n {
            a[x][y] = if x == y { 1.0 } else { 0.0 } - alpha * d.p[x][k][y];
            a[x][n] += d.p[x][k][y] * d.g[x][k][y];
        }
    }
    solve_augmented(a).expect("nonsingular")
}

/// Gauss-Jordan with partial pivoting on an augmented `n x (n+1)` system.
pub fn solve_augmented(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for c in col..=n {
                        let t = a[col][c];
                        a[r][c] -= f * t;
                    }
                }
            }
        }
    }
    Some(a.into_iter().map(|row| row[n]).collect())
}

/// Every deterministic stationary joint policy of a small model.
pub fn all_policies(mdp: &CoMdp) -> Vec<JointPolicy> {
    let n = mdp.n();
    let mut out = Vec::new();
    let mut choice = vec![0usize; n];
    loop {
        let mut agents = vec![vec![0; n]; mdp.m()];
        for x in 0..n {
            for (i, a) in mdp.joint_action(x, choice[x]).0.into_iter().enumerate() {
                agents[i][x] = a;
            }
        }
        out.push(JointPolicy::new(agents));
        let mut x = 0;
        loop {
            if x == n {
                return out;
            }
            choice[x] += 1;
            if choice[x] < mdp.num_joint_actions(x) {
                break;
            }
            choice[x] = 0;
            x += 1;
        }
    }
}

/// Optimal cost over all stationary policies, by exhaustive enumeration.
pub fn best_cost_by_enumeration(mdp: &CoMdp, alpha: f64) -> Vec<f64> {
    let d = densify(mdp);
    let mut best = vec![f64::INFINITY; mdp.n()];
    for mu in all_policies(mdp) {
        let j = policy_cost_gauss(mdp, &d, &mu, alpha);
        // an optimal policy is optimal at every state simultaneously, so the
        // pointwise minimum is attained by one policy
        for (b, v) in best.iter_mut().zip(j) {
            *b = b.min(v);
        }
    }
    best
}

/// Expected total cost from `x0` of a nonstationary policy, by enumerating
/// every trajectory of length `stages` with its probability.
pub fn trajectory_cost(mdp: &CoMdp, stages: &[JointPolicy], terminal: &[f64], x0: usize) -> f64 {
    fn walk(mdp: &CoMdp, stages: &[JointPolicy], terminal: &[f64], k: usize, x: usize, prob: f64, acc: f64) -> f64 {
        if k == stages.len() {
            return prob * (acc + terminal[x]);
        }
        let row = mdp.row(x, local_index(mdp, &stages[k], x));
        let mut total = 0.0;
        for y in 0..mdp.n() {
            let p = row.prob(y);
            if p > 0.0 {
                total += walk(mdp, stages, terminal, k + 1, y, prob * p, acc + row.cost(y));
            }
        }
        total
    }
    walk(mdp, stages, terminal, 0, x0, 1.0, 0.0)
}

/// Expected total cost from `x0` by pushing the state distribution forward.
pub fn forward_chain_cost(mdp: &CoMdp, stages: &[JointPolicy], terminal: &[f64], x0: usize) -> f64 {
    let n = mdp.n();
    let mut dist = vec![0.0; n];
    dist[x0] = 1.0;
    let mut cost = 0.0;
    for mu in stages {
        let mut next = vec![0.0; n];
        for x in 0..n {
            if dist[x] == 0.0 {
                continue;
            }
            let row = mdp.row(x, local_index(mdp, mu, x));
            for y in 0..n {
                let p = row.prob(y);
                cost += dist[x] * p * row.cost(y);
                next[y] += dist[x] * p;
            }
        }
        dist = next;
    }
    cost + dist.iter().zip(terminal).map(|(d, g)| d * g).sum::<f64>()
}

/// Maximum of `c·x` over `A x <= b` by enumerating every vertex: each
/// `d`-subset of constraints is solved as an equality system and kept if
/// feasible. `None` when no vertex is feasible.
pub fn vertex_enumeration(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Option<(f64, Vec<f64>)> {
    let d = c.len();
    let rows = a.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut subset: Vec<usize> = (0..d).collect();
    if d > rows {
        return None;
    }
    loop {
        let sys: Vec<Vec<f64>> = subset
            .iter()
            .map(|&r| {
                let mut line = a[r].clone();
                line.push(b[r]);
                line
            })
            .collect();
        if let Some(x) = solve_augmented(sys) {
            let feasible = (0..rows).all(|r| {
                let lhs: f64 = a[r].iter().zip(&x).map(|(u, v)| u * v).sum();
                let scale: f64 = a[r].iter().zip(&x).map(|(u, v)| (u * v).abs()).sum();
                lhs <= b[r] + 1e-9 * (1.0 + b[r].abs() + scale)
            });
            if feasible {
                let val: f64 = c.iter().zip(&x).map(|(u, v)| u * v).sum();
                if best.as_ref().is_none_or(|bst| val > bst.0) {
                    best = Some((val, x));
                }
            }
        }
        // next combination in lexicographic order
        let mut i = d;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if subset[i] < rows - d + i {
                subset[i] += 1;
                for j in i + 1..d {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}
