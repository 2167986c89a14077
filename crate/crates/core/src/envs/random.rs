//! Seeded random cooperative MDPs for property tests and bound suites.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{CoMdp, CoMdpBuilder, Horizon};

/// Largest `n * joint actions * branching` the generator will materialize.
pub const MAX_KERNEL_ENTRIES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum RandomMode {
    /// Terminal costs are drawn from the cost range.
    Finite { stages: usize },
    Infinite { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSpec {
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub actions_per_agent: usize,
    /// Successor states per `(x, u)` row.
    pub branching: usize,
    pub cost_range: (f64, f64),
    pub mode: RandomMode,
}

/// Each row gets `branching` distinct successors with Dirichlet(1, ..., 1)
/// probabilities and costs uniform in `cost_range`. The same spec always
/// yields the same model.
pub fn build_random_comdp(spec: &RandomSpec) -> Result<CoMdp> {
    let RandomSpec { seed, n, m, actions_per_agent, branching, cost_range, mode } = *spec;
    if n == 0 || m == 0 || actions_per_agent == 0 {
        return Err(Error::Generator("n, m and actions per agent must be positive".into()));
    }
    if branching == 0 || branching > n {
        return Err(Error::Generator(format!("branching {branching} must lie in 1..={n}")));
    }
    let (lo, hi) = cost_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::Generator(format!("bad cost range ({lo}, {hi})")));
    }
    let joint = (actions_per_agent as u128).checked_pow(m as u32).unwrap_or(u128::MAX);
    let entries = joint.saturating_mul(n as u128).saturating_mul(branching as u128);
    if entries > MAX_KERNEL_ENTRIES as u128 {
        return Err(Error::Generator(format!(
            "{entries} kernel entries exceed the limit of {MAX_KERNEL_ENTRIES}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cost = |rng: &mut ChaCha8Rng| if lo == hi { lo } else { rng.random_range(lo..hi) };
    let horizon = match mode {
        RandomMode::Finite { stages } => Horizon::Finite {
            stages,
            terminal: (0..n).map(|_| cost(&mut rng)).collect(),
        },
        RandomMode::Infinite { alpha } => Horizon::Infinite { alpha },
    };
    let mut b = CoMdpBuilder::uniform(n, m, actions_per_agent, horizon)?;
    let mut row = Vec::with_capacity(branching);
    for x in 0..n {
        for k in 0..b.num_joint_actions(x) {
            let succ = sample(&mut rng, n, branching);
            let weights: Vec<f64> = (0..branching).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let total: f64 = weights.iter().sum();
            row.clear();
            for (y, w) in succ.iter().zip(&weights) {
                row.push((y, w / total, cost(&mut rng)));
            }
            b.set_row_index(x, k, &row)?;
        }
    }
    Ok(b.build())
}
