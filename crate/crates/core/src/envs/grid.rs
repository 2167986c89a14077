//! Spiders-and-flies grid world.
//!
//! Two spiders move on an `h x h` grid; two flies sit on fixed cells. The
//! joint state is `(cell of spider 1, cell of spider 2)` encoded as
//! `s1 * h^2 + s2`, so there are `h^4` states. Each spider picks one of
//! up/down/left/right; the intended move happens with probability `slip_p`
//! and each other direction with `(1 - slip_p) / 3`. A move off the grid
//! keeps the spider in place and costs `wall_penalty`.
//!
//! Goal states are those where the spiders cover both fly cells. Every
//! other transition costs `stage_cost`, plus `collision_penalty` when the
//! spiders land on the same cell, plus wall penalties.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{CoMdp, CoMdpBuilder, GridLayout, Horizon};

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const DIRECTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum GridMode {
    /// Goal states absorb at zero cost; terminal cost zero.
    Finite { stages: usize },
    /// Goal states restart uniformly over all joint positions at zero cost.
    Infinite { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub h: usize,
    pub fly_cells: [usize; 2],
    pub slip_p: f64,
    pub collision_penalty: f64,
    pub wall_penalty: f64,
    pub stage_cost: f64,
    pub mode: GridMode,
}

impl GridSpec {
    /// Flies in opposite corners, `p = 0.7`, collision penalty 2, wall
    /// penalty 1, stage cost 1.
    pub fn new(h: usize, mode: GridMode) -> Self {
        GridSpec {
            h,
            fly_cells: [0, h * h - 1],
            slip_p: 0.7,
            collision_penalty: 2.0,
            wall_penalty: 1.0,
            stage_cost: 1.0,
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        if self.h < 2 {
            return bad(format!("grid side {} must be at least 2", self.h));
        }
        let cells = self.h * self.h;
        let [a, b] = self.fly_cells;
        if a >= cells || b >= cells || a == b {
            return bad(format!("fly cells {a}, {b} must be distinct and below {cells}"));
        }
        if !(self.slip_p > 0.0 && self.slip_p <= 1.0) {
            return bad(format!("slip probability {} outside (0, 1]", self.slip_p));
        }
        if !(self.stage_cost > 0.0) {
            return bad(format!("stage cost {} must be positive", self.stage_cost));
        }
        if !self.collision_penalty.is_finite() || !self.wall_penalty.is_finite() {
            return bad("penalties must be finite".into());
        }
        match self.mode {
            GridMode::Finite { stages: 0 } => bad("horizon must be at least 1".into()),
            GridMode::Infinite { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                bad(format!("discount {alpha} outside (0, 1)"))
            }
            _ => Ok(()),
        }
    }

    pub fn num_states(&self) -> usize {
        self.h.pow(4)
    }

    pub fn encode(&self, s1: usize, s2: usize) -> usize {
        s1 * self.h * self.h + s2
    }

    pub fn decode(&self, x: usize) -> (usize, usize) {
        let cells = self.h * self.h;
        (x / cells, x % cells)
    }

    pub fn is_goal(&self, x: usize) -> bool {
        let (s1, s2) = self.decode(x);
        let [a, b] = self.fly_cells;
        (s1 == a && s2 == b) || (s1 == b && s2 == a)
    }

    /// Non-goal states, used as start states for cost reporting.
    pub fn start_states(&self) -> Vec<usize> {
        (0..self.num_states()).filter(|&x| !self.is_goal(x)).collect()
    }

    /// Cell reached from `cell` moving in `dir`, or `None` off the grid.
    pub fn step(&self, cell: usize, dir: usize) -> Option<usize> {
        let (r, c) = (cell / self.h, cell % self.h);
        match dir {
            UP if r > 0 => Some(cell - self.h),
            DOWN if r + 1 < self.h => Some(cell + self.h),
            LEFT if c > 0 => Some(cell - 1),
            RIGHT if c + 1 < self.h => Some(cell + 1),
            _ => None,
        }
    }

    /// Single-spider outcome distribution `(next cell, probability, bumped)`
    /// for an intended direction, merged per next cell.
    pub fn spider_outcomes(&self, cell: usize, intended: usize) -> Vec<(usize, f64, bool)> {
        let slip = (1.0 - self.slip_p) / (DIRECTIONS - 1) as f64;
        let mut out: Vec<(usize, f64, bool)> = Vec::with_capacity(DIRECTIONS);
        for dir in 0..DIRECTIONS {
            let p = if dir == intended { self.slip_p } else { slip };
            if p == 0.0 {
                continue;
            }
            let (next, bumped) = match self.step(cell, dir) {
                Some(next) => (next, false),
                None => (cell, true),
            };
            match out.iter_mut().find(|o| o.0 == next) {
                Some(o) => o.1 += p,
                None => out.push((next, p, bumped)),
            }
        }
        out
    }
}

/// Builds the spiders-and-flies model.
pub fn build_spiders_and_flies(spec: &GridSpec) -> Result<CoMdp> {
    spec.validate()?;
    let n = spec.num_states();
    let horizon = match spec.mode {
        GridMode::Finite { stages } => Horizon::Finite { stages, terminal: vec![0.0; n] },
        GridMode::Infinite { alpha } => Horizon::Infinite { alpha },
    };
    let mut b = CoMdpBuilder::uniform(n, 2, DIRECTIONS, horizon)?;
    let restart: Vec<(usize, f64, f64)> = (0..n).map(|y| (y, 1.0 / n as f64, 0.0)).collect();
    let mut entries = Vec::with_capacity(DIRECTIONS * DIRECTIONS);
    for x in 0..n {
        let (s1, s2) = spec.decode(x);
        for a1 in 0..DIRECTIONS {
            for a2 in 0..DIRECTIONS {
                let k = a1 * DIRECTIONS + a2;
                if spec.is_goal(x) {
                    match spec.mode {
                        GridMode::Finite { .. } => b.set_row_index(x, k, &[(x, 1.0, 0.0)])?,
                        GridMode::Infinite { .. } => b.set_row_index(x, k, &restart)?,
                    }
                    continue;
                }
                entries.clear();
                for &(y1, p1, bump1) in &spec.spider_outcomes(s1, a1) {
                    for &(y2, p2, bump2) in &spec.spider_outcomes(s2, a2) {
                        let mut g = spec.stage_cost;
                        if y1 == y2 {
                            g += spec.collision_penalty;
                        }
                        if bump1 {
                            g += spec.wall_penalty;
                        }
                        if bump2 {
                            g += spec.wall_penalty;
                        }
                        entries.push((spec.encode(y1, y2), p1 * p2, g));
                    }
                }
                b.set_row_index(x, k, &entries)?;
            }
        }
    }
    Ok(b.build().with_layout(GridLayout { h: spec.h, flies: spec.fly_cells }))
}
