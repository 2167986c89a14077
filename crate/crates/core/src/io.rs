//! JSON model format.
//!
//! ```json
//! {
//!   "n": 2, "m": 1,
//!   "agent_actions": [[[0, 1]], [[0]]],
//!   "transitions": [{"x": 0, "u": [0], "rows": [{"y": 1, "p": 1.0, "g": 0.5}]}, ...],
//!   "horizon": {"type": "infinite", "alpha": 0.9}
//! }
//! ```
//!
//! `horizon` may also be `{"type": "finite", "N": 6, "terminal": [...]}`.
//! Generated grid worlds carry an extra optional `grid` object with the side
//! length and fly cells.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{CoMdp, CoMdpBuilder, GridLayout, Horizon};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    pub m: usize,
    pub agent_actions: Vec<Vec<Vec<usize>>>,
    pub transitions: Vec<TransitionRecord>,
    pub horizon: Horizon,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridLayout>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub x: usize,
    pub u: Vec<usize>,
    pub rows: Vec<Entry>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Entry {
    pub y: usize,
    pub p: f64,
    pub g: f64,
}

impl ModelFile {
    pub fn from_mdp(mdp: &CoMdp) -> Self {
        let mut transitions = Vec::with_capacity(mdp.total_joint_actions());
        for x in 0..mdp.n() {
            for k in 0..mdp.num_joint_actions(x) {
                transitions.push(TransitionRecord {
                    x,
                    u: mdp.joint_action(x, k).0,
                    rows: mdp
                        .row(x, k)
                        .entries()
                        .map(|(y, p, g)| Entry { y, p, g })
                        .collect(),
                });
            }
        }
        ModelFile {
            n: mdp.n(),
            m: mdp.m(),
            agent_actions: mdp.agent_actions().to_vec(),
            transitions,
            horizon: mdp.horizon().clone(),
            grid: mdp.layout().cloned(),
        }
    }

    /// Builds the model. Structural problems (wrong sizes, unknown actions,
    /// duplicated rows) are errors; stochasticity is left to `validate`.
    pub fn into_mdp(self) -> Result<CoMdp> {
        if self.agent_actions.len() != self.n {
            return Err(Error::Format(format!(
                "agent_actions lists {} states, n = {}",
                self.agent_actions.len(),
                self.n
            )));
        }
        if let Some(x) = self.agent_actions.iter().position(|s| s.len() != self.m) {
            return Err(Error::Format(format!("agent_actions[{x}] does not list {} agents", self.m)));
        }
        let mut b = CoMdpBuilder::new(self.agent_actions, self.horizon)?;
        let mut seen = HashSet::new();
        for rec in self.transitions {
            let entries: Vec<(usize, f64, f64)> = rec.rows.iter().map(|e| (e.y, e.p, e.g)).collect();
            if rec.x >= b.n() {
                return Err(Error::Format(format!("transition for unknown state {}", rec.x)));
            }
            b.set_row(rec.x, &rec.u, &entries)?;
            if !seen.insert((rec.x, rec.u.clone())) {
                return Err(Error::Format(format!(
                    "duplicate transition record for x={}, u={:?}",
                    rec.x, rec.u
                )));
            }
        }
        let mdp = b.build();
        Ok(match self.grid {
            Some(layout) => mdp.with_layout(layout),
            None => mdp,
        })
    }
}

pub fn to_json(mdp: &CoMdp) -> Result<String> {
    Ok(serde_json::to_string(&ModelFile::from_mdp(mdp))?)
}

pub fn from_json(text: &str) -> Result<CoMdp> {
    let file: ModelFile = serde_json::from_str(text)?;
    file.into_mdp()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = r#"{
        "n": 2, "m": 1,
        "agent_actions": [[[0, 1]], [[0]]],
        "transitions": [
            {"x": 0, "u": [0], "rows": [{"y": 0, "p": 1.0, "g": 1.0}]},
            {"x": 0, "u": [1], "rows": [{"y": 1, "p": 1.0, "g": 2.0}]},
            {"x": 1, "u": [0], "rows": [{"y": 1, "p": 1.0, "g": 0.0}]}
        ],
        "horizon": {"type": "infinite", "alpha": 0.9}
    }"#;

    #[test]
    fn parses_hand_written_model() {
        let mdp = from_json(TINY).unwrap();
        assert_eq!(mdp.n(), 2);
        assert!(mdp.validate().is_empty());
        assert_eq!(mdp.row(0, 1).cost(1), 2.0);
        assert_eq!(mdp.discount().unwrap(), 0.9);
    }

    #[test]
    fn finite_horizon_tag() {
        let text = TINY.replace(
            r#"{"type": "infinite", "alpha": 0.9}"#,
            r#"{"type": "finite", "N": 3, "terminal": [0.0, 1.5]}"#,
        );
        let mdp = from_json(&text).unwrap();
        assert_eq!(mdp.finite().unwrap(), (3, &[0.0, 1.5][..]));
        let back = to_json(&mdp).unwrap();
        assert!(back.contains(r#""type":"finite","N":3"#));
    }

    #[test]
    fn duplicate_record_rejected() {
        let text = TINY.replace(
            r#"{"x": 1, "u": [0], "rows": [{"y": 1, "p": 1.0, "g": 0.0}]}"#,
            r#"{"x": 1, "u": [0], "rows": [{"y": 1, "p": 1.0, "g": 0.0}]},
               {"x": 1, "u": [0], "rows": [{"y": 1, "p": 1.0, "g": 0.0}]}"#,
        );
        assert!(matches!(from_json(&text), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_action_rejected() {
        let text = TINY.replace(r#""u": [1]"#, r#""u": [5]"#);
        assert!(matches!(from_json(&text), Err(Error::InvalidAction { .. })));
    }

    #[test]
    fn missing_row_surfaces_in_validate() {
        let text = TINY.replace(r#"{"x": 1, "u": [0], "rows": [{"y": 1, "p": 1.0, "g": 0.0}]}"#, "")
            .replace("2.0}]},\n", "2.0}]}\n");
        let mdp = from_json(&text).unwrap();
        assert_eq!(mdp.validate().len(), 1);
    }
}
