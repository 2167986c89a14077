use thiserror::Error;

use crate::lp::LpStatus;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid action {action} at state {x}")]
    InvalidAction { x: usize, action: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("operation needs an {expected}-horizon model, got {found}-horizon")]
    HorizonMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("singular policy-evaluation system")]
    Singular,

    #[error("invalid basis: {0}")]
    Basis(String),

    #[error("invalid state weights: {0}")]
    Weights(String),

    #[error("ALP evaluation failed ({status:?}) at stage {stage:?}: {detail}")]
    Alp {
        status: LpStatus,
        stage: Option<usize>,
        detail: String,
    },

    #[error("generator guard: {0}")]
    Generator(String),

    #[error("model format: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
