use thiserror::Error;

use crate::domain::{ActionKind, MapId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error(
        "turn-order violation at step {step}: expected {expected_kind} by {expected_team}, got {kind} by {team}"
    )]
    TurnOrder {
        step: usize,
        expected_team: String,
        expected_kind: ActionKind,
        team: String,
        kind: ActionKind,
    },

    #[error("map {map} is not available at step {step}")]
    UnavailableMap { map: MapId, step: usize },

    #[error("veto incomplete: {step} of 6 decisions made")]
    IncompleteVeto { step: usize },

    #[error("veto already complete; only the decider remains")]
    VetoComplete,

    #[error("unsupported map pool: {0}")]
    UnsupportedMap(String),

    #[error("no available maps in the action mask")]
    EmptyMask,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("importance weights sum to zero; target policy has no mass on logged actions")]
    ZeroWeightSum,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("dataset is not chronologically ordered: {0}")]
    Unordered(String),

    #[error("decision record in match {0} has no reward")]
    MissingReward(String),

    #[error("decision record in match {0} has no behavior propensity")]
    MissingPropensity(String),

    #[error("model container: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable tag used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::TurnOrder { .. } => "turn_order",
            Error::UnavailableMap { .. } => "unavailable_map",
            Error::IncompleteVeto { .. } => "incomplete_veto",
            Error::VetoComplete => "veto_complete",
            Error::UnsupportedMap(_) => "unsupported_pool",
            Error::EmptyMask => "empty_mask",
            Error::NonFinite(_) => "non_finite",
            Error::ZeroWeightSum => "zero_weight_sum",
            Error::Empty(_) => "empty",
            Error::Unordered(_) => "unordered",
            Error::MissingReward(_) => "missing_reward",
            Error::MissingPropensity(_) => "missing_propensity",
            Error::ModelFormat(_) => "model_format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    /// Veto step the error refers to, when there is one.
    pub fn step(&self) -> Option<usize> {
        match self {
            Error::TurnOrder { step, .. }
            | Error::UnavailableMap { step, .. }
            | Error::IncompleteVeto { step } => Some(*step),
            Error::VetoComplete => Some(6),
            _ => None,
        }
    }
}
