//! Live-draft request/response types and the recommendation step.

use serde::{Deserialize, Serialize};

use crate::domain::{ActionKind, MapId, VetoState};
use crate::error::{Error, Result};
use crate::features::StatsBook;
use crate::policy::{ActionDistribution, BanditPolicy, Variant};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DraftDecision {
    pub team: String,
    pub action: ActionKind,
    pub map: MapId,
}

/// A draft in progress as sent by a client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DraftState {
    pub team_a: String,
    pub team_b: String,
    #[serde(default)]
    pub decisions: Vec<DraftDecision>,
    /// When given, must be the team on the clock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requesting_team: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
}

pub fn parse_draft_state(bytes: &[u8]) -> Result<DraftState> {
    serde_json::from_slice(bytes).map_err(|e| Error::Validation(format!("draft state: {e}")))
}

impl DraftState {
    pub fn new(team_a: impl Into<String>, team_b: impl Into<String>) -> Self {
        DraftState {
            team_a: team_a.into(),
            team_b: team_b.into(),
            decisions: Vec::new(),
            requesting_team: None,
            model_id: None,
        }
    }

    /// Replays the decisions through the veto machine.
    pub fn replay(&self) -> Result<VetoState> {
        let mut state = VetoState::new(self.team_a.as_str(), self.team_b.as_str())?;
        for d in &self.decisions {
            state = state.apply_decision(&d.team, d.action, d.map)?;
        }
        if let Some(team) = &self.requesting_team {
            match state.next_turn() {
                Some((side, _)) if state.team(side) != team => {
                    return Err(Error::Validation(format!(
                        "'{team}' is not on the clock at step {}; {} is",
                        state.step(),
                        state.team(side)
                    )));
                }
                None if state.side_of(team).is_none() => {
                    return Err(Error::Validation(format!("'{team}' is not in this draft")));
                }
                _ => {}
            }
        }
        Ok(state)
    }

    /// The same draft with one more decision; `self` is left as it was.
    pub fn with_decision(&self, decision: DraftDecision) -> Result<DraftState> {
        let mut next = self.clone();
        next.decisions.push(decision);
        next.requesting_team = None;
        next.replay()?;
        Ok(next)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapProbability {
    pub map: MapId,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub model_id: String,
    pub variant: Variant,
    pub step: usize,
    /// Team on the clock; `None` once the veto is complete.
    pub team: Option<String>,
    pub action: Option<ActionKind>,
    /// Available maps in descending probability.
    pub distribution: Vec<MapProbability>,
    pub mask_applied: bool,
    /// Set when either team has no recorded history.
    pub cold_start: bool,
    pub complete: bool,
    pub decider: Option<MapId>,
}

impl Recommendation {
    pub fn probability(&self, map: MapId) -> Option<f64> {
        self.distribution
            .iter()
            .find(|p| p.map == map)
            .map(|p| p.probability)
    }
}

pub fn recommend(
    policy: &BanditPolicy,
    stats: &StatsBook,
    draft: &DraftState,
    model_id: &str,
) -> Result<Recommendation> {
    let state = draft.replay()?;
    let cold_start = !stats.contains(&draft.team_a) || !stats.contains(&draft.team_b);
    let base = Recommendation {
        model_id: model_id.to_string(),
        variant: policy.variant(),
        step: state.step(),
        team: None,
        action: None,
        distribution: Vec::new(),
        mask_applied: true,
        cold_start,
        complete: false,
        decider: None,
    };
    let Some((side, kind)) = state.next_turn() else {
        return Ok(Recommendation {
            complete: true,
            decider: Some(state.decider()?),
            ..base
        });
    };
    let team = state.team(side);
    let context = stats.context(team, state.team(side.other()), state.available())?;
    let dist: ActionDistribution = policy.distribution_for(&context, kind, true)?;
    let distribution = dist
        .ranked()
        .into_iter()
        .filter(|(m, _)| state.available().contains(*m))
        .map(|(map, probability)| MapProbability { map, probability })
        .collect();
    Ok(Recommendation {
        team: Some(team.to_string()),
        action: Some(kind),
        distribution,
        ..base
    })
}
