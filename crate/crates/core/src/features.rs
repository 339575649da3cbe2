//! Context construction: running team statistics, the 23-wide context vector
//! and the block one-hot action-feature map.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{MapId, MapSet, MatchRecord, N_MAPS};
use crate::error::{Error, Result};

/// Width of the context vector: 7 availability flags plus
/// (match win% + 7 map win%) for the deciding team and the opponent.
pub const CONTEXT_DIM: usize = N_MAPS + 2 * (1 + N_MAPS);

const DECIDER_MATCH: usize = N_MAPS;
const DECIDER_MAPS: usize = N_MAPS + 1;
const OPPONENT_MATCH: usize = 2 * N_MAPS + 1;
const OPPONENT_MAPS: usize = 2 * N_MAPS + 2;

/// Laplace-smoothed win rate `(wins + 5) / (matches + 10)`.
pub fn smoothed_win_rate(wins: u32, matches: u32) -> Result<f64> {
    if wins > matches {
        return Err(Error::Validation(format!(
            "{wins} wins out of {matches} matches"
        )));
    }
    Ok((f64::from(wins) + 5.0) / (f64::from(matches) + 10.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamRecord {
    pub match_wins: u32,
    pub match_count: u32,
    pub map_wins: [u32; N_MAPS],
    pub map_count: [u32; N_MAPS],
}

impl TeamRecord {
    pub fn match_win_rate(&self) -> f64 {
        smoothed_win_rate(self.match_wins, self.match_count).expect("wins never exceed counts")
    }

    pub fn map_win_rate(&self, map: MapId) -> f64 {
        let i = map.index();
        smoothed_win_rate(self.map_wins[i], self.map_count[i]).expect("wins never exceed counts")
    }

    fn check(&self) -> Result<()> {
        let maps_ok = (0..N_MAPS).all(|i| self.map_wins[i] <= self.map_count[i]);
        if self.match_wins > self.match_count || !maps_ok {
            return Err(Error::Validation(
                "team record has more wins than games".into(),
            ));
        }
        Ok(())
    }
}

/// Folds one finished match into a team's running record.
pub fn update_team_stats(record: &TeamRecord, m: &MatchRecord, team: &str) -> Result<TeamRecord> {
    record.check()?;
    let side = m.side_of(team)?;
    let mut next = *record;
    next.match_count += 1;
    if m.winner_side() == side {
        next.match_wins += 1;
    }
    for g in m.games() {
        let i = g.map.index();
        next.map_count[i] += 1;
        if g.winner() == side {
            next.map_wins[i] += 1;
        }
    }
    Ok(next)
}

/// Team records keyed by team id; unknown teams read as an empty history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsBook {
    teams: BTreeMap<String, TeamRecord>,
}

impl StatsBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, team: &str) -> TeamRecord {
        self.teams.get(team).copied().unwrap_or_default()
    }

    pub fn contains(&self, team: &str) -> bool {
        self.teams.contains_key(team)
    }

    pub fn len(&self) -> usize {
        self.teams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.teams.is_empty()
    }

    pub fn record_match(&mut self, m: &MatchRecord) -> Result<()> {
        for team in [m.team_a(), m.team_b()] {
            let updated = update_team_stats(&self.get(team), m, team)?;
            self.teams.insert(team.to_string(), updated);
        }
        Ok(())
    }

    pub fn context(
        &self,
        decider: &str,
        opponent: &str,
        available: MapSet,
    ) -> Result<ContextVector> {
        build_context(&self.get(decider), &self.get(opponent), available)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ContextVector {
    values: [f64; CONTEXT_DIM],
}

impl ContextVector {
    pub fn from_values(values: [f64; CONTEXT_DIM]) -> Result<Self> {
        if values[..N_MAPS].iter().any(|f| *f != 0.0 && *f != 1.0) {
            return Err(Error::Validation(
                "availability flags must be 0 or 1".into(),
            ));
        }
        if values[N_MAPS..].iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::Validation(
                "win rates must lie strictly inside (0, 1)".into(),
            ));
        }
        Ok(ContextVector { values })
    }

    pub fn values(&self) -> &[f64; CONTEXT_DIM] {
        &self.values
    }

    pub fn available(&self) -> MapSet {
        MapId::ALL
            .into_iter()
            .filter(|m| self.values[m.index()] == 1.0)
            .collect()
    }

    pub fn decider_match_rate(&self) -> f64 {
        self.values[DECIDER_MATCH]
    }

    pub fn decider_map_rate(&self, map: MapId) -> f64 {
        self.values[DECIDER_MAPS + map.index()]
    }

    pub fn opponent_match_rate(&self) -> f64 {
        self.values[OPPONENT_MATCH]
    }

    pub fn opponent_map_rate(&self, map: MapId) -> f64 {
        self.values[OPPONENT_MAPS + map.index()]
    }

    /// Same statistics with a different availability mask.
    pub fn with_available(&self, available: MapSet) -> Result<Self> {
        if available.is_empty() {
            return Err(Error::EmptyMask);
        }
        let mut values = self.values;
        for (i, flag) in available.flags().into_iter().enumerate() {
            values[i] = if flag { 1.0 } else { 0.0 };
        }
        Ok(ContextVector { values })
    }
}

impl TryFrom<Vec<f64>> for ContextVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        let values: [f64; CONTEXT_DIM] = v.try_into().map_err(|v: Vec<f64>| {
            Error::Validation(format!(
                "context needs {CONTEXT_DIM} entries, got {}",
                v.len()
            ))
        })?;
        ContextVector::from_values(values)
    }
}

impl From<ContextVector> for Vec<f64> {
    fn from(c: ContextVector) -> Self {
        c.values.to_vec()
    }
}

pub fn build_context(
    decider: &TeamRecord,
    opponent: &TeamRecord,
    available: MapSet,
) -> Result<ContextVector> {
    if available.is_empty() {
        return Err(Error::EmptyMask);
    }
    decider.check()?;
    opponent.check()?;
    let mut values = [0.0; CONTEXT_DIM];
    for m in available.iter() {
        values[m.index()] = 1.0;
    }
    values[DECIDER_MATCH] = decider.match_win_rate();
    values[OPPONENT_MATCH] = opponent.match_win_rate();
    for m in MapId::ALL {
        values[DECIDER_MAPS + m.index()] = decider.map_win_rate(m);
        values[OPPONENT_MAPS + m.index()] = opponent.map_win_rate(m);
    }
    Ok(ContextVector { values })
}

/// Dense φ(x, a): zeros except one context-wide block.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dot(&self, theta: &[f64]) -> f64 {
        self.values.iter().zip(theta).map(|(a, b)| a * b).sum()
    }
}

pub fn feature_map(
    context: &ContextVector,
    action: MapId,
    blocks: usize,
    block_offset: usize,
) -> Result<FeatureVector> {
    if !matches!((blocks, block_offset), (7, 0) | (14, 0) | (14, 7)) {
        return Err(Error::Validation(format!(
            "block offset {block_offset} is not valid for a {blocks}-block layout"
        )));
    }
    let block = block_offset + action.index();
    let mut values = vec![0.0; blocks * CONTEXT_DIM];
    values[block * CONTEXT_DIM..(block + 1) * CONTEXT_DIM].copy_from_slice(&context.values);
    Ok(FeatureVector { values })
}
