//! Maps, the best-of-three veto state machine and match/decision records.
//!
//! The veto for a best-of-three match over a seven-map pool runs
//! Ban(A), Ban(B), Pick(A), Pick(B), Ban(A), Ban(B); the one map left over is
//! the decider. Team A is whichever team the log lists first.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ContextVector;

/// Number of maps in the pool (the bandit's arm count).
pub const N_MAPS: usize = 7;

/// Number of team decisions in a veto; the decider follows them.
pub const N_DECISIONS: usize = 6;

pub const MAP_NAMES: [&str; N_MAPS] = [
    "dust2", "inferno", "mirage", "nuke", "overpass", "train", "vertigo",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MapId(u8);

impl MapId {
    pub const ALL: [MapId; N_MAPS] = [
        MapId(0),
        MapId(1),
        MapId(2),
        MapId(3),
        MapId(4),
        MapId(5),
        MapId(6),
    ];

    pub fn new(index: usize) -> Result<Self> {
        if index < N_MAPS {
            Ok(MapId(index as u8))
        } else {
            Err(Error::UnsupportedMap(format!("map index {index}")))
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        MAP_NAMES[self.index()]
    }
}

impl fmt::Display for MapId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MapId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let lower = lower.strip_prefix("de_").unwrap_or(&lower);
        MAP_NAMES
            .iter()
            .position(|n| *n == lower)
            .map(|i| MapId(i as u8))
            .ok_or_else(|| Error::UnsupportedMap(s.to_string()))
    }
}

impl Serialize for MapId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for MapId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Subset of the map pool, stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MapSet(u8);

impl MapSet {
    pub const FULL: MapSet = MapSet((1 << N_MAPS) - 1);
    pub const EMPTY: MapSet = MapSet(0);

    pub fn from_bits(bits: u8) -> Self {
        MapSet(bits & Self::FULL.0)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, map: MapId) -> bool {
        self.0 & (1 << map.0) != 0
    }

    pub fn insert(&mut self, map: MapId) {
        self.0 |= 1 << map.0;
    }

    pub fn without(self, map: MapId) -> Self {
        MapSet(self.0 & !(1 << map.0))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = MapId> {
        MapId::ALL.into_iter().filter(move |m| self.contains(*m))
    }

    pub fn flags(self) -> [bool; N_MAPS] {
        std::array::from_fn(|i| self.0 & (1 << i) != 0)
    }
}

impl Serialize for MapSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for MapSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Vec::<MapId>::deserialize(d)?.into_iter().collect())
    }
}

impl FromIterator<MapId> for MapSet {
    fn from_iter<I: IntoIterator<Item = MapId>>(iter: I) -> Self {
        let mut set = MapSet::EMPTY;
        for m in iter {
            set.insert(m);
        }
        set
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Pick,
    Ban,
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionKind::Pick => "pick",
            ActionKind::Ban => "ban",
        })
    }
}

impl FromStr for ActionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pick" => Ok(ActionKind::Pick),
            "ban" => Ok(ActionKind::Ban),
            other => Err(Error::Validation(format!("unknown action '{other}'"))),
        }
    }
}

/// Which seat a team occupies in the veto. `A` bans first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

/// The fixed turn order of a best-of-three veto.
pub const SCHEDULE: [(Side, ActionKind); N_DECISIONS] = [
    (Side::A, ActionKind::Ban),
    (Side::B, ActionKind::Ban),
    (Side::A, ActionKind::Pick),
    (Side::B, ActionKind::Pick),
    (Side::A, ActionKind::Ban),
    (Side::B, ActionKind::Ban),
];

/// Global ban ordinal (1..=4) for a veto step, `None` for pick steps.
pub fn ban_index_for_step(step: usize) -> Option<u8> {
    match step {
        0 => Some(1),
        1 => Some(2),
        4 => Some(3),
        5 => Some(4),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VetoDecision {
    pub team: String,
    pub kind: ActionKind,
    pub map: MapId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VetoState {
    team_a: String,
    team_b: String,
    available: MapSet,
    decisions: Vec<VetoDecision>,
}

impl VetoState {
    pub fn new(team_a: impl Into<String>, team_b: impl Into<String>) -> Result<Self> {
        let (team_a, team_b) = (team_a.into(), team_b.into());
        if team_a == team_b {
            return Err(Error::Validation(format!(
                "veto needs two distinct teams, got '{team_a}' twice"
            )));
        }
        if team_a.is_empty() || team_b.is_empty() {
            return Err(Error::Validation("team id must not be empty".into()));
        }
        Ok(VetoState {
            team_a,
            team_b,
            available: MapSet::FULL,
            decisions: Vec::with_capacity(N_DECISIONS),
        })
    }

    pub fn team_a(&self) -> &str {
        &self.team_a
    }

    pub fn team_b(&self) -> &str {
        &self.team_b
    }

    pub fn team(&self, side: Side) -> &str {
        match side {
            Side::A => &self.team_a,
            Side::B => &self.team_b,
        }
    }

    pub fn side_of(&self, team: &str) -> Option<Side> {
        if team == self.team_a {
            Some(Side::A)
        } else if team == self.team_b {
            Some(Side::B)
        } else {
            None
        }
    }

    pub fn available(&self) -> MapSet {
        self.available
    }

    pub fn decisions(&self) -> &[VetoDecision] {
        &self.decisions
    }

    pub fn step(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_complete(&self) -> bool {
        self.step() == N_DECISIONS
    }

    /// Seat and action kind due at the current step, `None` once complete.
    pub fn next_turn(&self) -> Option<(Side, ActionKind)> {
        SCHEDULE.get(self.step()).copied()
    }

    pub fn apply_decision(&self, team: &str, kind: ActionKind, map: MapId) -> Result<VetoState> {
        let step = self.step();
        let (side, expected_kind) = self.next_turn().ok_or(Error::VetoComplete)?;
        let expected_team = self.team(side);
        if team != expected_team || kind != expected_kind {
            return Err(Error::TurnOrder {
                step,
                expected_team: expected_team.to_string(),
                expected_kind,
                team: team.to_string(),
                kind,
            });
        }
        if !self.available.contains(map) {
            return Err(Error::UnavailableMap { map, step });
        }
        let mut next = self.clone();
        next.available = next.available.without(map);
        next.decisions.push(VetoDecision {
            team: team.to_string(),
            kind,
            map,
        });
        Ok(next)
    }

    /// The map left once all six decisions are made.
    pub fn decider(&self) -> Result<MapId> {
        if !self.is_complete() {
            return Err(Error::IncompleteVeto { step: self.step() });
        }
        self.available.iter().next().ok_or(Error::EmptyMask)
    }

    /// The two picked maps, in pick order (A's then B's).
    pub fn picks(&self) -> Vec<MapId> {
        self.decisions
            .iter()
            .filter(|d| d.kind == ActionKind::Pick)
            .map(|d| d.map)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GameResult {
    pub map: MapId,
    pub rounds_a: u32,
    pub rounds_b: u32,
    winner: Side,
}

impl GameResult {
    /// Validates a map score. Regulation is first to 16; overtime totals are
    /// accepted as logged.
    pub fn new(map: MapId, rounds_a: u32, rounds_b: u32) -> Result<Self> {
        if rounds_a == rounds_b {
            return Err(Error::Validation(format!(
                "{map}: drawn score {rounds_a}-{rounds_b}"
            )));
        }
        if rounds_a + rounds_b < 16 {
            return Err(Error::Validation(format!(
                "{map}: score {rounds_a}-{rounds_b} has fewer than 16 rounds"
            )));
        }
        let winner = if rounds_a > rounds_b {
            Side::A
        } else {
            Side::B
        };
        Ok(GameResult {
            map,
            rounds_a,
            rounds_b,
            winner,
        })
    }

    pub fn winner(&self) -> Side {
        self.winner
    }

    pub fn rounds(&self, side: Side) -> u32 {
        match side {
            Side::A => self.rounds_a,
            Side::B => self.rounds_b,
        }
    }

    pub fn total_rounds(&self) -> u32 {
        self.rounds_a + self.rounds_b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchRecord {
    pub match_id: String,
    pub date: DateTime<Utc>,
    veto: VetoState,
    games: Vec<GameResult>,
    winner: Side,
    /// Behavior-policy probabilities of each logged veto action, when the
    /// log carries them (simulator output does).
    propensities: Option<[f64; N_DECISIONS]>,
}

impl MatchRecord {
    pub fn new(
        match_id: impl Into<String>,
        date: DateTime<Utc>,
        veto: VetoState,
        games: Vec<GameResult>,
        match_winner: &str,
    ) -> Result<Self> {
        let match_id = match_id.into();
        let decider = veto.decider()?;
        let picks = veto.picks();
        if !(2..=3).contains(&games.len()) {
            return Err(Error::Validation(format!(
                "{match_id}: best-of-three needs 2 or 3 games, got {}",
                games.len()
            )));
        }
        let expected_maps = [picks[0], picks[1], decider];
        for (i, g) in games.iter().enumerate() {
            if g.map != expected_maps[i] {
                return Err(Error::Validation(format!(
                    "{match_id}: game {} played on {} but the veto fixed {}",
                    i + 1,
                    g.map,
                    expected_maps[i]
                )));
            }
        }
        let wins_a = games.iter().filter(|g| g.winner == Side::A).count();
        let wins_b = games.len() - wins_a;
        let computed = match (wins_a, wins_b) {
            (2, 0) | (2, 1) => Side::A,
            (0, 2) | (1, 2) => Side::B,
            _ => {
                return Err(Error::Validation(format!(
                    "{match_id}: game results {wins_a}-{wins_b} do not decide a best-of-three"
                )))
            }
        };
        if games.len() == 3 && games[0].winner == games[1].winner {
            return Err(Error::Validation(format!(
                "{match_id}: decider played after a 2-0"
            )));
        }
        let stated = veto.side_of(match_winner).ok_or_else(|| {
            Error::Validation(format!(
                "{match_id}: winner '{match_winner}' did not play this match"
            ))
        })?;
        if stated != computed {
            return Err(Error::Validation(format!(
                "{match_id}: stated winner '{match_winner}' disagrees with game results"
            )));
        }
        Ok(MatchRecord {
            match_id,
            date,
            veto,
            games,
            winner: computed,
            propensities: None,
        })
    }

    pub fn with_propensities(mut self, propensities: [f64; N_DECISIONS]) -> Result<Self> {
        if propensities.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::Validation(format!(
                "{}: propensities must lie in (0, 1]",
                self.match_id
            )));
        }
        self.propensities = Some(propensities);
        Ok(self)
    }

    pub fn veto(&self) -> &VetoState {
        &self.veto
    }

    pub fn games(&self) -> &[GameResult] {
        &self.games
    }

    pub fn winner_side(&self) -> Side {
        self.winner
    }

    pub fn winner(&self) -> &str {
        self.veto.team(self.winner)
    }

    pub fn team_a(&self) -> &str {
        self.veto.team_a()
    }

    pub fn team_b(&self) -> &str {
        self.veto.team_b()
    }

    pub fn propensities(&self) -> Option<&[f64; N_DECISIONS]> {
        self.propensities.as_ref()
    }

    pub fn side_of(&self, team: &str) -> Result<Side> {
        self.veto.side_of(team).ok_or_else(|| {
            Error::Validation(format!("team '{team}' did not play {}", self.match_id))
        })
    }

    pub fn game_on(&self, map: MapId) -> Option<&GameResult> {
        self.games.iter().find(|g| g.map == map)
    }
}

/// One logged veto decision: the unit of training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub context: ContextVector,
    pub action: MapId,
    pub kind: ActionKind,
    pub ban_index: Option<u8>,
    pub reward: Option<f64>,
    pub behavior_propensity: Option<f64>,
    pub team: String,
    pub opponent: String,
    pub match_id: String,
    pub step: usize,
}

impl DecisionRecord {
    pub fn reward(&self) -> Result<f64> {
        self.reward
            .ok_or_else(|| Error::MissingReward(self.match_id.clone()))
    }

    pub fn propensity(&self) -> Result<f64> {
        self.behavior_propensity
            .ok_or_else(|| Error::MissingPropensity(self.match_id.clone()))
    }

    pub fn available(&self) -> MapSet {
        self.context.available()
    }
}
