//! Pick and ban rewards.
//!
//! Only the two chosen picks are rewarded; the decider is forced and never
//! produces a decision record. Bans are rewarded by the match outcome,
//! halved for every later ban in the veto.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{ActionKind, GameResult, MapId, MatchRecord, Side, N_DECISIONS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    ZeroOne,
    MarginOfRounds,
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardKind::ZeroOne => "zero-one",
            RewardKind::MarginOfRounds => "mor",
        })
    }
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zero-one" | "0/1" | "zeroone" | "01" => Ok(RewardKind::ZeroOne),
            "mor" | "margin-of-rounds" | "margin" => Ok(RewardKind::MarginOfRounds),
            other => Err(Error::Validation(format!("unknown reward kind '{other}'"))),
        }
    }
}

pub fn pick_reward_zero_one(game: &GameResult, side: Side) -> f64 {
    if game.winner() == side {
        1.0
    } else {
        0.0
    }
}

/// Round margin over total rounds played on the map, in [-1, 1].
pub fn pick_reward_mor(game: &GameResult, side: Side) -> Result<f64> {
    let total = game.total_rounds();
    if total == 0 {
        return Err(Error::Validation(format!(
            "{}: zero rounds played",
            game.map
        )));
    }
    let own = f64::from(game.rounds(side));
    let other = f64::from(game.rounds(side.other()));
    Ok((own - other) / f64::from(total))
}

pub fn pick_reward(game: &GameResult, side: Side, kind: RewardKind) -> Result<f64> {
    match kind {
        RewardKind::ZeroOne => Ok(pick_reward_zero_one(game, side)),
        RewardKind::MarginOfRounds => pick_reward_mor(game, side),
    }
}

/// `±2^-n` for the n-th ban of the veto (n counts both teams' bans).
pub fn ban_reward(match_won: bool, ban_index: u8) -> Result<f64> {
    if !(1..=4).contains(&ban_index) {
        return Err(Error::Validation(format!(
            "ban index {ban_index} outside 1..=4"
        )));
    }
    let magnitude = 0.5f64.powi(i32::from(ban_index));
    Ok(if match_won { magnitude } else { -magnitude })
}

/// A veto decision with its reward attached, before a context is built.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardedDecision {
    pub step: usize,
    pub side: Side,
    pub kind: ActionKind,
    pub map: MapId,
    pub ban_index: Option<u8>,
    pub reward: f64,
}

/// Rewards for the six team decisions of a finished match, in veto order.
pub fn assign_rewards(m: &MatchRecord, kind: RewardKind) -> Result<Vec<RewardedDecision>> {
    let veto = m.veto();
    if !veto.is_complete() {
        return Err(Error::IncompleteVeto { step: veto.step() });
    }
    let mut out = Vec::with_capacity(N_DECISIONS);
    let mut bans_seen = 0u8;
    for (step, d) in veto.decisions().iter().enumerate() {
        let side = m.side_of(&d.team)?;
        let (reward, ban_index) = match d.kind {
            ActionKind::Pick => {
                let game = m.game_on(d.map).ok_or_else(|| {
                    Error::Validation(format!(
                        "{}: no result for picked map {}",
                        m.match_id, d.map
                    ))
                })?;
                (pick_reward(game, side, kind)?, None)
            }
            ActionKind::Ban => {
                bans_seen += 1;
                let won = m.winner_side() == side;
                (ban_reward(won, bans_seen)?, Some(bans_seen))
            }
        };
        out.push(RewardedDecision {
            step,
            side,
            kind: d.kind,
            map: d.map,
            ban_index,
            reward,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{VetoState, SCHEDULE};
    use chrono::{DateTime, Utc};

    fn map(name: &str) -> MapId {
        name.parse().unwrap()
    }

    fn game(a: u32, b: u32) -> GameResult {
        GameResult::new(map("nuke"), a, b).unwrap()
    }

    fn build_match(games: &[(&str, u32, u32)], winner: &str) -> MatchRecord {
        let seq = ["dust2", "vertigo", "mirage", "nuke", "overpass", "inferno"];
        let mut veto = VetoState::new("A", "B").unwrap();
        for (i, m) in seq.iter().enumerate() {
            let (side, kind) = SCHEDULE[i];
            let team = veto.team(side).to_string();
            veto = veto.apply_decision(&team, kind, map(m)).unwrap();
        }
        let games = games
            .iter()
            .map(|(m, a, b)| GameResult::new(map(m), *a, *b).unwrap())
            .collect();
        MatchRecord::new(
            "x",
            DateTime::<Utc>::from_timestamp(0, 0).unwrap(),
            veto,
            games,
            winner,
        )
        .unwrap()
    }

    #[test]
    fn zero_one_pick_reward() {
        assert_eq!(pick_reward_zero_one(&game(16, 14), Side::A), 1.0);
        assert_eq!(pick_reward_zero_one(&game(5, 16), Side::A), 0.0);
    }

    #[test]
    fn margin_pick_reward() {
        assert!((pick_reward_mor(&game(16, 14), Side::A).unwrap() - 2.0 / 30.0).abs() < 1e-12);
        assert_eq!(pick_reward_mor(&game(16, 0), Side::A).unwrap(), 1.0);
        assert!((pick_reward_mor(&game(14, 16), Side::A).unwrap() + 2.0 / 30.0).abs() < 1e-12);
        // antisymmetric between the two teams
        let g = game(19, 22);
        assert_eq!(
            pick_reward_mor(&g, Side::A).unwrap(),
            -pick_reward_mor(&g, Side::B).unwrap()
        );
    }

    #[test]
    fn ban_reward_decays() {
        assert_eq!(ban_reward(true, 1).unwrap(), 0.5);
        assert_eq!(ban_reward(false, 2).unwrap(), -0.25);
        assert_eq!(ban_reward(true, 4).unwrap(), 0.0625);
        assert!(ban_reward(true, 0).is_err());
        assert!(ban_reward(true, 5).is_err());
    }

    #[test]
    fn assign_rewards_composes_pick_and_ban_rules() {
        // A won its pick (mirage), B lost its pick (nuke), A won the match
        let m = build_match(&[("mirage", 16, 10), ("nuke", 16, 12)], "A");
        let r = assign_rewards(&m, RewardKind::ZeroOne).unwrap();
        assert_eq!(r.len(), 6);
        let rewards: Vec<f64> = r.iter().map(|d| d.reward).collect();
        assert_eq!(rewards, vec![0.5, -0.25, 1.0, 0.0, 0.125, -0.0625]);

        // a decider game changes nothing about the records
        let m = build_match(
            &[("mirage", 16, 10), ("nuke", 12, 16), ("train", 16, 14)],
            "A",
        );
        let r = assign_rewards(&m, RewardKind::ZeroOne).unwrap();
        assert_eq!(r.len(), 6);
        assert_eq!(r.iter().filter(|d| d.kind == ActionKind::Pick).count(), 2);
        assert!(r.iter().all(|d| d.map != map("train")));
        assert_eq!(r[3].reward, 1.0);
    }

    #[test]
    fn assign_rewards_two_games() {
        let m = build_match(&[("mirage", 3, 16), ("nuke", 14, 16)], "B");
        let r = assign_rewards(&m, RewardKind::MarginOfRounds).unwrap();
        assert_eq!(r.len(), 6);
        assert_eq!(r[3].kind, ActionKind::Pick);
        assert!((r[3].reward - 2.0 / 30.0).abs() < 1e-12);
        assert!((r[2].reward + 13.0 / 19.0).abs() < 1e-12);
        let bans: Vec<_> = r
            .iter()
            .filter_map(|d| d.ban_index.map(|n| (n, d.reward)))
            .collect();
        assert_eq!(bans, vec![(1, -0.5), (2, 0.25), (3, -0.125), (4, 0.0625)]);
    }
}
