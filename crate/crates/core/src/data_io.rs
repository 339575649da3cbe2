//! Match-log ingestion, dataset filtering, the train/test split and the
//! decision dataset.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Read, Write};

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    ActionKind, DecisionRecord, GameResult, MapId, MatchRecord, VetoState, N_DECISIONS,
};
use crate::error::{Error, Result};
use crate::features::{ContextVector, StatsBook, CONTEXT_DIM};
use crate::rewards::{assign_rewards, RewardKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VetoEntry {
    pub team: String,
    pub action: String,
    pub map: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propensity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameEntry {
    pub map: String,
    pub rounds_a: u32,
    pub rounds_b: u32,
}

/// One line of the JSON-lines match log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchLogLine {
    pub match_id: String,
    pub date: String,
    pub team_a: String,
    pub team_b: String,
    pub veto: Vec<VetoEntry>,
    pub games: Vec<GameEntry>,
    pub winner: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    /// 1-based line number in the input.
    pub line: usize,
    pub kind: String,
    pub reason: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedLog {
    pub matches: Vec<MatchRecord>,
    pub errors: Vec<LineError>,
}

pub fn parse_date(s: &str) -> Result<DateTime<Utc>> {
    if let Ok(d) = DateTime::parse_from_rfc3339(s) {
        return Ok(d.with_timezone(&Utc));
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc());
    }
    Err(Error::Validation(format!("unparseable date '{s}'")))
}

fn pool_map(name: &str) -> Result<MapId> {
    name.parse()
        .map_err(|_| Error::UnsupportedMap(format!("map '{name}' is outside the seven-map pool")))
}

impl MatchLogLine {
    pub fn to_record(&self) -> Result<MatchRecord> {
        if self.veto.len() != N_DECISIONS {
            return Err(Error::UnsupportedMap(format!(
                "veto has {} entries; only the six-decision seven-map format is supported",
                self.veto.len()
            )));
        }
        let maps = self
            .veto
            .iter()
            .map(|e| pool_map(&e.map))
            .collect::<Result<Vec<_>>>()?;
        let date = parse_date(&self.date)?;
        let mut veto = VetoState::new(self.team_a.clone(), self.team_b.clone())?;
        for (entry, map) in self.veto.iter().zip(maps) {
            let kind: ActionKind = entry.action.parse()?;
            veto = veto.apply_decision(&entry.team, kind, map)?;
        }
        let games = self
            .games
            .iter()
            .map(|g| GameResult::new(pool_map(&g.map)?, g.rounds_a, g.rounds_b))
            .collect::<Result<Vec<_>>>()?;
        let record = MatchRecord::new(self.match_id.clone(), date, veto, games, &self.winner)?;
        let given: Vec<f64> = self.veto.iter().filter_map(|e| e.propensity).collect();
        match given.len() {
            0 => Ok(record),
            N_DECISIONS => {
                let mut p = [0.0; N_DECISIONS];
                p.copy_from_slice(&given);
                record.with_propensities(p)
            }
            n => Err(Error::Validation(format!(
                "{}: {n} of 6 veto entries carry a propensity",
                self.match_id
            ))),
        }
    }

    pub fn from_record(m: &MatchRecord) -> Self {
        let props = m.propensities();
        MatchLogLine {
            match_id: m.match_id.clone(),
            date: m.date.to_rfc3339_opts(SecondsFormat::AutoSi, true),
            team_a: m.team_a().to_string(),
            team_b: m.team_b().to_string(),
            veto: m
                .veto()
                .decisions()
                .iter()
                .enumerate()
                .map(|(i, d)| VetoEntry {
                    team: d.team.clone(),
                    action: d.kind.to_string(),
                    map: d.map.name().to_string(),
                    propensity: props.map(|p| p[i]),
                })
                .collect(),
            games: m
                .games()
                .iter()
                .map(|g| GameEntry {
                    map: g.map.name().to_string(),
                    rounds_a: g.rounds_a,
                    rounds_b: g.rounds_b,
                })
                .collect(),
            winner: m.winner().to_string(),
        }
    }
}

/// Parses one log line into a match.
pub fn parse_line(line: &str) -> Result<MatchRecord> {
    let parsed: MatchLogLine = serde_json::from_str(line)?;
    parsed.to_record()
}

/// Parses a JSON-lines log. Bad lines are collected, never fatal; only a
/// stream that cannot be read (or is not UTF-8) fails the call.
pub fn parse_match_log<R: BufRead>(reader: R) -> Result<ParsedLog> {
    let lines = reader.lines().collect::<std::io::Result<Vec<String>>>()?;
    let results: Vec<(usize, Result<MatchRecord>)> = lines
        .par_iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, parse_line(l)))
        .collect();
    let mut out = ParsedLog::default();
    for (line, r) in results {
        match r {
            Ok(m) => out.matches.push(m),
            Err(e) => out.errors.push(LineError {
                line,
                kind: e.kind().to_string(),
                step: e.step(),
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

pub fn parse_match_log_bytes(bytes: &[u8]) -> Result<ParsedLog> {
    parse_match_log(bytes)
}

pub fn read_match_log<R: Read>(reader: R) -> Result<ParsedLog> {
    parse_match_log(std::io::BufReader::new(reader))
}

pub fn write_match_log<W: Write>(mut out: W, matches: &[MatchRecord]) -> Result<()> {
    for m in matches {
        serde_json::to_writer(&mut out, &MatchLogLine::from_record(m))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub const MIN_GAMES: u32 = 25;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_matches: usize,
    pub input_teams: usize,
    pub removed_duplicate_matches: usize,
    /// Matches dropped because a participant fell below the games threshold.
    pub removed_low_activity_matches: usize,
    pub removed_teams: usize,
    pub retained_matches: usize,
    pub retained_teams: usize,
    pub retained_games: usize,
    pub iterations: usize,
    pub min_games: u32,
}

impl FilterReport {
    pub fn reconciles(&self) -> bool {
        self.input_matches
            == self.retained_matches
                + self.removed_duplicate_matches
                + self.removed_low_activity_matches
            && self.input_teams == self.retained_teams + self.removed_teams
    }
}

/// Games (maps) each team played, counting only matches where both teams are
/// in `teams`.
pub fn games_within(matches: &[MatchRecord], teams: &BTreeSet<&str>) -> BTreeMap<String, u32> {
    let mut out: BTreeMap<String, u32> = teams.iter().map(|t| (t.to_string(), 0)).collect();
    for m in matches {
        if teams.contains(m.team_a()) && teams.contains(m.team_b()) {
            let g = m.games().len() as u32;
            *out.get_mut(m.team_a()).expect("team in set") += g;
            *out.get_mut(m.team_b()).expect("team in set") += g;
        }
    }
    out
}

/// Drops repeated match ids (keeping the first), then removes teams with fewer
/// than `min_games` games against the remaining teams until nothing changes.
///
/// Parsed records are already best-of-three on the seven-map pool.
pub fn filter_dataset(
    matches: Vec<MatchRecord>,
    min_games: u32,
) -> (Vec<MatchRecord>, FilterReport) {
    let mut report = FilterReport {
        input_matches: matches.len(),
        min_games,
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let unique: Vec<MatchRecord> = matches
        .into_iter()
        .filter(|m| seen.insert(m.match_id.clone()))
        .collect();
    report.removed_duplicate_matches = report.input_matches - unique.len();

    let all_teams: BTreeSet<String> = unique
        .iter()
        .flat_map(|m| [m.team_a().to_string(), m.team_b().to_string()])
        .collect();
    report.input_teams = all_teams.len();
    let mut retained: BTreeSet<&str> = all_teams.iter().map(String::as_str).collect();
    loop {
        let counts = games_within(&unique, &retained);
        let drop: Vec<&str> = retained
            .iter()
            .copied()
            .filter(|t| counts[*t] < min_games)
            .collect();
        if drop.is_empty() {
            break;
        }
        report.iterations += 1;
        for t in drop {
            retained.remove(t);
        }
    }
    let kept: Vec<MatchRecord> = unique
        .iter()
        .filter(|m| retained.contains(m.team_a()) && retained.contains(m.team_b()))
        .cloned()
        .collect();
    report.removed_low_activity_matches = unique.len() - kept.len();
    report.retained_teams = retained.len();
    report.removed_teams = report.input_teams - report.retained_teams;
    report.retained_matches = kept.len();
    report.retained_games = kept.iter().map(|m| m.games().len()).sum();
    if kept.is_empty() {
        log::warn!("filtering left no matches (threshold {min_games} games)");
    }
    (kept, report)
}

pub fn sort_chronologically(matches: &mut [MatchRecord]) {
    matches.sort_by(|a, b| {
        a.date
            .cmp(&b.date)
            .then_with(|| a.match_id.cmp(&b.match_id))
    });
}

fn test_count(n: usize, fraction: f64) -> Result<usize> {
    if n < 5 {
        return Err(Error::Validation(format!(
            "need at least 5 matches to split, got {n}"
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Validation(format!(
            "test fraction {fraction} outside (0, 1)"
        )));
    }
    Ok(((fraction * n as f64) - 1e-9).ceil() as usize)
}

/// The last `⌈fraction·N⌉` matches by (date, match_id) form the test set.
pub fn chronological_split(
    mut matches: Vec<MatchRecord>,
    test_fraction: f64,
) -> Result<(Vec<MatchRecord>, Vec<MatchRecord>)> {
    let n_test = test_count(matches.len(), test_fraction)?;
    sort_chronologically(&mut matches);
    let test = matches.split_off(matches.len() - n_test);
    Ok((matches, test))
}

/// Seeded random assignment of matches to the test set; both halves come
/// back in chronological order.
pub fn random_split(
    mut matches: Vec<MatchRecord>,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<MatchRecord>, Vec<MatchRecord>)> {
    let n_test = test_count(matches.len(), test_fraction)?;
    sort_chronologically(&mut matches);
    let mut order: Vec<usize> = (0..matches.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_idx: HashSet<usize> = order[..n_test].iter().copied().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, m) in matches.into_iter().enumerate() {
        if test_idx.contains(&i) {
            test.push(m);
        } else {
            train.push(m);
        }
    }
    Ok((train, test))
}

/// How team statistics evolve while the dataset is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsMode {
    /// Every match updates the statistics after its decisions are emitted.
    #[default]
    Running,
    /// Statistics stop changing after the first `n` matches.
    FrozenAfter(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionDataset {
    pub records: Vec<DecisionRecord>,
    /// Statistics after the last match that was allowed to update them.
    pub stats: StatsBook,
}

/// Six records per match, each context built from strictly earlier matches.
pub fn build_decision_dataset(
    matches: &[MatchRecord],
    reward_kind: RewardKind,
    mode: StatsMode,
) -> Result<DecisionDataset> {
    let mut stats = StatsBook::new();
    let mut records = Vec::with_capacity(matches.len() * N_DECISIONS);
    for (i, m) in matches.iter().enumerate() {
        if i > 0 && m.date < matches[i - 1].date {
            return Err(Error::Unordered(format!(
                "match {} is dated before match {}",
                m.match_id,
                matches[i - 1].match_id
            )));
        }
        records.extend(match_decisions(m, &stats, reward_kind)?);
        let update = match mode {
            StatsMode::Running => true,
            StatsMode::FrozenAfter(n) => i < n,
        };
        if update {
            stats.record_match(m)?;
        }
    }
    Ok(DecisionDataset { records, stats })
}

/// The six decision records of one match under the given statistics.
pub fn match_decisions(
    m: &MatchRecord,
    stats: &StatsBook,
    reward_kind: RewardKind,
) -> Result<Vec<DecisionRecord>> {
    let rewards = assign_rewards(m, reward_kind)?;
    let mut avail = crate::domain::MapSet::FULL;
    let mut out = Vec::with_capacity(N_DECISIONS);
    for (d, r) in m.veto().decisions().iter().zip(rewards) {
        let team = m.veto().team(r.side).to_string();
        let opponent = m.veto().team(r.side.other()).to_string();
        out.push(DecisionRecord {
            context: stats.context(&team, &opponent, avail)?,
            action: d.map,
            kind: d.kind,
            ban_index: r.ban_index,
            reward: Some(r.reward),
            behavior_propensity: m.propensities().map(|p| p[r.step]),
            team,
            opponent,
            match_id: m.match_id.clone(),
            step: r.step,
        });
        avail = avail.without(d.map);
    }
    Ok(out)
}

/// Builds train and test records in one chronological pass over both, so
/// test contexts carry the training history.
pub fn build_split_datasets(
    train: &[MatchRecord],
    test: &[MatchRecord],
    reward_kind: RewardKind,
) -> Result<(Vec<DecisionRecord>, Vec<DecisionRecord>)> {
    let all: Vec<MatchRecord> = train.iter().chain(test).cloned().collect();
    let mut ds = build_decision_dataset(&all, reward_kind, StatsMode::Running)?;
    let test_records = ds.records.split_off(train.len() * N_DECISIONS);
    Ok((ds.records, test_records))
}

const CSV_TAIL: [&str; 9] = [
    "action",
    "kind",
    "ban_index",
    "reward",
    "propensity",
    "match_id",
    "team",
    "opponent",
    "step",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_decisions_csv<W: Write>(out: W, records: &[DecisionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (0..CONTEXT_DIM)
        .map(|i| format!("c{i}"))
        .chain(CSV_TAIL.iter().map(|s| s.to_string()))
        .collect();
    w.write_record(&header)?;
    for r in records {
        let mut row: Vec<String> = r.context.values().iter().map(|v| v.to_string()).collect();
        row.extend([
            r.action.name().to_string(),
            r.kind.to_string(),
            opt(r.ban_index),
            opt(r.reward),
            opt(r.behavior_propensity),
            r.match_id.clone(),
            r.team.clone(),
            r.opponent.clone(),
            r.step.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize, line: u64) -> Result<Option<T>> {
    let s = row.get(i).unwrap_or("").trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| {
        Error::Validation(format!(
            "decision csv row {line}: bad value '{s}' in column {i}"
        ))
    })
}

pub fn read_decisions_csv<R: Read>(input: R) -> Result<Vec<DecisionRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let width = CONTEXT_DIM + CSV_TAIL.len();
    let mut out = Vec::new();
    for (i, row) in rd.records().enumerate() {
        let row = row?;
        let line = i as u64 + 2;
        if row.len() != width {
            return Err(Error::Validation(format!(
                "decision csv row {line}: {} columns, expected {width}",
                row.len()
            )));
        }
        let mut ctx = [0.0; CONTEXT_DIM];
        for (j, c) in ctx.iter_mut().enumerate() {
            *c = field(&row, j, line)?
                .ok_or_else(|| Error::Validation(format!("decision csv row {line}: empty c{j}")))?;
        }
        let required = |v: Option<String>, name: &str| {
            v.ok_or_else(|| Error::Validation(format!("decision csv row {line}: missing {name}")))
        };
        let k = CONTEXT_DIM;
        out.push(DecisionRecord {
            context: ContextVector::from_values(ctx)?,
            action: required(field(&row, k, line)?, "action")?.parse()?,
            kind: required(field(&row, k + 1, line)?, "kind")?.parse()?,
            ban_index: field(&row, k + 2, line)?,
            reward: field(&row, k + 3, line)?,
            behavior_propensity: field(&row, k + 4, line)?,
            match_id: required(field(&row, k + 5, line)?, "match_id")?,
            team: required(field(&row, k + 6, line)?, "team")?,
            opponent: field(&row, k + 7, line)?.unwrap_or_default(),
            step: field(&row, k + 8, line)?.unwrap_or(0),
        });
    }
    Ok(out)
}
