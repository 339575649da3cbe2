//! A synthetic league with latent per-map strengths.
//!
//! Teams veto with a win-rate-greedy softmax, maps are won with logistic
//! probability in the strength gap, and the exact expected reward of every
//! candidate action can be computed. That makes the ground-truth value of any
//! policy on the simulated context distribution available to tests.

use std::collections::HashMap;

use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::match_decisions;
use crate::domain::{
    ActionKind, DecisionRecord, GameResult, MapId, MapSet, MatchRecord, Side, VetoState,
    N_DECISIONS, N_MAPS, SCHEDULE,
};
use crate::error::{Error, Result};
use crate::features::{ContextVector, StatsBook};
use crate::ope::Setting;
use crate::policy::{sample_action, softmax, ActionDistribution, TargetPolicy};
use crate::rewards::{ban_reward, RewardKind};

const DECIDER_MAPS: usize = N_MAPS + 1;
const OPPONENT_MAPS: usize = 2 * N_MAPS + 2;
const ROUNDS_TO_WIN: u32 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcosystemConfig {
    /// Standard deviation of the per-map strengths.
    pub strength_scale: f64,
    /// Behavior temperatures are drawn uniformly from this range.
    pub temperature_range: (f64, f64),
    pub permaban_fraction: f64,
    /// Scales how many rounds the loser of a map takes; 1 lets an even map
    /// end close to 16-15 on average, 0 makes every map a 16-0.
    pub round_closeness: f64,
    /// Matches per season. Team statistics start from scratch each season.
    pub season_length: usize,
}

impl Default for EcosystemConfig {
    fn default() -> Self {
        EcosystemConfig {
            strength_scale: 1.0,
            temperature_range: (0.1, 0.3),
            permaban_fraction: 0.3,
            round_closeness: 0.8,
            season_length: 25_000,
        }
    }
}

impl EcosystemConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.temperature_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Validation(format!(
                "temperature range ({lo}, {hi}) is invalid"
            )));
        }
        if !(self.strength_scale >= 0.0 && self.strength_scale.is_finite()) {
            return Err(Error::Validation(
                "strength scale must be finite and >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.permaban_fraction) {
            return Err(Error::Validation("permaban fraction outside [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.round_closeness) {
            return Err(Error::Validation("round closeness outside [0, 1]".into()));
        }
        if self.season_length == 0 {
            return Err(Error::Validation("season length must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTeam {
    pub id: String,
    pub strengths: [f64; N_MAPS],
    pub temperature: f64,
    pub permaban: Option<MapId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEcosystem {
    pub teams: Vec<SimTeam>,
    pub config: EcosystemConfig,
    pub seed: u64,
}

pub fn generate_ecosystem(n_teams: usize, seed: u64) -> Result<SyntheticEcosystem> {
    generate_ecosystem_with(n_teams, seed, EcosystemConfig::default())
}

pub fn generate_ecosystem_with(
    n_teams: usize,
    seed: u64,
    config: EcosystemConfig,
) -> Result<SyntheticEcosystem> {
    if n_teams < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 teams, got {n_teams}"
        )));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal =
        Normal::new(0.0, config.strength_scale).map_err(|e| Error::Validation(e.to_string()))?;
    let (lo, hi) = config.temperature_range;
    let mut teams: Vec<SimTeam> = (0..n_teams)
        .map(|k| {
            let mut strengths = [0.0; N_MAPS];
            for s in &mut strengths {
                *s = normal.sample(&mut rng);
            }
            let temperature = if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            };
            SimTeam {
                id: format!("team-{k:03}"),
                strengths,
                temperature,
                permaban: None,
            }
        })
        .collect();
    let n_perma = (config.permaban_fraction * n_teams as f64).round() as usize;
    let mut order: Vec<usize> = (0..n_teams).collect();
    order.shuffle(&mut rng);
    for &k in &order[..n_perma] {
        teams[k].permaban = Some(MapId::ALL[rng.random_range(0..N_MAPS)]);
    }
    SyntheticEcosystem::from_teams(teams, config, seed)
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `E[(16 − L)/(16 + L)]` for `L ~ Binomial(15, q)`.
pub fn expected_margin(q: f64) -> f64 {
    let n = ROUNDS_TO_WIN - 1;
    let mut total = 0.0;
    let mut coeff = 1.0;
    for l in 0..=n {
        if l > 0 {
            coeff *= f64::from(n - l + 1) / f64::from(l);
        }
        let pmf = coeff * q.powi(l as i32) * (1.0 - q).powi((n - l) as i32);
        let r = f64::from(ROUNDS_TO_WIN - l) / f64::from(ROUNDS_TO_WIN + l);
        total += pmf * r;
    }
    total
}

/// Probability that the side winning maps with probabilities `p` (first
/// pick, second pick, decider) takes the series.
pub fn series_win_probability(p: [f64; 3]) -> f64 {
    p[0] * p[1] + (p[0] * (1.0 - p[1]) + (1.0 - p[0]) * p[1]) * p[2]
}

impl SyntheticEcosystem {
    pub fn from_teams(teams: Vec<SimTeam>, config: EcosystemConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if teams.len() < 2 {
            return Err(Error::Validation("need at least 2 teams".into()));
        }
        let mut ids = std::collections::HashSet::new();
        for t in &teams {
            if !(t.temperature > 0.0 && t.temperature.is_finite()) {
                return Err(Error::Validation(format!(
                    "{}: temperature must be > 0",
                    t.id
                )));
            }
            if t.strengths.iter().any(|s| !s.is_finite()) {
                return Err(Error::NonFinite(format!("strengths of {}", t.id)));
            }
            if !ids.insert(t.id.as_str()) {
                return Err(Error::Validation(format!("duplicate team id {}", t.id)));
            }
        }
        Ok(SyntheticEcosystem {
            teams,
            config,
            seed,
        })
    }

    pub fn team_index(&self, id: &str) -> Option<usize> {
        self.teams.iter().position(|t| t.id == id)
    }

    /// Probability that team `i` beats team `j` on `map`.
    pub fn map_win_probability(&self, i: usize, j: usize, map: MapId) -> f64 {
        logistic(self.teams[i].strengths[map.index()] - self.teams[j].strengths[map.index()])
    }

    /// Binomial parameter of the loser's round count on a map won with
    /// probability `p` by one side.
    pub fn loser_round_rate(&self, p: f64) -> f64 {
        self.config.round_closeness * 2.0 * p.min(1.0 - p)
    }

    /// Expected reward of picking `map` for `i` against `j`.
    pub fn pick_value(&self, i: usize, j: usize, map: MapId, reward: RewardKind) -> f64 {
        let p = self.map_win_probability(i, j, map);
        match reward {
            RewardKind::ZeroOne => p,
            RewardKind::MarginOfRounds => {
                (2.0 * p - 1.0) * expected_margin(self.loser_round_rate(p))
            }
        }
    }

    /// The behavior distribution of `team` at veto `step`.
    pub fn behavior_distribution(
        &self,
        team: usize,
        step: usize,
        context: &ContextVector,
    ) -> Result<ActionDistribution> {
        behavior_distribution(&self.teams[team], step, context)
    }
}

/// Win-rate-greedy softmax: picks favour maps where the team's smoothed rate
/// beats the opponent's, bans the reverse. A permaban is always the team's
/// first ban while it is still available.
pub fn behavior_distribution(
    team: &SimTeam,
    step: usize,
    context: &ContextVector,
) -> Result<ActionDistribution> {
    let (side, kind) = *SCHEDULE.get(step).ok_or(Error::VetoComplete)?;
    let available = context.available();
    let first_ban = match side {
        Side::A => 0,
        Side::B => 1,
    };
    if step == first_ban {
        if let Some(m) = team.permaban.filter(|m| available.contains(*m)) {
            return ActionDistribution::point_mass(m, available);
        }
    }
    let v = context.values();
    let sign = match kind {
        ActionKind::Pick => 1.0,
        ActionKind::Ban => -1.0,
    };
    let mut scores = [0.0; N_MAPS];
    for (m, s) in scores.iter_mut().enumerate() {
        *s = sign * (v[DECIDER_MAPS + m] - v[OPPONENT_MAPS + m]) / team.temperature;
    }
    softmax(&scores, available)
}

/// Plays one match between `i` (side A) and `j` with the given statistics.
/// Veto propensities are attached to the record.
pub fn simulate_match<R: Rng + ?Sized>(
    eco: &SyntheticEcosystem,
    i: usize,
    j: usize,
    stats: &StatsBook,
    match_id: &str,
    date: DateTime<Utc>,
    rng: &mut R,
) -> Result<MatchRecord> {
    if i == j {
        return Err(Error::Validation("a team cannot play itself".into()));
    }
    let (ta, tb) = (&eco.teams[i], &eco.teams[j]);
    let mut veto = VetoState::new(ta.id.clone(), tb.id.clone())?;
    let mut propensities = [0.0; N_DECISIONS];
    for (step, (side, kind)) in SCHEDULE.iter().enumerate() {
        let (me, opp, team) = match side {
            Side::A => (ta, tb, i),
            Side::B => (tb, ta, j),
        };
        let ctx = stats.context(&me.id, &opp.id, veto.available())?;
        let dist = eco.behavior_distribution(team, step, &ctx)?;
        let map = sample_action(&dist, rng);
        propensities[step] = dist.prob(map);
        veto = veto.apply_decision(&me.id, *kind, map)?;
    }
    let mut maps = veto.picks();
    maps.push(veto.decider()?);
    let mut games = Vec::with_capacity(3);
    let (mut wins_a, mut wins_b) = (0, 0);
    for map in maps {
        if wins_a == 2 || wins_b == 2 {
            break;
        }
        let p = eco.map_win_probability(i, j, map);
        let q = eco.loser_round_rate(p);
        let loser = Binomial::new(u64::from(ROUNDS_TO_WIN - 1), q)
            .map_err(|e| Error::Validation(e.to_string()))?
            .sample(rng) as u32;
        let a_wins = rng.random::<f64>() < p;
        let game = if a_wins {
            wins_a += 1;
            GameResult::new(map, ROUNDS_TO_WIN, loser)?
        } else {
            wins_b += 1;
            GameResult::new(map, loser, ROUNDS_TO_WIN)?
        };
        games.push(game);
    }
    let winner = if wins_a == 2 { &ta.id } else { &tb.id };
    MatchRecord::new(match_id, date, veto, games, winner)?.with_propensities(propensities)
}

fn season_start() -> DateTime<Utc> {
    DateTime::<Utc>::from_timestamp(1_585_699_200, 0).expect("valid timestamp")
}

fn season_rng(seed: u64, season: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(season);
    rng
}

/// A season of `n` matches between uniformly drawn pairs, in date order.
/// Statistics start empty and update after every match.
pub fn simulate_season(eco: &SyntheticEcosystem, n: usize, seed: u64) -> Result<Vec<MatchRecord>> {
    simulate_season_stream(eco, n, seed, 0)
}

fn simulate_season_stream(
    eco: &SyntheticEcosystem,
    n: usize,
    seed: u64,
    season: u64,
) -> Result<Vec<MatchRecord>> {
    let mut rng = season_rng(seed, season);
    let mut stats = StatsBook::new();
    let start = season_start();
    let n_teams = eco.teams.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let i = rng.random_range(0..n_teams);
        let mut j = rng.random_range(0..n_teams - 1);
        if j >= i {
            j += 1;
        }
        let id = if season == 0 {
            format!("sim-{seed}-{k:06}")
        } else {
            format!("sim-{seed}-s{season}-{k:06}")
        };
        let date = start + Duration::minutes(k as i64);
        let m = simulate_match(eco, i, j, &stats, &id, date, &mut rng)?;
        stats.record_match(&m)?;
        out.push(m);
    }
    Ok(out)
}

/// The simulator's behavior policy as an evaluation target. Records must
/// come from this ecosystem's teams.
pub struct SimBehaviorPolicy<'a> {
    pub eco: &'a SyntheticEcosystem,
}

impl TargetPolicy for SimBehaviorPolicy<'_> {
    fn distribution(&self, record: &DecisionRecord) -> Result<ActionDistribution> {
        let team = self
            .eco
            .team_index(&record.team)
            .ok_or_else(|| Error::Validation(format!("unknown team {}", record.team)))?;
        self.eco
            .behavior_distribution(team, record.step, &record.context)
    }

    fn label(&self) -> String {
        "Behavior policy".into()
    }
}

/// A logged decision with the exact expected reward of every candidate map.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthEntry {
    pub record: DecisionRecord,
    pub match_index: usize,
    pub q_zero_one: [f64; N_MAPS],
    pub q_mor: [f64; N_MAPS],
}

impl TruthEntry {
    pub fn q(&self, reward: RewardKind) -> &[f64; N_MAPS] {
        match reward {
            RewardKind::ZeroOne => &self.q_zero_one,
            RewardKind::MarginOfRounds => &self.q_mor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthValue {
    pub value: f64,
    pub standard_error: f64,
    pub n_matches: usize,
}

/// Decisions from behavior-played seasons, each with exact action values.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTable {
    pub picks: Vec<TruthEntry>,
    pub bans: Vec<TruthEntry>,
    pub n_matches: usize,
}

struct MatchOracle<'a> {
    eco: &'a SyntheticEcosystem,
    teams: [usize; 2],
    /// Context of each side at step 0 (full availability).
    contexts: [ContextVector; 2],
    memo: HashMap<(usize, u8, u8, u8), f64>,
}

impl MatchOracle<'_> {
    fn side_index(side: Side) -> usize {
        match side {
            Side::A => 0,
            Side::B => 1,
        }
    }

    /// P(side A wins the series) when the veto continues from `step` under
    /// behavior. Picks are encoded as map index, or 7 while undecided.
    fn a_wins(&mut self, step: usize, available: MapSet, picks: [u8; 2]) -> Result<f64> {
        if step == N_DECISIONS {
            let decider = available.iter().next().ok_or(Error::EmptyMask)?;
            let (a, b) = (self.teams[0], self.teams[1]);
            let p = [
                self.eco
                    .map_win_probability(a, b, MapId::ALL[picks[0] as usize]),
                self.eco
                    .map_win_probability(a, b, MapId::ALL[picks[1] as usize]),
                self.eco.map_win_probability(a, b, decider),
            ];
            return Ok(series_win_probability(p));
        }
        let key = (step, available.bits(), picks[0], picks[1]);
        if let Some(v) = self.memo.get(&key) {
            return Ok(*v);
        }
        let (side, kind) = SCHEDULE[step];
        let s = Self::side_index(side);
        let ctx = self.contexts[s].with_available(available)?;
        let dist = self.eco.behavior_distribution(self.teams[s], step, &ctx)?;
        let mut total = 0.0;
        for m in available.iter() {
            let p = dist.prob(m);
            if p == 0.0 {
                continue;
            }
            total += p * self.after(step, available, picks, side, kind, m)?;
        }
        self.memo.insert(key, total);
        Ok(total)
    }

    fn after(
        &mut self,
        step: usize,
        available: MapSet,
        mut picks: [u8; 2],
        side: Side,
        kind: ActionKind,
        m: MapId,
    ) -> Result<f64> {
        if kind == ActionKind::Pick {
            picks[Self::side_index(side)] = m.index() as u8;
        }
        self.a_wins(step + 1, available.without(m), picks)
    }

    fn entry(
        &mut self,
        record: &DecisionRecord,
        match_index: usize,
        picks: [u8; 2],
    ) -> Result<TruthEntry> {
        let (side, kind) = SCHEDULE[record.step];
        let s = Self::side_index(side);
        let (me, opp) = (self.teams[s], self.teams[1 - s]);
        let available = record.available();
        let mut q_zero_one = [0.0; N_MAPS];
        let mut q_mor = [0.0; N_MAPS];
        for m in available.iter() {
            match kind {
                ActionKind::Pick => {
                    q_zero_one[m.index()] = self.eco.pick_value(me, opp, m, RewardKind::ZeroOne);
                    q_mor[m.index()] = self.eco.pick_value(me, opp, m, RewardKind::MarginOfRounds);
                }
                ActionKind::Ban => {
                    let p_a = self.after(record.step, available, picks, side, kind, m)?;
                    let p_win = if side == Side::A { p_a } else { 1.0 - p_a };
                    let n = record.ban_index.ok_or_else(|| {
                        Error::Validation("ban record without a ban index".into())
                    })?;
                    let scale = ban_reward(true, n)?;
                    q_zero_one[m.index()] = scale * (2.0 * p_win - 1.0);
                    q_mor[m.index()] = q_zero_one[m.index()];
                }
            }
        }
        Ok(TruthEntry {
            record: record.clone(),
            match_index,
            q_zero_one,
            q_mor,
        })
    }
}

fn truth_for_match(
    eco: &SyntheticEcosystem,
    m: &MatchRecord,
    records: &[DecisionRecord],
    match_index: usize,
) -> Result<Vec<TruthEntry>> {
    let team = |id: &str| {
        eco.team_index(id)
            .ok_or_else(|| Error::Validation(format!("unknown team {id}")))
    };
    let full = |r: &DecisionRecord| r.context.with_available(MapSet::FULL);
    let mut oracle = MatchOracle {
        eco,
        teams: [team(m.team_a())?, team(m.team_b())?],
        contexts: [full(&records[0])?, full(&records[1])?],
        memo: HashMap::new(),
    };
    let mut picks = [N_MAPS as u8; 2];
    let mut out = Vec::with_capacity(N_DECISIONS);
    for r in records {
        out.push(oracle.entry(r, match_index, picks)?);
        if r.kind == ActionKind::Pick {
            let (side, _) = SCHEDULE[r.step];
            picks[MatchOracle::side_index(side)] = r.action.index() as u8;
        }
    }
    Ok(out)
}

/// Simulates `n_matches` under behavior, in seasons of the ecosystem's
/// season length, and records every decision with its exact action values.
pub fn build_truth_table(
    eco: &SyntheticEcosystem,
    n_matches: usize,
    seed: u64,
) -> Result<TruthTable> {
    if n_matches == 0 {
        return Err(Error::Empty("truth table needs at least one match".into()));
    }
    let season_len = eco.config.season_length;
    let n_seasons = n_matches.div_ceil(season_len);
    let mut matches = Vec::with_capacity(n_matches);
    let mut records = Vec::with_capacity(n_matches * N_DECISIONS);
    for season in 0..n_seasons {
        let len = season_len.min(n_matches - season * season_len);
        let ms = simulate_season_stream(eco, len, seed, season as u64)?;
        let mut stats = StatsBook::new();
        for m in &ms {
            records.extend(match_decisions(m, &stats, RewardKind::ZeroOne)?);
            stats.record_match(m)?;
        }
        matches.extend(ms);
    }
    let entries: Vec<Vec<TruthEntry>> = matches
        .par_iter()
        .enumerate()
        .map(|(k, m)| truth_for_match(eco, m, &records[k * N_DECISIONS..(k + 1) * N_DECISIONS], k))
        .collect::<Result<_>>()?;
    let (mut picks, mut bans) = (Vec::new(), Vec::new());
    for e in entries.into_iter().flatten() {
        match e.record.kind {
            ActionKind::Pick => picks.push(e),
            ActionKind::Ban => bans.push(e),
        }
    }
    Ok(TruthTable {
        picks,
        bans,
        n_matches,
    })
}

impl TruthTable {
    pub fn entries(&self, kind: ActionKind) -> &[TruthEntry] {
        match kind {
            ActionKind::Pick => &self.picks,
            ActionKind::Ban => &self.bans,
        }
    }

    /// `mean Σ_a π(a|x) q(x, a)` over the table's decisions of the setting's
    /// kind; the standard error treats matches as independent.
    pub fn value(&self, policy: &dyn TargetPolicy, setting: Setting) -> Result<TruthValue> {
        let entries = self.entries(setting.kind);
        let per_entry: Vec<f64> = entries
            .par_iter()
            .map(|e| {
                let d = policy.distribution(&e.record)?;
                let q = e.q(setting.reward);
                Ok(d.mask()
                    .iter()
                    .map(|a| d.prob(a) * q[a.index()])
                    .sum::<f64>())
            })
            .collect::<Result<_>>()?;
        let mut per_match: Vec<(f64, usize)> = vec![(0.0, 0); self.n_matches];
        for (e, v) in entries.iter().zip(&per_entry) {
            let slot = &mut per_match[e.match_index];
            slot.0 += v;
            slot.1 += 1;
        }
        let means: Vec<f64> = per_match
            .iter()
            .filter(|(_, n)| *n > 0)
            .map(|(s, n)| s / *n as f64)
            .collect();
        let n = means.len();
        if n == 0 {
            return Err(Error::Empty("no decisions of this kind".into()));
        }
        let value = per_entry.iter().sum::<f64>() / per_entry.len() as f64;
        let mean = means.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Ok(TruthValue {
            value,
            standard_error: (var / n as f64).sqrt(),
            n_matches: n,
        })
    }
}

/// Ground-truth value of `policy` on the behavior-generated context
/// distribution: each decision of the setting's kind is taken by `policy`
/// while every other decision stays with the behavior policies.
pub fn true_policy_value(
    eco: &SyntheticEcosystem,
    policy: &dyn TargetPolicy,
    setting: Setting,
    n_rollouts: usize,
    seed: u64,
) -> Result<TruthValue> {
    build_truth_table(eco, n_rollouts, seed)?.value(policy, setting)
}
