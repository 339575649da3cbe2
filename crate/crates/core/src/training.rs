//! REINFORCE training of the three bandit variants, with checkpointing and a
//! chronological grid search.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ActionKind, DecisionRecord};
use crate::error::{Error, Result};
use crate::ope::{sn_iw_value, SnIwConfig};
use crate::policy::{BanditPolicy, ParamSlot, Variant};
use crate::rewards::RewardKind;

/// What `checkpoint_every` counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointUnit {
    #[default]
    Decisions,
    Matches,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub reward_kind: RewardKind,
    pub variant: Variant,
    /// Recorded for reproducibility; training itself draws no random numbers.
    pub seed: u64,
    pub checkpoint_every: usize,
    pub checkpoint_unit: CheckpointUnit,
    pub masked: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.1,
            epochs: 3,
            reward_kind: RewardKind::ZeroOne,
            variant: Variant::Combo,
            seed: 0,
            checkpoint_every: 100,
            checkpoint_unit: CheckpointUnit::Decisions,
            masked: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Validation(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Validation(
                "checkpoint_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    /// Decisions (or matches) processed so far, across epochs.
    pub index: usize,
    pub pick_value: f64,
    pub ban_value: f64,
}

/// How often each part of the dataset was used, for auditing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UpdateCounts {
    pub pick_visits: usize,
    pub ban_visits: usize,
    pub matches: usize,
    pub parameter_updates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPolicy {
    pub policy: BanditPolicy,
    pub config: TrainingConfig,
    pub checkpoints: Vec<Checkpoint>,
    pub updates: UpdateCounts,
}

impl TrainedPolicy {
    pub fn write_checkpoints_csv<W: Write>(&self, out: W) -> Result<()> {
        write_checkpoints_csv(&self.checkpoints, self.config.checkpoint_unit, out)
    }
}

pub fn write_checkpoints_csv<W: Write>(
    checkpoints: &[Checkpoint],
    unit: CheckpointUnit,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let index = match unit {
        CheckpointUnit::Decisions => "decision_index",
        CheckpointUnit::Matches => "match_index",
    };
    w.write_record([index, "epoch", "pick_value", "ban_value"])?;
    for c in checkpoints {
        w.write_record([
            c.index.to_string(),
            c.epoch.to_string(),
            c.pick_value.to_string(),
            c.ban_value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "{what} at coordinate {i}: {}",
            values[i]
        )));
    }
    Ok(())
}

/// `θ + η·R·∇log π`.
pub fn sgd_step(theta: &[f64], gradient: &[f64], reward: f64, eta: f64) -> Result<Vec<f64>> {
    let mut out = theta.to_vec();
    sgd_step_in_place(&mut out, gradient, reward, eta)?;
    Ok(out)
}

pub fn sgd_step_in_place(theta: &mut [f64], gradient: &[f64], reward: f64, eta: f64) -> Result<()> {
    if theta.len() != gradient.len() {
        return Err(Error::Validation(format!(
            "gradient has {} coordinates, θ has {}",
            gradient.len(),
            theta.len()
        )));
    }
    check_finite(gradient, "gradient")?;
    check_finite(&[reward, eta], "reward/learning rate")?;
    let scale = eta * reward;
    for (t, g) in theta.iter_mut().zip(gradient) {
        *t += scale * g;
    }
    check_finite(theta, "updated θ")
}

/// Splits a decision list into per-match slices, checking that matches are
/// contiguous and steps increase within each match.
pub fn group_by_match(records: &[DecisionRecord]) -> Result<Vec<&[DecisionRecord]>> {
    let mut groups = Vec::new();
    let mut seen = HashSet::new();
    let mut start = 0;
    for i in 0..records.len() {
        let r = &records[i];
        r.reward()?;
        if i > start {
            let prev = &records[i - 1];
            if prev.match_id == r.match_id {
                if r.step <= prev.step {
                    return Err(Error::Unordered(format!(
                        "match {}: step {} follows step {}",
                        r.match_id, r.step, prev.step
                    )));
                }
                continue;
            }
            groups.push(&records[start..i]);
            start = i;
        }
        if !seen.insert(r.match_id.as_str()) {
            return Err(Error::Unordered(format!(
                "decisions of match {} are not contiguous",
                r.match_id
            )));
        }
    }
    if start < records.len() {
        groups.push(&records[start..]);
    }
    Ok(groups)
}

struct Trainer<'a, F> {
    policy: BanditPolicy,
    config: &'a TrainingConfig,
    counts: UpdateCounts,
    checkpoints: Vec<Checkpoint>,
    evaluate: F,
    ticks: usize,
}

impl<F> Trainer<'_, F>
where
    F: FnMut(&BanditPolicy) -> Result<(f64, f64)>,
{
    fn apply(&mut self, slot: ParamSlot, grad: &[f64], reward: f64) -> Result<()> {
        let eta = self.config.learning_rate;
        sgd_step_in_place(self.policy.params_mut(slot).theta_mut(), grad, reward, eta)?;
        self.counts.parameter_updates += 1;
        Ok(())
    }

    fn tick(&mut self, epoch: usize) -> Result<()> {
        self.ticks += 1;
        if self.ticks.is_multiple_of(self.config.checkpoint_every) {
            self.checkpoint(epoch)?;
        }
        Ok(())
    }

    fn checkpoint(&mut self, epoch: usize) -> Result<()> {
        let (pick_value, ban_value) = (self.evaluate)(&self.policy)?;
        self.checkpoints.push(Checkpoint {
            epoch,
            index: self.ticks,
            pick_value,
            ban_value,
        });
        Ok(())
    }

    fn count(&mut self, r: &DecisionRecord) {
        match r.kind {
            ActionKind::Pick => self.counts.pick_visits += 1,
            ActionKind::Ban => self.counts.ban_visits += 1,
        }
    }

    /// Picks update online; bans are applied together at the end of the match
    /// with the parameters as they stand then.
    fn online_match(&mut self, records: &[DecisionRecord], epoch: usize) -> Result<()> {
        let masked = self.config.masked;
        let mut bans = Vec::new();
        for r in records {
            self.count(r);
            match r.kind {
                ActionKind::Pick => {
                    let (slot, grad) = self
                        .policy
                        .log_gradient(&r.context, r.kind, r.action, masked)?;
                    self.apply(slot, &grad, r.reward()?)?;
                }
                ActionKind::Ban => bans.push(r),
            }
            if self.config.checkpoint_unit == CheckpointUnit::Decisions {
                self.tick(epoch)?;
            }
        }
        if !bans.is_empty() {
            let mut pending: Vec<(ParamSlot, Vec<f64>, f64)> = Vec::with_capacity(bans.len());
            for r in bans {
                let (slot, grad) = self
                    .policy
                    .log_gradient(&r.context, r.kind, r.action, masked)?;
                pending.push((slot, grad, r.reward()?));
            }
            self.apply_accumulated(pending)?;
        }
        Ok(())
    }

    /// One accumulated update over every record, gradients taken at the
    /// parameters from the start of the match.
    fn episodic_match(&mut self, records: &[DecisionRecord], epoch: usize) -> Result<()> {
        let masked = self.config.masked;
        let mut pending = Vec::with_capacity(records.len());
        for r in records {
            self.count(r);
            let (slot, grad) = self
                .policy
                .log_gradient(&r.context, r.kind, r.action, masked)?;
            pending.push((slot, grad, r.reward()?));
        }
        self.apply_accumulated(pending)?;
        if self.config.checkpoint_unit == CheckpointUnit::Decisions {
            for _ in records {
                self.tick(epoch)?;
            }
        }
        Ok(())
    }

    fn apply_accumulated(&mut self, pending: Vec<(ParamSlot, Vec<f64>, f64)>) -> Result<()> {
        for slot in [ParamSlot::Main, ParamSlot::SplitBan] {
            let mut total: Option<Vec<f64>> = None;
            for (s, grad, reward) in &pending {
                if *s != slot {
                    continue;
                }
                check_finite(grad, "gradient")?;
                let acc = total.get_or_insert_with(|| vec![0.0; grad.len()]);
                for (t, g) in acc.iter_mut().zip(grad) {
                    *t += reward * g;
                }
            }
            if let Some(total) = total {
                self.apply(slot, &total, 1.0)?;
            }
        }
        Ok(())
    }
}

/// Trains from zero-initialised parameters without checkpoints.
pub fn train(records: &[DecisionRecord], config: &TrainingConfig) -> Result<TrainedPolicy> {
    let mut cfg = config.clone();
    cfg.checkpoint_every = usize::MAX;
    let mut out = train_with_checkpoints(records, &cfg, |_| Ok((0.0, 0.0)))?;
    out.config = config.clone();
    Ok(out)
}

/// Trains and calls `evaluate` on a snapshot of the policy before the first
/// update and every `checkpoint_every` decisions (or matches).
///
/// `evaluate` returns the (pick, ban) values recorded in the checkpoint.
pub fn train_with_checkpoints<F>(
    records: &[DecisionRecord],
    config: &TrainingConfig,
    evaluate: F,
) -> Result<TrainedPolicy>
where
    F: FnMut(&BanditPolicy) -> Result<(f64, f64)>,
{
    config.validate()?;
    let groups = group_by_match(records)?;
    let mut t = Trainer {
        policy: BanditPolicy::zeros(config.variant),
        config,
        counts: UpdateCounts::default(),
        checkpoints: Vec::new(),
        evaluate,
        ticks: 0,
    };
    if config.checkpoint_every != usize::MAX {
        t.checkpoint(0)?;
    }
    for epoch in 1..=config.epochs {
        for g in &groups {
            match config.variant {
                Variant::Split | Variant::Combo => t.online_match(g, epoch)?,
                Variant::Episodic => t.episodic_match(g, epoch)?,
            }
            t.counts.matches += 1;
            if config.checkpoint_unit == CheckpointUnit::Matches {
                t.tick(epoch)?;
            }
        }
    }
    Ok(TrainedPolicy {
        policy: t.policy,
        config: config.clone(),
        checkpoints: t.checkpoints,
        updates: t.counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub epochs: usize,
}

pub fn default_grid() -> Vec<GridPoint> {
    let mut grid = Vec::new();
    for learning_rate in [0.001, 0.01, 0.1, 0.5] {
        for epochs in 1..=3 {
            grid.push(GridPoint {
                learning_rate,
                epochs,
            });
        }
    }
    grid
}

pub const MIN_VALIDATION_DECISIONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub point: GridPoint,
    pub validation_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: TrainingConfig,
    pub trained: TrainedPolicy,
    pub scores: Vec<GridScore>,
}

/// Trains every grid point on the chronologically earlier matches and keeps
/// the one with the best SN-IW pick value on the last `validation_fraction`
/// of matches. Ties go to the lower learning rate, then fewer epochs.
///
/// Validation records need behavior propensities.
pub fn grid_search(
    records: &[DecisionRecord],
    validation_fraction: f64,
    grid: &[GridPoint],
    base: &TrainingConfig,
    sn_iw: &SnIwConfig,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::Empty("hyperparameter grid".into()));
    }
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::Validation(format!(
            "validation fraction {validation_fraction} outside (0, 1)"
        )));
    }
    let groups = group_by_match(records)?;
    let n_val = ((validation_fraction * groups.len() as f64) - 1e-9).ceil() as usize;
    let cut = groups.len() - n_val.min(groups.len());
    let train_len: usize = groups[..cut].iter().map(|g| g.len()).sum();
    let (train_part, validation) = records.split_at(train_len);
    let val_picks: Vec<DecisionRecord> = validation
        .iter()
        .filter(|r| r.kind == ActionKind::Pick)
        .cloned()
        .collect();
    if val_picks.len() < MIN_VALIDATION_DECISIONS {
        return Err(Error::Validation(format!(
            "validation slice has {} pick decisions; at least {MIN_VALIDATION_DECISIONS} needed",
            val_picks.len()
        )));
    }

    let results: Vec<(TrainedPolicy, f64)> = grid
        .par_iter()
        .map(|p| {
            let cfg = TrainingConfig {
                learning_rate: p.learning_rate,
                epochs: p.epochs,
                ..base.clone()
            };
            let trained = train(train_part, &cfg)?;
            let value = sn_iw_value(&trained.policy, &val_picks, sn_iw)?.value;
            Ok((trained, value))
        })
        .collect::<Result<_>>()?;

    let mut best = 0;
    for i in 1..grid.len() {
        let (a, b) = (&grid[i], &grid[best]);
        let better = results[i].1 > results[best].1
            || (results[i].1 == results[best].1
                && (a.learning_rate, a.epochs) < (b.learning_rate, b.epochs));
        if better {
            best = i;
        }
    }
    let scores = grid
        .iter()
        .zip(&results)
        .map(|(p, (_, v))| GridScore {
            point: p.clone(),
            validation_value: *v,
        })
        .collect();
    let trained = results.into_iter().nth(best).expect("index in range").0;
    Ok(GridSearchResult {
        best: trained.config.clone(),
        trained,
        scores,
    })
}
