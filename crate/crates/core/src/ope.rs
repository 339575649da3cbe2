//! Off-policy value estimates: the on-policy mean, self-normalized importance
//! weighting and the direct method over per-arm weighted ridge regressions.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ActionKind, DecisionRecord, MapId, N_MAPS};
use crate::error::{Error, Result};
use crate::features::CONTEXT_DIM;
use crate::policy::TargetPolicy;
use crate::rewards::RewardKind;

pub const DEFAULT_PROPENSITY_FLOOR: f64 = 0.01;
pub const DEFAULT_RIDGE_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    OnPolicy,
    SnIw,
    Dm,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::OnPolicy => "on-policy",
            Method::SnIw => "sn-iw",
            Method::Dm => "dm",
        })
    }
}

/// One column of the evaluation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Setting {
    pub kind: ActionKind,
    pub reward: RewardKind,
}

impl Setting {
    pub const ALL: [Setting; 4] = [
        Setting {
            kind: ActionKind::Pick,
            reward: RewardKind::ZeroOne,
        },
        Setting {
            kind: ActionKind::Pick,
            reward: RewardKind::MarginOfRounds,
        },
        Setting {
            kind: ActionKind::Ban,
            reward: RewardKind::ZeroOne,
        },
        Setting {
            kind: ActionKind::Ban,
            reward: RewardKind::MarginOfRounds,
        },
    ];
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ActionKind::Pick => "Picks",
            ActionKind::Ban => "Bans",
        };
        let reward = match self.reward {
            RewardKind::ZeroOne => "0/1",
            RewardKind::MarginOfRounds => "MoR",
        };
        write!(f, "{kind} ({reward})")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub method: Method,
    pub setting: Option<Setting>,
    pub value: f64,
    /// `(Σw)² / Σw²`; only reported by SN-IW.
    pub effective_sample_size: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnIwConfig {
    /// Lower bound on the propensity in the weight denominator. `None` uses
    /// the logged propensity as is, which is right when it is exact.
    pub propensity_floor: Option<f64>,
    /// Optional upper bound on individual weights, for diagnostics.
    pub weight_cap: Option<f64>,
}

impl Default for SnIwConfig {
    fn default() -> Self {
        SnIwConfig {
            propensity_floor: Some(DEFAULT_PROPENSITY_FLOOR),
            weight_cap: None,
        }
    }
}

fn check_nonempty(records: &[DecisionRecord], what: &str) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Empty(format!("no decision records for {what}")));
    }
    Ok(())
}

pub fn on_policy_value(records: &[DecisionRecord]) -> Result<ValueEstimate> {
    check_nonempty(records, "the on-policy value")?;
    let mut sum = 0.0;
    for r in records {
        sum += r.reward()?;
    }
    Ok(ValueEstimate {
        method: Method::OnPolicy,
        setting: None,
        value: sum / records.len() as f64,
        effective_sample_size: None,
        n: records.len(),
    })
}

fn floored(propensity: f64, floor: Option<f64>) -> Result<f64> {
    if !(propensity.is_finite() && propensity > 0.0) {
        return Err(Error::Validation(format!(
            "behavior propensity {propensity} is not positive"
        )));
    }
    Ok(floor.map_or(propensity, |f| propensity.max(f)))
}

/// Importance weight `π(a_i|x_i) / μ(a_i|x_i)` of one record.
pub fn importance_weight(
    target: &dyn TargetPolicy,
    record: &DecisionRecord,
    config: &SnIwConfig,
) -> Result<f64> {
    let pi = target.distribution(record)?.prob(record.action);
    let mu = floored(record.propensity()?, config.propensity_floor)?;
    let w = pi / mu;
    Ok(config.weight_cap.map_or(w, |cap| w.min(cap)))
}

pub fn sn_iw_value(
    target: &dyn TargetPolicy,
    records: &[DecisionRecord],
    config: &SnIwConfig,
) -> Result<ValueEstimate> {
    check_nonempty(records, "SN-IW")?;
    let mut weighted = Vec::with_capacity(records.len());
    for r in records {
        weighted.push((importance_weight(target, r, config)?, r.reward()?));
    }
    let (mut sw, mut swr, mut sww) = (0.0, 0.0, 0.0);
    for &(w, reward) in &weighted {
        sw += w;
        swr += w * reward;
        sww += w * w;
    }
    if sw <= 0.0 {
        return Err(Error::ZeroWeightSum);
    }
    Ok(ValueEstimate {
        method: Method::SnIw,
        setting: None,
        value: swr / sw,
        effective_sample_size: Some(sw * sw / sww),
        n: records.len(),
    })
}

/// Anything that predicts the reward of playing `arm` at a logged decision.
pub trait RewardPredictor: Sync {
    fn predict(&self, record: &DecisionRecord, arm: MapId) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRegression {
    pub intercept: f64,
    pub weights: [f64; CONTEXT_DIM],
    /// Records of this arm used in the fit.
    pub n: usize,
    /// True when the arm had no usable records and predicts the global mean.
    pub fallback: bool,
}

impl ArmRegression {
    pub fn predict(&self, x: &[f64; CONTEXT_DIM]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub arms: Vec<ArmRegression>,
    pub lambda: f64,
    pub global_mean: f64,
}

impl RewardPredictor for RewardModel {
    fn predict(&self, record: &DecisionRecord, arm: MapId) -> f64 {
        self.arms[arm.index()].predict(record.context.values())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmConfig {
    pub lambda: f64,
    pub propensity_floor: Option<f64>,
}

impl Default for DmConfig {
    fn default() -> Self {
        DmConfig {
            lambda: DEFAULT_RIDGE_LAMBDA,
            propensity_floor: Some(DEFAULT_PROPENSITY_FLOOR),
        }
    }
}

/// Weighted ridge `min Σ wᵢ(yᵢ − b − βᵀxᵢ)² + λ‖β‖²` with the intercept
/// left unpenalised. Returns `None` when the weights carry no mass.
pub fn weighted_ridge(
    xs: &[[f64; CONTEXT_DIM]],
    ys: &[f64],
    ws: &[f64],
    lambda: f64,
) -> Option<(f64, [f64; CONTEXT_DIM])> {
    let sw: f64 = ws.iter().sum();
    if !sw.is_finite() || sw <= 0.0 {
        return None;
    }
    let mut xbar = [0.0; CONTEXT_DIM];
    let mut ybar = 0.0;
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        for j in 0..CONTEXT_DIM {
            xbar[j] += w * x[j];
        }
        ybar += w * y;
    }
    xbar.iter_mut().for_each(|v| *v /= sw);
    ybar /= sw;

    // Columns without weighted spread carry no slope; the intercept absorbs them.
    let mut spread = [0.0; CONTEXT_DIM];
    for (x, w) in xs.iter().zip(ws) {
        for j in 0..CONTEXT_DIM {
            spread[j] += w * (x[j] - xbar[j]).powi(2);
        }
    }
    let active: Vec<usize> = (0..CONTEXT_DIM)
        .filter(|&j| spread[j] > 1e-12 * sw)
        .collect();
    let mut beta = [0.0; CONTEXT_DIM];
    if !active.is_empty() {
        let k = active.len();
        let mut gram = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
            if *w == 0.0 {
                continue;
            }
            for (p, &jp) in active.iter().enumerate() {
                let xp = x[jp] - xbar[jp];
                rhs[p] += w * xp * (y - ybar);
                for (q, &jq) in active.iter().enumerate().take(p + 1) {
                    gram[(p, q)] += w * xp * (x[jq] - xbar[jq]);
                }
            }
        }
        for p in 0..k {
            for q in 0..p {
                gram[(q, p)] = gram[(p, q)];
            }
            gram[(p, p)] += lambda;
        }
        let solution = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .unwrap_or_else(|_| DVector::zeros(k)),
        };
        for (p, &j) in active.iter().enumerate() {
            beta[j] = solution[p];
        }
    }
    let intercept = ybar - beta.iter().zip(&xbar).map(|(b, x)| b * x).sum::<f64>();
    Some((intercept, beta))
}

/// Per-arm ridge regressions, each weighted by `π(a|x)/μ(a|x)` of the target
/// over the records where `a` was the logged action.
/// Contexts, rewards and importance weights logged for one arm.
type ArmSamples = (Vec<[f64; CONTEXT_DIM]>, Vec<f64>, Vec<f64>);

pub fn fit_reward_model(
    records: &[DecisionRecord],
    target: &dyn TargetPolicy,
    config: &DmConfig,
) -> Result<RewardModel> {
    check_nonempty(records, "the reward model")?;
    if !(config.lambda >= 0.0 && config.lambda.is_finite()) {
        return Err(Error::Validation(format!(
            "ridge lambda {} must be >= 0",
            config.lambda
        )));
    }
    let global_mean = on_policy_value(records)?.value;
    let mut per_arm: Vec<ArmSamples> = vec![Default::default(); N_MAPS];
    for r in records {
        let pi = target.distribution(r)?.prob(r.action);
        let mu = floored(r.propensity()?, config.propensity_floor)?;
        let slot = &mut per_arm[r.action.index()];
        slot.0.push(*r.context.values());
        slot.1.push(r.reward()?);
        slot.2.push(pi / mu);
    }
    let arms = per_arm
        .into_par_iter()
        .enumerate()
        .map(
            |(a, (xs, ys, ws))| match weighted_ridge(&xs, &ys, &ws, config.lambda) {
                Some((intercept, weights)) => ArmRegression {
                    intercept,
                    weights,
                    n: xs.len(),
                    fallback: false,
                },
                None => {
                    log::warn!(
                        "arm {}: {} records with zero target weight; predicting the global mean",
                        MapId::ALL[a],
                        xs.len()
                    );
                    ArmRegression {
                        intercept: global_mean,
                        weights: [0.0; CONTEXT_DIM],
                        n: xs.len(),
                        fallback: true,
                    }
                }
            },
        )
        .collect();
    Ok(RewardModel {
        arms,
        lambda: config.lambda,
        global_mean,
    })
}

pub fn dm_value(
    target: &dyn TargetPolicy,
    records: &[DecisionRecord],
    model: &dyn RewardPredictor,
) -> Result<ValueEstimate> {
    check_nonempty(records, "the direct method")?;
    let mut sum = 0.0;
    for r in records {
        let dist = target.distribution(r)?;
        sum += dist
            .mask()
            .iter()
            .map(|a| dist.prob(a) * model.predict(r, a))
            .sum::<f64>();
    }
    Ok(ValueEstimate {
        method: Method::Dm,
        setting: None,
        value: sum / records.len() as f64,
        effective_sample_size: None,
        n: records.len(),
    })
}

/// A trained model row: the policy trained with each pick reward.
pub struct ModelRow<'a> {
    pub label: String,
    pub zero_one: &'a dyn TargetPolicy,
    pub mor: &'a dyn TargetPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GridConfig {
    pub sn_iw: SnIwConfig,
    pub dm: DmConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub setting: Setting,
    pub sn_iw: ValueEstimate,
    pub dm: ValueEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub label: String,
    pub cells: Vec<GridCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationGrid {
    pub rows: Vec<GridRow>,
}

fn with_setting(mut e: ValueEstimate, setting: Setting) -> ValueEstimate {
    e.setting = Some(setting);
    e
}

fn evaluate_cell(
    target: Option<&dyn TargetPolicy>,
    records: &[DecisionRecord],
    setting: Setting,
    config: &GridConfig,
) -> Result<GridCell> {
    let (sn_iw, dm) = match target {
        // the logging row reports the observed mean under both estimators
        None => {
            let v = on_policy_value(records)?;
            (v.clone(), v)
        }
        Some(policy) => {
            let model = fit_reward_model(records, policy, &config.dm)?;
            (
                sn_iw_value(policy, records, &config.sn_iw)?,
                dm_value(policy, records, &model)?,
            )
        }
    };
    Ok(GridCell {
        setting,
        sn_iw: with_setting(sn_iw, setting),
        dm: with_setting(dm, setting),
    })
}

/// Row label with its 0/1 and MoR targets; `None` marks the logging row.
type RowSpec<'a> = (
    String,
    Option<&'a dyn TargetPolicy>,
    Option<&'a dyn TargetPolicy>,
);

/// The uniform, logging and model rows over the four settings.
///
/// Every column is scored on the test records' own rewards; the two pick
/// columns differ only in which trained policy is evaluated, so the test
/// records should carry 0/1 pick rewards.
pub fn evaluation_grid(
    models: &[ModelRow<'_>],
    test: &[DecisionRecord],
    config: &GridConfig,
) -> Result<EvaluationGrid> {
    let picks: Vec<DecisionRecord> = test
        .iter()
        .filter(|r| r.kind == ActionKind::Pick)
        .cloned()
        .collect();
    let bans: Vec<DecisionRecord> = test
        .iter()
        .filter(|r| r.kind == ActionKind::Ban)
        .cloned()
        .collect();
    let uniform = crate::policy::UniformPolicy;

    let mut specs: Vec<RowSpec<'_>> = vec![
        ("Uniform policy".into(), Some(&uniform), Some(&uniform)),
        ("Logging policy".into(), None, None),
    ];
    for m in models {
        specs.push((m.label.clone(), Some(m.zero_one), Some(m.mor)));
    }

    let jobs: Vec<(usize, Setting)> = (0..specs.len())
        .flat_map(|row| Setting::ALL.into_iter().map(move |s| (row, s)))
        .collect();
    let cells: Vec<GridCell> = jobs
        .par_iter()
        .map(|&(row, setting)| {
            let target = match setting.reward {
                RewardKind::ZeroOne => specs[row].1,
                RewardKind::MarginOfRounds => specs[row].2,
            };
            let records = match setting.kind {
                ActionKind::Pick => &picks,
                ActionKind::Ban => &bans,
            };
            evaluate_cell(target, records, setting, config)
        })
        .collect::<Result<_>>()?;

    let mut cells = cells.into_iter();
    let rows = specs
        .into_iter()
        .map(|(label, _, _)| GridRow {
            label,
            cells: cells.by_ref().take(Setting::ALL.len()).collect(),
        })
        .collect();
    Ok(EvaluationGrid { rows })
}

impl EvaluationGrid {
    pub fn row(&self, label: &str) -> Option<&GridRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["policy", "setting", "estimator", "value", "ess", "n"])?;
        for row in &self.rows {
            for cell in &row.cells {
                for e in [&cell.sn_iw, &cell.dm] {
                    let estimator = if row.label == "Logging policy" {
                        Method::OnPolicy.to_string()
                    } else {
                        e.method.to_string()
                    };
                    w.write_record([
                        row.label.clone(),
                        cell.setting.to_string(),
                        estimator,
                        e.value.to_string(),
                        e.effective_sample_size
                            .map(|v| v.to_string())
                            .unwrap_or_default(),
                        e.n.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text table: one row per policy, `SN-IW/DM` per setting.
    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut s = format!("{:width$}", "Policy");
        for setting in Setting::ALL {
            s.push_str(&format!("  {:>15}", setting.to_string()));
        }
        s.push('\n');
        for row in &self.rows {
            s.push_str(&format!("{:width$}", row.label));
            for cell in &row.cells {
                let text = format!("{:.3}/{:.3}", cell.sn_iw.value, cell.dm.value);
                s.push_str(&format!("  {text:>15}"));
            }
            s.push('\n');
        }
        s
    }
}
