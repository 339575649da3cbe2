//! Softmax linear policies over the map pool.
//!
//! A policy scores arm `a` as `θ·φ(x, a)` where φ copies the context into the
//! block belonging to `a`, so each score is a dot product of the context with
//! one 23-wide slice of θ. Probabilities are a softmax over the arm set: the
//! available maps when masking is on, all seven maps otherwise.
//!
//! The combined variant has no ban parameters of its own: its ban policy is
//! `π_B(a) = (1 - π_P(a)) / Σ_α (1 - π_P(α))` over the same arm set.

mod behavior;

pub use behavior::{fit_behavior_policy, BehaviorFitConfig, BehaviorPolicy};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ActionKind, DecisionRecord, MapId, MapSet, N_MAPS};
use crate::error::{Error, Result};
use crate::features::{ContextVector, CONTEXT_DIM};

/// Sum-to-one tolerance for distributions.
pub const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Split,
    Combo,
    Episodic,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Split, Variant::Combo, Variant::Episodic];

    pub fn display_name(self) -> &'static str {
        match self {
            Variant::Split => "SplitBandit",
            Variant::Combo => "ComboBandit",
            Variant::Episodic => "EpisodicBandit",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Split => "split",
            Variant::Combo => "combo",
            Variant::Episodic => "episodic",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "split" | "splitbandit" => Ok(Variant::Split),
            "combo" | "combobandit" => Ok(Variant::Combo),
            "episodic" | "episodicbandit" => Ok(Variant::Episodic),
            other => Err(Error::Validation(format!("unknown variant '{other}'"))),
        }
    }
}

/// What a parameter vector is used for; fixes its width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamRole {
    SplitPick,
    SplitBan,
    Combo,
    Episodic,
}

impl ParamRole {
    pub fn blocks(self) -> usize {
        match self {
            ParamRole::Episodic => 2 * N_MAPS,
            _ => N_MAPS,
        }
    }

    pub fn dim(self) -> usize {
        self.blocks() * CONTEXT_DIM
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParameters {
    role: ParamRole,
    theta: Vec<f64>,
}

impl PolicyParameters {
    pub fn zeros(role: ParamRole) -> Self {
        PolicyParameters {
            role,
            theta: vec![0.0; role.dim()],
        }
    }

    pub fn from_theta(role: ParamRole, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != role.dim() {
            return Err(Error::Validation(format!(
                "{role:?} parameters need {} entries, got {}",
                role.dim(),
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy parameters".into()));
        }
        Ok(PolicyParameters { role, theta })
    }

    pub fn role(&self) -> ParamRole {
        self.role
    }

    pub fn blocks(&self) -> usize {
        self.role.blocks()
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub(crate) fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn check_offset(&self, block_offset: usize) -> Result<()> {
        if !block_offset.is_multiple_of(N_MAPS) || block_offset + N_MAPS > self.blocks() {
            return Err(Error::Validation(format!(
                "block offset {block_offset} invalid for {} blocks",
                self.blocks()
            )));
        }
        Ok(())
    }

    /// Per-arm scores `θ·φ(x, a)` for the seven arms starting at `block_offset`.
    pub fn scores(&self, context: &ContextVector, block_offset: usize) -> Result<[f64; N_MAPS]> {
        self.check_offset(block_offset)?;
        let x = context.values();
        Ok(std::array::from_fn(|a| {
            let start = (block_offset + a) * CONTEXT_DIM;
            self.theta[start..start + CONTEXT_DIM]
                .iter()
                .zip(x)
                .map(|(t, v)| t * v)
                .sum()
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    probs: [f64; N_MAPS],
    mask: MapSet,
}

impl ActionDistribution {
    /// Validates probabilities against a support mask.
    pub fn new(probs: [f64; N_MAPS], mask: MapSet) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Validation(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        if MapId::ALL
            .iter()
            .any(|m| !mask.contains(*m) && probs[m.index()] != 0.0)
        {
            return Err(Error::Validation(
                "probability mass outside the mask".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::Validation(format!("probabilities sum to {total}")));
        }
        Ok(ActionDistribution { probs, mask })
    }

    pub fn uniform(mask: MapSet) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        let p = 1.0 / mask.len() as f64;
        let probs = std::array::from_fn(|i| if mask.flags()[i] { p } else { 0.0 });
        Ok(ActionDistribution { probs, mask })
    }

    pub fn point_mass(map: MapId, mask: MapSet) -> Result<Self> {
        if !mask.contains(map) {
            return Err(Error::Validation(format!("{map} is outside the mask")));
        }
        let mut probs = [0.0; N_MAPS];
        probs[map.index()] = 1.0;
        Ok(ActionDistribution { probs, mask })
    }

    pub fn probs(&self) -> &[f64; N_MAPS] {
        &self.probs
    }

    pub fn prob(&self, map: MapId) -> f64 {
        self.probs[map.index()]
    }

    pub fn mask(&self) -> MapSet {
        self.mask
    }

    /// Restricts to `mask` and renormalises.
    pub fn restrict(&self, mask: MapSet) -> Result<Self> {
        let support = MapSet::from_bits(self.mask.bits() & mask.bits());
        let total: f64 = support.iter().map(|m| self.prob(m)).sum();
        if support.is_empty() || total <= 0.0 {
            return Err(Error::EmptyMask);
        }
        let probs = std::array::from_fn(|i| {
            if support.flags()[i] {
                self.probs[i] / total
            } else {
                0.0
            }
        });
        Ok(ActionDistribution {
            probs,
            mask: support,
        })
    }

    /// `(map, probability)` over the support, most likely first.
    pub fn ranked(&self) -> Vec<(MapId, f64)> {
        let mut v: Vec<_> = self.mask.iter().map(|m| (m, self.prob(m))).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }
}

/// Softmax of `scores` over `mask`, with the max subtracted before exponentiating.
pub fn softmax(scores: &[f64; N_MAPS], mask: MapSet) -> Result<ActionDistribution> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let max = mask
        .iter()
        .map(|m| scores[m.index()])
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("policy scores".into()));
    }
    let mut probs = [0.0; N_MAPS];
    let mut total = 0.0;
    for m in mask.iter() {
        let e = (scores[m.index()] - max).exp();
        probs[m.index()] = e;
        total += e;
    }
    for p in &mut probs {
        *p /= total;
    }
    Ok(ActionDistribution { probs, mask })
}

fn arm_set(context: &ContextVector, masked: bool) -> MapSet {
    if masked {
        context.available()
    } else {
        MapSet::FULL
    }
}

pub fn action_probabilities(
    params: &PolicyParameters,
    context: &ContextVector,
    masked: bool,
    block_offset: usize,
) -> Result<ActionDistribution> {
    let scores = params.scores(context, block_offset)?;
    softmax(&scores, arm_set(context, masked))
}

/// Expands per-arm coefficients `c` into the dense vector `Σ_i c_i φ(x, i)`.
fn expand_coefficients(
    coeffs: &[f64; N_MAPS],
    context: &ContextVector,
    blocks: usize,
    block_offset: usize,
) -> Vec<f64> {
    let mut grad = vec![0.0; blocks * CONTEXT_DIM];
    for (i, c) in coeffs.iter().enumerate() {
        if *c == 0.0 {
            continue;
        }
        let start = (block_offset + i) * CONTEXT_DIM;
        for (g, x) in grad[start..start + CONTEXT_DIM]
            .iter_mut()
            .zip(context.values())
        {
            *g = c * x;
        }
    }
    grad
}

/// Per-arm coefficients of `∇ log π(a|x) = φ(x,a) - Σ_i π(i|x) φ(x,i)`.
pub fn log_prob_coefficients(dist: &ActionDistribution, action: MapId) -> Result<[f64; N_MAPS]> {
    if !dist.mask().contains(action) {
        return Err(Error::Validation(format!(
            "{action} is outside the policy's arm set"
        )));
    }
    let mut coeffs = [0.0; N_MAPS];
    for m in dist.mask().iter() {
        coeffs[m.index()] = -dist.prob(m);
    }
    coeffs[action.index()] += 1.0;
    Ok(coeffs)
}

pub fn log_policy_gradient(
    params: &PolicyParameters,
    context: &ContextVector,
    action: MapId,
    masked: bool,
    block_offset: usize,
) -> Result<Vec<f64>> {
    let dist = action_probabilities(params, context, masked, block_offset)?;
    let coeffs = log_prob_coefficients(&dist, action)?;
    Ok(expand_coefficients(
        &coeffs,
        context,
        params.blocks(),
        block_offset,
    ))
}

pub fn derived_ban_probabilities(
    pick: &ActionDistribution,
    available: MapSet,
) -> Result<ActionDistribution> {
    let support = MapSet::from_bits(pick.mask().bits() & available.bits());
    if support.len() < 2 {
        return Err(Error::Validation(format!(
            "ban policy needs at least two candidate maps, got {}",
            support.len()
        )));
    }
    let denom: f64 = support.iter().map(|m| 1.0 - pick.prob(m)).sum();
    if denom <= 0.0 {
        return Err(Error::Validation("pick policy leaves no ban mass".into()));
    }
    let probs = std::array::from_fn(|i| {
        if support.flags()[i] {
            (1.0 - pick.probs()[i]) / denom
        } else {
            0.0
        }
    });
    Ok(ActionDistribution {
        probs,
        mask: support,
    })
}

/// Per-arm coefficients of `∇ log π_B(a|x)` where π_B is derived from the pick
/// softmax `pick` over `ban_set`.
///
/// With `g_α = ∇π_P(α) = π_α (φ_α - φ̄)`:
/// `∇ log π_B(a) = -g_a / (1 - π_a) + Σ_{α∈S} g_α / D`, `D = Σ_{α∈S} (1 - π_α)`.
pub fn derived_ban_log_coefficients(
    pick: &ActionDistribution,
    ban_set: MapSet,
    action: MapId,
) -> Result<[f64; N_MAPS]> {
    let support = MapSet::from_bits(pick.mask().bits() & ban_set.bits());
    if !support.contains(action) {
        return Err(Error::Validation(format!("{action} cannot be banned here")));
    }
    let pi = pick.probs();
    let one_minus = 1.0 - pi[action.index()];
    if one_minus <= 0.0 {
        return Err(Error::NonFinite(format!(
            "log ban probability of {action} (pick probability is 1)"
        )));
    }
    let denom: f64 = support.iter().map(|m| 1.0 - pi[m.index()]).sum();

    // g_α expressed in arm coefficients: π_α (e_α - π)
    let grad_pick = |alpha: usize| -> [f64; N_MAPS] {
        let mut c = [0.0; N_MAPS];
        for m in pick.mask().iter() {
            c[m.index()] = -pi[alpha] * pi[m.index()];
        }
        c[alpha] += pi[alpha];
        c
    };

    let mut coeffs = grad_pick(action.index()).map(|c| -c / one_minus);
    let mut sum_g = [0.0; N_MAPS];
    for m in support.iter() {
        for (s, c) in sum_g.iter_mut().zip(grad_pick(m.index())) {
            *s += c;
        }
    }
    for (c, s) in coeffs.iter_mut().zip(sum_g) {
        *c += s / denom;
    }
    Ok(coeffs)
}

/// Gradient of the derived ban log-probability with respect to the pick θ.
pub fn derived_ban_log_gradient(
    params: &PolicyParameters,
    context: &ContextVector,
    action: MapId,
    masked: bool,
) -> Result<Vec<f64>> {
    let set = arm_set(context, masked);
    let pick = action_probabilities(params, context, masked, 0)?;
    let coeffs = derived_ban_log_coefficients(&pick, set, action)?;
    Ok(expand_coefficients(&coeffs, context, params.blocks(), 0))
}

/// Inverse-CDF draw.
pub fn sample_action<R: Rng + ?Sized>(dist: &ActionDistribution, rng: &mut R) -> MapId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for m in dist.mask().iter() {
        let p = dist.prob(m);
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(m);
        if u < acc {
            return m;
        }
    }
    last.expect("validated distributions have positive mass")
}

/// A policy that can be evaluated on logged decisions.
pub trait TargetPolicy: Sync {
    /// Distribution over the record's available maps for the record's kind.
    fn distribution(&self, record: &DecisionRecord) -> Result<ActionDistribution>;

    fn label(&self) -> String;
}

/// Uniform over the maps available at the decision.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl TargetPolicy for UniformPolicy {
    fn distribution(&self, record: &DecisionRecord) -> Result<ActionDistribution> {
        ActionDistribution::uniform(record.available())
    }

    fn label(&self) -> String {
        "Uniform policy".into()
    }
}

/// Which parameter vector a gradient belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSlot {
    Main,
    SplitBan,
}

/// A trained (or zero-initialised) bandit of one of the three variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditPolicy {
    variant: Variant,
    /// Split: the pick bandit; Combo: the shared θ; Episodic: the double-width θ.
    main: PolicyParameters,
    /// Split only: the independent ban bandit.
    split_ban: Option<PolicyParameters>,
}

impl BanditPolicy {
    pub fn zeros(variant: Variant) -> Self {
        match variant {
            Variant::Split => BanditPolicy {
                variant,
                main: PolicyParameters::zeros(ParamRole::SplitPick),
                split_ban: Some(PolicyParameters::zeros(ParamRole::SplitBan)),
            },
            Variant::Combo => BanditPolicy {
                variant,
                main: PolicyParameters::zeros(ParamRole::Combo),
                split_ban: None,
            },
            Variant::Episodic => BanditPolicy {
                variant,
                main: PolicyParameters::zeros(ParamRole::Episodic),
                split_ban: None,
            },
        }
    }

    pub fn from_parameters(
        variant: Variant,
        main: PolicyParameters,
        split_ban: Option<PolicyParameters>,
    ) -> Result<Self> {
        let ok = match variant {
            Variant::Split => {
                main.role() == ParamRole::SplitPick
                    && split_ban.as_ref().map(|p| p.role()) == Some(ParamRole::SplitBan)
            }
            Variant::Combo => main.role() == ParamRole::Combo && split_ban.is_none(),
            Variant::Episodic => main.role() == ParamRole::Episodic && split_ban.is_none(),
        };
        if !ok {
            return Err(Error::Validation(format!(
                "parameter roles do not fit the {variant} variant"
            )));
        }
        Ok(BanditPolicy {
            variant,
            main,
            split_ban,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn main(&self) -> &PolicyParameters {
        &self.main
    }

    pub fn split_ban(&self) -> Option<&PolicyParameters> {
        self.split_ban.as_ref()
    }

    pub(crate) fn params_mut(&mut self, slot: ParamSlot) -> &mut PolicyParameters {
        match slot {
            ParamSlot::Main => &mut self.main,
            ParamSlot::SplitBan => self
                .split_ban
                .as_mut()
                .expect("only split policies route gradients to the ban slot"),
        }
    }

    pub fn pick_distribution(
        &self,
        context: &ContextVector,
        masked: bool,
    ) -> Result<ActionDistribution> {
        action_probabilities(&self.main, context, masked, 0)
    }

    pub fn ban_distribution(
        &self,
        context: &ContextVector,
        masked: bool,
    ) -> Result<ActionDistribution> {
        match self.variant {
            Variant::Split => action_probabilities(
                self.split_ban
                    .as_ref()
                    .expect("split policy has ban parameters"),
                context,
                masked,
                0,
            ),
            Variant::Combo => {
                let pick = self.pick_distribution(context, masked)?;
                derived_ban_probabilities(&pick, arm_set(context, masked))
            }
            Variant::Episodic => action_probabilities(&self.main, context, masked, N_MAPS),
        }
    }

    pub fn distribution_for(
        &self,
        context: &ContextVector,
        kind: ActionKind,
        masked: bool,
    ) -> Result<ActionDistribution> {
        match kind {
            ActionKind::Pick => self.pick_distribution(context, masked),
            ActionKind::Ban => self.ban_distribution(context, masked),
        }
    }

    /// `∇ log π(action | context)` for the given decision kind, and the
    /// parameter vector it applies to.
    pub fn log_gradient(
        &self,
        context: &ContextVector,
        kind: ActionKind,
        action: MapId,
        masked: bool,
    ) -> Result<(ParamSlot, Vec<f64>)> {
        match (self.variant, kind) {
            (_, ActionKind::Pick) => Ok((
                ParamSlot::Main,
                log_policy_gradient(&self.main, context, action, masked, 0)?,
            )),
            (Variant::Split, ActionKind::Ban) => Ok((
                ParamSlot::SplitBan,
                log_policy_gradient(
                    self.split_ban
                        .as_ref()
                        .expect("split policy has ban parameters"),
                    context,
                    action,
                    masked,
                    0,
                )?,
            )),
            (Variant::Combo, ActionKind::Ban) => Ok((
                ParamSlot::Main,
                derived_ban_log_gradient(&self.main, context, action, masked)?,
            )),
            (Variant::Episodic, ActionKind::Ban) => Ok((
                ParamSlot::Main,
                log_policy_gradient(&self.main, context, action, masked, N_MAPS)?,
            )),
        }
    }
}

impl TargetPolicy for BanditPolicy {
    fn distribution(&self, record: &DecisionRecord) -> Result<ActionDistribution> {
        self.distribution_for(&record.context, record.kind, true)
    }

    fn label(&self) -> String {
        self.variant.display_name().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_context, feature_map, TeamRecord};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fresh_context(available: MapSet) -> ContextVector {
        build_context(&TeamRecord::default(), &TeamRecord::default(), available).unwrap()
    }

    fn mask_of(indices: &[usize]) -> MapSet {
        indices.iter().map(|i| MapId::new(*i).unwrap()).collect()
    }

    #[test]
    fn zero_theta_is_uniform() {
        let p = PolicyParameters::zeros(ParamRole::Combo);
        let d = action_probabilities(&p, &fresh_context(MapSet::FULL), false, 0).unwrap();
        for q in d.probs() {
            assert!((q - 1.0 / 7.0).abs() < 1e-15);
        }
        let three = mask_of(&[1, 4, 6]);
        let d = action_probabilities(&p, &fresh_context(three), true, 0).unwrap();
        for m in MapId::ALL {
            let want = if three.contains(m) { 1.0 / 3.0 } else { 0.0 };
            assert!((d.prob(m) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn two_arm_closed_form() {
        // arm 0 scores ln 2 and arm 1 scores 0 via the first availability flag
        let mut theta = vec![0.0; ParamRole::SplitPick.dim()];
        theta[0] = std::f64::consts::LN_2;
        let p = PolicyParameters::from_theta(ParamRole::SplitPick, theta).unwrap();
        let d = action_probabilities(&p, &fresh_context(mask_of(&[0, 1])), true, 0).unwrap();
        assert!((d.prob(MapId::new(0).unwrap()) - 2.0 / 3.0).abs() < 1e-12);
        assert!((d.prob(MapId::new(1).unwrap()) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_an_error() {
        assert!(matches!(
            softmax(&[0.0; 7], MapSet::EMPTY),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn uniform_gradient_blocks() {
        let x = fresh_context(MapSet::FULL);
        let p = PolicyParameters::zeros(ParamRole::SplitPick);
        let a = MapId::new(3).unwrap();
        let g = log_policy_gradient(&p, &x, a, false, 0).unwrap();
        for b in 0..7 {
            let want = if b == 3 { 6.0 / 7.0 } else { -1.0 / 7.0 };
            for j in 0..CONTEXT_DIM {
                assert!((g[b * CONTEXT_DIM + j] - want * x.values()[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn forced_arm_has_zero_gradient() {
        let x = fresh_context(mask_of(&[5]));
        let p = PolicyParameters::zeros(ParamRole::SplitPick);
        let g = log_policy_gradient(&p, &x, MapId::new(5).unwrap(), true, 0).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn derived_ban_examples() {
        let uni = ActionDistribution::uniform(MapSet::FULL).unwrap();
        let b = derived_ban_probabilities(&uni, MapSet::FULL).unwrap();
        for p in b.probs() {
            assert!((p - 1.0 / 7.0).abs() < 1e-15);
        }

        let three = mask_of(&[0, 1, 2]);
        let pick = ActionDistribution::new([0.5, 0.3, 0.2, 0.0, 0.0, 0.0, 0.0], three).unwrap();
        let b = derived_ban_probabilities(&pick, three).unwrap();
        let want = [0.25, 0.35, 0.40];
        for (p, w) in b.probs().iter().zip(want) {
            assert!((p - w).abs() < 1e-12);
        }

        let sure = ActionDistribution::point_mass(MapId::new(1).unwrap(), three).unwrap();
        let b = derived_ban_probabilities(&sure, three).unwrap();
        assert_eq!(b.prob(MapId::new(1).unwrap()), 0.0);
        assert!((b.prob(MapId::new(0).unwrap()) - 0.5).abs() < 1e-15);

        let single = ActionDistribution::uniform(mask_of(&[4])).unwrap();
        assert!(derived_ban_probabilities(&single, mask_of(&[4])).is_err());
    }

    #[test]
    fn sampling_point_mass_and_determinism() {
        let m3 = MapId::new(3).unwrap();
        let d = ActionDistribution::point_mass(m3, MapSet::FULL).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| sample_action(&d, &mut rng) == m3));

        let u = ActionDistribution::uniform(MapSet::FULL).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| sample_action(&u, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn sampling_frequencies_match() {
        let probs = [0.05, 0.1, 0.25, 0.0, 0.3, 0.2, 0.1];
        let d = ActionDistribution::new(probs, MapSet::FULL).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut counts = [0usize; 7];
        for _ in 0..n {
            counts[sample_action(&d, &mut rng).index()] += 1;
        }
        for i in 0..7 {
            assert!((counts[i] as f64 / n as f64 - probs[i]).abs() < 0.01);
        }
        assert_eq!(counts[3], 0);
    }

    #[test]
    fn combo_pick_changes_move_ban_probabilities() {
        let x = fresh_context(MapSet::FULL);
        let mut policy = BanditPolicy::zeros(Variant::Combo);
        let before = policy.ban_distribution(&x, true).unwrap();
        let m = MapId::new(2).unwrap();
        let (slot, grad) = policy.log_gradient(&x, ActionKind::Pick, m, true).unwrap();
        for (t, g) in policy.params_mut(slot).theta_mut().iter_mut().zip(grad) {
            *t += g;
        }
        let after = policy.ban_distribution(&x, true).unwrap();
        assert!(after.prob(m) < before.prob(m));
        assert_ne!(before, after);
    }

    #[test]
    fn ranked_is_descending() {
        let d =
            ActionDistribution::new([0.1, 0.4, 0.0, 0.2, 0.3, 0.0, 0.0], mask_of(&[0, 1, 3, 4]))
                .unwrap();
        let r = d.ranked();
        assert_eq!(r.len(), 4);
        assert!(r.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    fn context_strategy() -> impl Strategy<Value = ContextVector> {
        (1u8..128, prop::collection::vec(0.01f64..0.99, 16)).prop_map(|(bits, rates)| {
            let mut v = [0.0; CONTEXT_DIM];
            for (i, x) in v.iter_mut().take(7).enumerate() {
                *x = if bits & (1 << i) != 0 { 1.0 } else { 0.0 };
            }
            v[7..].copy_from_slice(&rates);
            ContextVector::from_values(v).unwrap()
        })
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(
            theta in prop::collection::vec(-5.0f64..5.0, 161),
            x in context_strategy(),
            masked in any::<bool>(),
        ) {
            let p = PolicyParameters::from_theta(ParamRole::Combo, theta).unwrap();
            let d = action_probabilities(&p, &x, masked, 0).unwrap();
            let total: f64 = d.probs().iter().sum();
            prop_assert!((total - 1.0).abs() < PROB_TOLERANCE);
            if masked {
                for m in MapId::ALL {
                    if !x.available().contains(m) {
                        prop_assert_eq!(d.prob(m), 0.0);
                    }
                }
            }
        }

        #[test]
        fn softmax_is_shift_invariant(
            scores in prop::array::uniform7(-20.0f64..20.0),
            shift in -50.0f64..50.0,
            bits in 1u8..128,
        ) {
            let mask = MapSet::from_bits(bits);
            let a = softmax(&scores, mask).unwrap();
            let b = softmax(&scores.map(|s| s + shift), mask).unwrap();
            for i in 0..7 {
                prop_assert!((a.probs()[i] - b.probs()[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn restricting_twice_is_idempotent(
            scores in prop::array::uniform7(-5.0f64..5.0),
            bits in 1u8..128,
        ) {
            let mask = MapSet::from_bits(bits);
            let d = softmax(&scores, MapSet::FULL).unwrap();
            let once = d.restrict(mask).unwrap();
            let twice = once.restrict(mask).unwrap();
            for i in 0..7 {
                prop_assert!((once.probs()[i] - twice.probs()[i]).abs() < 1e-15);
            }
        }

        #[test]
        fn score_uses_only_the_action_block(
            theta in prop::collection::vec(-3.0f64..3.0, 161),
            x in context_strategy(),
            arm in 0usize..7,
        ) {
            let a = MapId::new(arm).unwrap();
            let p = PolicyParameters::from_theta(ParamRole::SplitPick, theta.clone()).unwrap();
            let dense = feature_map(&x, a, 7, 0).unwrap().dot(&theta);
            let block = p.scores(&x, 0).unwrap()[arm];
            prop_assert!((dense - block).abs() < 1e-12);
        }
    }
}
