//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so every line is printed even
//! when an earlier criterion fails; the process exits non-zero on any FAIL.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use veto_core::data_io::{
    build_decision_dataset, build_split_datasets, chronological_split, filter_dataset,
    parse_match_log, write_match_log, StatsMode,
};
use veto_core::domain::{
    ActionKind, DecisionRecord, MapId, MapSet, MatchRecord, Side, VetoState, N_MAPS,
};
use veto_core::features::{smoothed_win_rate, ContextVector, CONTEXT_DIM};
use veto_core::ope::{
    dm_value, evaluation_grid, fit_reward_model, on_policy_value, sn_iw_value, DmConfig,
    GridConfig, ModelRow, Setting, SnIwConfig,
};
use veto_core::policy::{
    action_probabilities, derived_ban_probabilities, fit_behavior_policy, log_policy_gradient,
    ActionDistribution, BanditPolicy, BehaviorFitConfig, ParamRole, PolicyParameters, TargetPolicy,
    UniformPolicy, Variant,
};
use veto_core::rewards::{ban_reward, pick_reward_mor, RewardKind};
use veto_core::simulator::{
    build_truth_table, generate_ecosystem, simulate_season, SimBehaviorPolicy, SyntheticEcosystem,
    TruthTable,
};
use veto_core::training::{train, train_with_checkpoints, TrainingConfig};
use veto_core::Result;

type Outcome = std::result::Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn lift(r: Result<Outcome>) -> Outcome {
    r.unwrap_or_else(|e| Err(format!("error: {e}")))
}

// ---------------------------------------------------------------- formulas

fn formula_exactness() -> Outcome {
    lift((|| {
        let game = veto_core::domain::GameResult::new(MapId::ALL[0], 16, 14)?;
        let got = [
            smoothed_win_rate(20, 30)?,
            pick_reward_mor(&game, Side::A)?,
            ban_reward(true, 1)?,
            ban_reward(false, 2)?,
            ban_reward(true, 4)?,
        ];
        let want = [0.625, 2.0 / 30.0, 0.5, -0.25, 0.0625];
        let err = got
            .iter()
            .zip(want)
            .map(|(g, w)| (g - w).abs())
            .fold(0.0, f64::max);
        Ok(check(err <= 1e-12, format!("max abs error {err:.1e}")))
    })())
}

// ------------------------------------------------------ softmax / gradients

fn random_context(rng: &mut ChaCha8Rng, min_maps: usize) -> ContextVector {
    loop {
        let bits: u8 = rng.random_range(1..128);
        let mask = MapSet::from_bits(bits);
        if mask.len() < min_maps {
            continue;
        }
        let mut v = [0.0; CONTEXT_DIM];
        for m in mask.iter() {
            v[m.index()] = 1.0;
        }
        for x in v.iter_mut().skip(N_MAPS) {
            *x = rng.random_range(0.05..0.95);
        }
        return ContextVector::from_values(v).unwrap();
    }
}

/// `‖a − n‖ / (‖n‖ + floor)`. The floor absorbs difference-quotient roundoff
/// (about ε·|log π| / h per coordinate) where the true gradient nearly vanishes.
fn rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / (scale + floor).max(f64::MIN_POSITIVE)
}

const ROUNDOFF_FLOOR: f64 = 1e-4;

fn central_difference(theta: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            let orig = t[k];
            t[k] = orig + h;
            let up = f(&t);
            t[k] = orig - h;
            let down = f(&t);
            t[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn softmax_gradient_suite() -> Outcome {
    lift((|| {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let trials = 1000;
        let mut worst_sum = 0.0f64;
        let (mut worst_pick, mut worst_ban, mut raw_ban) = (0.0f64, 0.0f64, 0.0f64);
        for t in 0..trials {
            let masked = t % 5 != 0;
            // plain softmax: split-sized θ, and the episodic ban block
            let (role, offset) = if t % 2 == 0 {
                (ParamRole::SplitPick, 0)
            } else {
                (ParamRole::Episodic, 7)
            };
            let theta: Vec<f64> = (0..role.dim())
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            let x = random_context(&mut rng, 2);
            let params = PolicyParameters::from_theta(role, theta.clone())?;
            let dist = action_probabilities(&params, &x, masked, offset)?;
            worst_sum = worst_sum.max((dist.probs().iter().sum::<f64>() - 1.0).abs());

            let support: Vec<MapId> = dist.mask().iter().collect();
            let a = support[rng.random_range(0..support.len())];
            let g = log_policy_gradient(&params, &x, a, masked, offset)?;
            let fd = central_difference(&theta, |th| {
                let p = PolicyParameters::from_theta(role, th.to_vec()).unwrap();
                action_probabilities(&p, &x, masked, offset)
                    .unwrap()
                    .prob(a)
                    .ln()
            });
            worst_pick = worst_pick.max(rel_error(&g, &fd, ROUNDOFF_FLOOR));

            // ban gradient composed through the combo pick softmax
            let theta: Vec<f64> = (0..ParamRole::Combo.dim())
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            let combo = |th: &[f64]| {
                BanditPolicy::from_parameters(
                    Variant::Combo,
                    PolicyParameters::from_theta(ParamRole::Combo, th.to_vec()).unwrap(),
                    None,
                )
                .unwrap()
            };
            let policy = combo(&theta);
            let ban = policy.ban_distribution(&x, masked)?;
            worst_sum = worst_sum.max((ban.probs().iter().sum::<f64>() - 1.0).abs());
            let support: Vec<MapId> = ban.mask().iter().collect();
            let a = support[rng.random_range(0..support.len())];
            let (_, g) = policy.log_gradient(&x, ActionKind::Ban, a, masked)?;
            let fd = central_difference(&theta, |th| {
                combo(th).ban_distribution(&x, masked).unwrap().prob(a).ln()
            });
            worst_ban = worst_ban.max(rel_error(&g, &fd, ROUNDOFF_FLOOR));
            raw_ban = raw_ban.max(rel_error(&g, &fd, 0.0));
        }
        Ok(check(
            worst_sum <= 1e-9 && worst_pick <= 1e-5 && worst_ban <= 1e-5,
            format!(
                "{trials} triples; max |Σπ-1| {worst_sum:.1e}; pick gradient err {worst_pick:.1e}; \
                 derived ban gradient err {worst_ban:.1e} (unfloored {raw_ban:.1e})"
            ),
        ))
    })())
}

fn derived_ban_checks() -> Outcome {
    lift((|| {
        let three = MapSet::from_iter(MapId::ALL[..3].iter().copied());
        let uniform = ActionDistribution::uniform(MapSet::FULL)?;
        let derived = derived_ban_probabilities(&uniform, MapSet::FULL)?;
        // (1 - 1/7) / 6 and 1/7 differ in the last ulp
        let uniform_ok = derived.mask() == uniform.mask()
            && derived
                .probs()
                .iter()
                .zip(uniform.probs())
                .all(|(a, b)| (a - b).abs() <= 1e-15);

        let mut probs = [0.0; N_MAPS];
        probs[..3].copy_from_slice(&[0.5, 0.3, 0.2]);
        let d = derived_ban_probabilities(&ActionDistribution::new(probs, three)?, three)?;
        let err = [0.25, 0.35, 0.40]
            .iter()
            .enumerate()
            .map(|(i, w)| (d.probs()[i] - w).abs())
            .fold(0.0, f64::max);

        let sure = ActionDistribution::point_mass(MapId::ALL[1], three)?;
        let d = derived_ban_probabilities(&sure, three)?;
        let sure_ok = d.prob(MapId::ALL[1]) == 0.0;
        Ok(check(
            uniform_ok && err <= 1e-12 && sure_ok,
            format!("uniform->uniform {uniform_ok}, (0.5,0.3,0.2) err {err:.1e}, sure pick banned with p=0 {sure_ok}"),
        ))
    })())
}

// ------------------------------------------------------------ veto machine

fn veto_machine(eco: &SyntheticEcosystem) -> Outcome {
    lift((|| {
        // the turn order written out independently of the crate's table
        let order = ["A ban", "B ban", "A pick", "B pick", "A ban", "B ban"];
        let mut mismatches = 0;
        let mut state = VetoState::new("A", "B")?;
        for step in 0..=6 {
            let due = order.get(step);
            for team in ["A", "B"] {
                for kind in [ActionKind::Pick, ActionKind::Ban] {
                    let map = state.available().iter().next().unwrap();
                    let legal = state.apply_decision(team, kind, map).is_ok();
                    let expected = due.is_some_and(|d| *d == format!("{team} {kind}"));
                    if legal != expected {
                        mismatches += 1;
                    }
                }
            }
            if let Some(due) = due {
                let (team, kind) = due.split_once(' ').unwrap();
                let map = state.available().iter().last().unwrap();
                state = state.apply_decision(team, kind.parse()?, map)?;
            }
        }

        let season = simulate_season(eco, 10_000, 77)?;
        let mut violations = 0;
        for m in &season {
            violations += replay_violations(m);
        }
        Ok(check(
            mismatches == 0 && violations == 0,
            format!("28 legality cells, {mismatches} mismatches; 10000 simulated vetoes, {violations} violations"),
        ))
    })())
}

fn replay_violations(m: &MatchRecord) -> usize {
    let mut bad = 0;
    let Ok(mut state) = VetoState::new(m.team_a(), m.team_b()) else {
        return 1;
    };
    let mut used = BTreeSet::new();
    for (step, d) in m.veto().decisions().iter().enumerate() {
        if state.available().len() != 7 - step || !used.insert(d.map) {
            bad += 1;
        }
        match state.apply_decision(&d.team, d.kind, d.map) {
            Ok(s) => state = s,
            Err(_) => return bad + 1,
        }
    }
    if state.available().len() != 1 || state.decider().ok() != state.available().iter().next() {
        bad += 1;
    }
    let mut maps = state.picks();
    maps.push(state.decider().unwrap());
    let played: Vec<MapId> = m.games().iter().map(|g| g.map).collect();
    if played[..] != maps[..played.len()] {
        bad += 1;
    }
    let wins = m
        .games()
        .iter()
        .filter(|g| g.winner() == m.winner_side())
        .count();
    if wins != 2 {
        bad += 1;
    }
    if m.propensities()
        .is_none_or(|p| p.iter().any(|&x| !(x > 0.0 && x <= 1.0)))
    {
        bad += 1;
    }
    bad
}

// ------------------------------------------------------------ OPE oracle

struct OpeFixture {
    records: Vec<DecisionRecord>,
    truth: TruthTable,
    combo: BanditPolicy,
}

fn exact() -> SnIwConfig {
    SnIwConfig {
        propensity_floor: None,
        weight_cap: None,
    }
}

fn ope_oracle(eco: &SyntheticEcosystem, fx: &OpeFixture) -> Outcome {
    lift((|| {
        let behavior = SimBehaviorPolicy { eco };
        let targets: [(&str, &dyn TargetPolicy); 3] = [
            ("uniform", &UniformPolicy),
            ("behavior", &behavior),
            ("combo", &fx.combo),
        ];
        let dm_cfg = DmConfig {
            propensity_floor: None,
            ..DmConfig::default()
        };
        let mut lines = Vec::new();
        let mut ok = true;
        for kind in [ActionKind::Pick, ActionKind::Ban] {
            let tol = if kind == ActionKind::Pick { 0.02 } else { 0.01 };
            let setting = Setting {
                kind,
                reward: RewardKind::ZeroOne,
            };
            let recs: Vec<DecisionRecord> = fx
                .records
                .iter()
                .filter(|r| r.kind == kind)
                .cloned()
                .collect();
            for (name, target) in targets {
                let truth = fx.truth.value(target, setting)?;
                let sn = sn_iw_value(target, &recs, &exact())?.value;
                let model = fit_reward_model(&recs, target, &dm_cfg)?;
                let dm = dm_value(target, &recs, &model)?.value;
                let pass = (sn - truth.value).abs() <= tol && (dm - truth.value).abs() <= tol;
                ok &= pass;
                lines.push(format!(
                    "{kind}/{name}: truth {:.4}±{:.4} sn-iw {sn:.4} dm {dm:.4}{}",
                    truth.value,
                    truth.standard_error,
                    if pass { "" } else { " <-" }
                ));
            }
        }
        Ok(check(ok, lines.join("; ")))
    })())
}

fn identity_baseline(eco: &SyntheticEcosystem, fx: &OpeFixture) -> Outcome {
    lift((|| {
        let behavior = SimBehaviorPolicy { eco };
        let mut ok = true;
        let mut detail = Vec::new();
        for kind in [ActionKind::Pick, ActionKind::Ban] {
            let recs: Vec<DecisionRecord> = fx
                .records
                .iter()
                .filter(|r| r.kind == kind)
                .cloned()
                .collect();
            let unit = recs
                .iter()
                .all(|r| veto_core::ope::importance_weight(&behavior, r, &exact()).unwrap() == 1.0);
            let sn = sn_iw_value(&behavior, &recs, &exact())?.value;
            let mean = on_policy_value(&recs)?.value;
            ok &= unit && sn == mean;
            detail.push(format!(
                "{kind}: weights all 1 {unit}, sn-iw {sn} vs mean {mean}"
            ));
        }
        Ok(check(ok, detail.join("; ")))
    })())
}

// ----------------------------------------------------------- learning curve

fn learning_curve(eco: &SyntheticEcosystem) -> Outcome {
    lift((|| {
        let season = simulate_season(eco, 4_000, 41)?;
        let data =
            build_decision_dataset(&season, RewardKind::ZeroOne, StatsMode::Running)?.records;
        let truth = build_truth_table(eco, 5_000, 42)?;
        let pick = Setting {
            kind: ActionKind::Pick,
            reward: RewardKind::ZeroOne,
        };
        let ban = Setting {
            kind: ActionKind::Ban,
            reward: RewardKind::ZeroOne,
        };
        let uniform = truth.value(&UniformPolicy, pick)?.value;
        let cfg = TrainingConfig {
            variant: Variant::Combo,
            learning_rate: 0.1,
            epochs: 3,
            checkpoint_every: 100,
            ..TrainingConfig::default()
        };
        let trained = train_with_checkpoints(&data, &cfg, |p| {
            Ok((truth.value(p, pick)?.value, truth.value(p, ban)?.value))
        })?;
        let first_epoch_cross = trained
            .checkpoints
            .iter()
            .filter(|c| c.epoch <= 1)
            .find(|c| c.pick_value > uniform);
        let last = trained.checkpoints.last().unwrap();
        let gain = last.pick_value - uniform;
        Ok(check(
            first_epoch_cross.is_some() && gain >= 0.03,
            format!(
                "{} checkpoints; uniform {uniform:.4}; first crossing at decision {}; final {:.4} (gain {gain:+.4})",
                trained.checkpoints.len(),
                first_epoch_cross.map_or("none".into(), |c| c.index.to_string()),
                last.pick_value
            ),
        ))
    })())
}

// ------------------------------------------------------ pipeline structure

fn pipeline(eco: &SyntheticEcosystem) -> Outcome {
    lift((|| {
        let season = simulate_season(eco, 3_000, 51)?;
        let mut log = Vec::new();
        write_match_log(&mut log, &season)?;
        let parsed = parse_match_log(&log[..])?;
        if !parsed.errors.is_empty() {
            return Ok(Err(format!("{} parse errors", parsed.errors.len())));
        }
        let (kept, _) = filter_dataset(parsed.matches, veto_core::data_io::MIN_GAMES);
        let (train_m, test_m) = chronological_split(kept, 0.2)?;
        let (train_01, mut test) = build_split_datasets(&train_m, &test_m, RewardKind::ZeroOne)?;
        let (train_mor, _) = build_split_datasets(&train_m, &test_m, RewardKind::MarginOfRounds)?;
        // logged propensities are ignored: the behavior clone stands in for them
        let behavior = fit_behavior_policy(&train_01, &BehaviorFitConfig::default())?;
        behavior.attach_propensities(&mut test)?;

        let mut models = Vec::new();
        for v in Variant::ALL {
            let cfg = |reward_kind| TrainingConfig {
                variant: v,
                reward_kind,
                learning_rate: 0.1,
                epochs: 1,
                ..TrainingConfig::default()
            };
            let zo = train(&train_01, &cfg(RewardKind::ZeroOne))?.policy;
            let mor = train(&train_mor, &cfg(RewardKind::MarginOfRounds))?.policy;
            models.push((v, zo, mor));
        }
        let rows: Vec<ModelRow> = models
            .iter()
            .map(|(v, zo, mor)| ModelRow {
                label: v.display_name().into(),
                zero_one: zo,
                mor,
            })
            .collect();
        let grid = evaluation_grid(&rows, &test, &GridConfig::default())?;

        let shape = grid.rows.len() == 5
            && grid.rows.iter().all(|r| {
                r.cells.len() == 4
                    && r.cells
                        .iter()
                        .all(|c| c.sn_iw.value.is_finite() && c.dm.value.is_finite())
            });
        let mean = |kind| {
            let rs: Vec<f64> = test
                .iter()
                .filter(|r| r.kind == kind)
                .map(|r| r.reward.unwrap())
                .collect();
            rs.iter().sum::<f64>() / rs.len() as f64
        };
        let logging = grid.row("Logging policy").unwrap();
        let logging_ok = logging.cells.iter().all(|c| {
            let m = mean(c.setting.kind);
            c.sn_iw.value == m && c.dm.value == m
        });
        let split = grid.row("SplitBandit").unwrap();
        let split_ok = split.cells[2].sn_iw.value == split.cells[3].sn_iw.value
            && split.cells[2].dm.value == split.cells[3].dm.value;
        Ok(check(
            shape && logging_ok && split_ok,
            format!(
                "{} rows x 4 settings x 2 estimators {shape}; logging row = mean {logging_ok}; split ban columns identical {split_ok}",
                grid.rows.len()
            ),
        ))
    })())
}

// ----------------------------------------------------------- filter oracle

/// The largest team set in which everyone has ≥ `min` games, by enumerating
/// every subset. Valid sets are closed under union, so the union of all of
/// them is the answer.
fn brute_force_retained(teams: &[String], matches: &[MatchRecord], min: u32) -> BTreeSet<String> {
    let n = teams.len();
    let idx = |t: &str| teams.iter().position(|x| x == t).unwrap();
    let edges: Vec<(usize, usize, u32)> = matches
        .iter()
        .map(|m| (idx(m.team_a()), idx(m.team_b()), m.games().len() as u32))
        .collect();
    let mut union = 0u32;
    for subset in 1u32..(1 << n) {
        let mut games = vec![0u32; n];
        for &(a, b, g) in &edges {
            if subset >> a & 1 == 1 && subset >> b & 1 == 1 {
                games[a] += g;
                games[b] += g;
            }
        }
        if (0..n).all(|t| subset >> t & 1 == 0 || games[t] >= min) {
            union |= subset;
        }
    }
    (0..n)
        .filter(|t| union >> t & 1 == 1)
        .map(|t| teams[t].clone())
        .collect()
}

fn filter_fixed_point() -> Outcome {
    lift((|| {
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let mut mismatches = 0;
        let mut nontrivial = 0;
        for e in 0..50 {
            let n_teams = rng.random_range(4..=10);
            let eco = generate_ecosystem(n_teams, 1000 + e)?;
            // sparse schedules put many teams near the threshold
            let n_matches = rng.random_range(n_teams * 2..n_teams * 9);
            let season = simulate_season(&eco, n_matches, e)?;
            let teams: Vec<String> = eco.teams.iter().map(|t| t.id.clone()).collect();
            let want = brute_force_retained(&teams, &season, 25);
            let (kept, report) = filter_dataset(season.clone(), 25);
            let got: BTreeSet<String> = kept
                .iter()
                .flat_map(|m| [m.team_a().to_string(), m.team_b().to_string()])
                .collect();
            let want_matches = season
                .iter()
                .filter(|m| want.contains(m.team_a()) && want.contains(m.team_b()))
                .count();
            if got != want || kept.len() != want_matches || !report.reconciles() {
                mismatches += 1;
            }
            if report.iterations > 1 && !want.is_empty() {
                nontrivial += 1;
            }
        }
        Ok(check(
            mismatches == 0,
            format!("50 ecosystems, {mismatches} mismatches ({nontrivial} needed several removal rounds)"),
        ))
    })())
}

fn main() {
    let start = Instant::now();
    let eco = generate_ecosystem(24, 2024).expect("ecosystem");
    let mut failures = 0;
    let mut report = |name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!(
            "[{tag}] {name}: {detail} ({:.1}s)",
            start.elapsed().as_secs_f64()
        );
    };

    report("formula exactness", formula_exactness());
    report("softmax/gradient suite", softmax_gradient_suite());
    report("derived ban checks", derived_ban_checks());
    report("veto machine", veto_machine(&eco));

    let fixture = (|| -> Result<OpeFixture> {
        let season = simulate_season(&eco, 25_000, 61)?;
        let records =
            build_decision_dataset(&season, RewardKind::ZeroOne, StatsMode::Running)?.records;
        let train_season = simulate_season(&eco, 5_000, 62)?;
        let train_records =
            build_decision_dataset(&train_season, RewardKind::ZeroOne, StatsMode::Running)?.records;
        let combo = train(
            &train_records,
            &TrainingConfig {
                variant: Variant::Combo,
                learning_rate: 0.1,
                epochs: 1,
                ..Default::default()
            },
        )?
        .policy;
        let truth = build_truth_table(&eco, 50_000, 63)?;
        Ok(OpeFixture {
            records,
            truth,
            combo,
        })
    })();
    match fixture {
        Ok(fx) => {
            report("OPE oracle equivalence", ope_oracle(&eco, &fx));
            report("identity baseline", identity_baseline(&eco, &fx));
        }
        Err(e) => {
            report("OPE oracle equivalence", Err(format!("fixture: {e}")));
            report("identity baseline", Err(format!("fixture: {e}")));
        }
    }
    report("learning curve", learning_curve(&eco));
    report("pipeline grid", pipeline(&eco));
    report("filter fixed point", filter_fixed_point());

    println!("{failures} of 9 criteria failed");
    if failures > 0 {
        std::process::exit(1);
    }
}
