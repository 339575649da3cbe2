//! Cross-module checks against independently computed answers.

use veto_core::data_io::{
    build_decision_dataset, filter_dataset, parse_match_log_bytes, write_match_log, FilterReport,
    StatsMode,
};
use veto_core::domain::{ActionKind, DecisionRecord};
use veto_core::ope::{on_policy_value, sn_iw_value, Setting, SnIwConfig};
use veto_core::rewards::RewardKind;
use veto_core::simulator::{
    generate_ecosystem, simulate_season, true_policy_value, SimBehaviorPolicy,
};
use veto_core::training::{grid_search, train, GridPoint, TrainingConfig};

fn season_records(teams: usize, matches: usize, seed: u64) -> Vec<DecisionRecord> {
    let eco = generate_ecosystem(teams, seed).unwrap();
    let season = simulate_season(&eco, matches, seed).unwrap();
    build_decision_dataset(&season, RewardKind::ZeroOne, StatsMode::Running)
        .unwrap()
        .records
}

#[test]
fn behavior_truth_matches_the_observed_mean() {
    // Rao-Blackwellised truth of the behavior policy and the realised rewards
    // of an independent season estimate the same quantity.
    let eco = generate_ecosystem(12, 8).unwrap();
    let season = simulate_season(&eco, 6_000, 81).unwrap();
    let records = build_decision_dataset(&season, RewardKind::ZeroOne, StatsMode::Running)
        .unwrap()
        .records;
    for kind in [ActionKind::Pick, ActionKind::Ban] {
        let setting = Setting {
            kind,
            reward: RewardKind::ZeroOne,
        };
        let truth =
            true_policy_value(&eco, &SimBehaviorPolicy { eco: &eco }, setting, 6_000, 82).unwrap();
        let kind_records: Vec<DecisionRecord> =
            records.iter().filter(|r| r.kind == kind).cloned().collect();
        let mean = on_policy_value(&kind_records).unwrap().value;
        // decisions within a match are correlated, so the error is taken over match means
        let per_match: Vec<f64> = kind_records
            .chunk_by(|a, b| a.match_id == b.match_id)
            .map(|c| c.iter().map(|r| r.reward.unwrap()).sum::<f64>() / c.len() as f64)
            .collect();
        let n = per_match.len() as f64;
        let var = per_match.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt().hypot(truth.standard_error);
        assert!(
            (mean - truth.value).abs() < 3.0 * se,
            "{kind}: mean {mean} truth {} se {se}",
            truth.value
        );
    }
}

#[test]
fn grid_search_picks_the_best_validation_score() {
    let records = season_records(10, 1_500, 4);
    let grid = [
        GridPoint {
            learning_rate: 0.5,
            epochs: 1,
        },
        GridPoint {
            learning_rate: 0.001,
            epochs: 2,
        },
        GridPoint {
            learning_rate: 0.1,
            epochs: 1,
        },
    ];
    let base = TrainingConfig::default();
    let sn = SnIwConfig::default();
    let result = grid_search(&records, 0.2, &grid, &base, &sn).unwrap();

    // recompute by hand: last 20% of the 1500 matches validate
    let cut = 1_200 * 6;
    let (fit, validate) = records.split_at(cut);
    let picks: Vec<DecisionRecord> = validate
        .iter()
        .filter(|r| r.kind == ActionKind::Pick)
        .cloned()
        .collect();
    let scores: Vec<f64> = grid
        .iter()
        .map(|p| {
            let cfg = TrainingConfig {
                learning_rate: p.learning_rate,
                epochs: p.epochs,
                ..base.clone()
            };
            sn_iw_value(&train(fit, &cfg).unwrap().policy, &picks, &sn)
                .unwrap()
                .value
        })
        .collect();
    let best = (0..grid.len())
        .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
        .unwrap();
    assert_eq!(result.best.learning_rate, grid[best].learning_rate);
    assert_eq!(result.best.epochs, grid[best].epochs);
    for (s, want) in result.scores.iter().zip(&scores) {
        assert_eq!(s.validation_value, *want);
    }
}

#[test]
fn filter_report_survives_json_and_counts_duplicates() {
    let eco = generate_ecosystem(8, 2).unwrap();
    let season = simulate_season(&eco, 300, 2).unwrap();
    let mut log = Vec::new();
    write_match_log(&mut log, &season).unwrap();
    write_match_log(&mut log, &season[..10]).unwrap();
    let parsed = parse_match_log_bytes(&log).unwrap();
    let (kept, report) = filter_dataset(parsed.matches, 25);
    assert_eq!(report.input_matches, 310);
    assert_eq!(report.removed_duplicate_matches, 10);
    assert_eq!(kept.len(), report.retained_matches);
    assert!(report.reconciles());
    let text = serde_json::to_string(&report).unwrap();
    let back: FilterReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
}
