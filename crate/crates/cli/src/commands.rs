use std::io::{Read, Write};
use std::net::SocketAddr;
use std::path::Path;

use veto_advisor::{LoadedModel, Snapshot};
use veto_core::data_io::{
    build_decision_dataset, build_split_datasets, chronological_split, filter_dataset,
    parse_match_log_bytes, read_decisions_csv, sort_chronologically, write_decisions_csv,
    write_match_log, StatsMode,
};
use veto_core::domain::{ActionKind, DecisionRecord};
use veto_core::draft::{parse_draft_state, Recommendation};
use veto_core::features::StatsBook;
use veto_core::model_io::{decode_model, encode_model, sha256_hex};
use veto_core::ope::{evaluation_grid, sn_iw_value, DmConfig, GridConfig, ModelRow, SnIwConfig};
use veto_core::policy::{fit_behavior_policy, BanditPolicy, BehaviorFitConfig, Variant};
use veto_core::rewards::RewardKind;
use veto_core::simulator::{generate_ecosystem, simulate_season};
use veto_core::training::{
    default_grid, grid_search, train_with_checkpoints, CheckpointUnit, TrainingConfig,
};

use crate::config::{Command, Resolved};
use crate::{meta_path, read_file, CliError, Manifest};

fn say(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(|e| CliError::new("io", e.to_string()))
}

pub(crate) fn execute(
    command: Command,
    config: &Resolved,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    match command {
        Command::Simulate => simulate(config, out),
        Command::Ingest => ingest(config, out),
        Command::Train => train(config, out),
        Command::Evaluate => evaluate(config, out),
        Command::Recommend => recommend(config, out),
        Command::Serve => serve(config, out),
    }
}

fn simulate(config: &Resolved, out: &mut dyn Write) -> Result<(), CliError> {
    let path = config.output()?;
    let eco = generate_ecosystem(config.teams, config.seed)?;
    let season = simulate_season(&eco, config.matches, config.seed)?;
    let mut log = Vec::new();
    write_match_log(&mut log, &season)?;

    let mut manifest = Manifest::new(Command::Simulate, config);
    manifest.output(path, &log)?;
    manifest.write(&meta_path(path))?;
    say(
        out,
        format_args!(
            "wrote {} matches between {} teams to {}",
            season.len(),
            config.teams,
            path.display()
        ),
    )
}

fn csv_bytes(records: &[DecisionRecord]) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_decisions_csv(&mut buf, records)?;
    Ok(buf)
}

fn json_bytes(value: &impl serde::Serialize) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serialises");
    bytes.push(b'\n');
    bytes
}

fn ingest(config: &Resolved, out: &mut dyn Write) -> Result<(), CliError> {
    let input = config.input()?;
    let dir = config.output()?;
    let bytes = read_file(input)?;
    let parsed = parse_match_log_bytes(&bytes)?;
    for e in &parsed.errors {
        log::warn!("line {}: {} ({})", e.line, e.reason, e.kind);
    }

    let (mut kept, report) = filter_dataset(parsed.matches, config.min_games);
    sort_chronologically(&mut kept);
    let full = build_decision_dataset(&kept, config.reward, StatsMode::Running)?;
    let (train_matches, test_matches) = chronological_split(kept, config.test_fraction)?;
    let (mut train, _) = build_split_datasets(&train_matches, &test_matches, config.reward)?;
    // the test set always carries 0/1 pick rewards
    let (_, mut test) = build_split_datasets(&train_matches, &test_matches, RewardKind::ZeroOne)?;

    let logged = train
        .iter()
        .chain(&test)
        .all(|r| r.behavior_propensity.is_some());
    let source = if logged {
        "logged"
    } else {
        let behavior = fit_behavior_policy(&train, &BehaviorFitConfig::default())?;
        behavior.attach_propensities(&mut train)?;
        behavior.attach_propensities(&mut test)?;
        "behavior-clone"
    };

    let mut manifest = Manifest::new(Command::Ingest, config);
    manifest.input(input, &bytes);
    manifest.output(&dir.join("decisions.csv"), &csv_bytes(&full.records)?)?;
    manifest.output(&dir.join("train.csv"), &csv_bytes(&train)?)?;
    manifest.output(&dir.join("test.csv"), &csv_bytes(&test)?)?;
    manifest.output(&dir.join("filter_report.json"), &json_bytes(&report))?;
    manifest.output(&dir.join("stats.json"), &json_bytes(&full.stats))?;
    manifest.output(&dir.join("parse_errors.json"), &json_bytes(&parsed.errors))?;
    manifest.detail("propensity_source", source);
    manifest.write(&dir.join("manifest.json"))?;
    say(
        out,
        format_args!(
            "kept {} of {} matches ({} teams, {} filter rounds); {} train / {} test decisions; {} unparsable lines; propensities: {source}",
            report.retained_matches,
            report.input_matches,
            report.retained_teams,
            report.iterations,
            train.len(),
            test.len(),
            parsed.errors.len(),
        ),
    )
}

fn read_records(path: &Path) -> Result<(Vec<DecisionRecord>, Vec<u8>), CliError> {
    let bytes = read_file(path)?;
    Ok((read_decisions_csv(&bytes[..])?, bytes))
}

/// `model.json` -> `model.checkpoints.csv`
fn checkpoint_path(model: &Path) -> std::path::PathBuf {
    model.with_extension("checkpoints.csv")
}

/// Margin-of-rounds pick rewards are never all 0 or 1, and 0/1 rewards are
/// never anything else, so a mismatched `--reward` is caught here.
fn check_reward_kind(
    records: &[DecisionRecord],
    kind: RewardKind,
    path: &Path,
) -> Result<(), CliError> {
    let mut picks = records
        .iter()
        .filter(|r| r.kind == ActionKind::Pick)
        .filter_map(|r| r.reward)
        .peekable();
    if picks.peek().is_none() {
        return Ok(());
    }
    let binary = picks.all(|r| r == 0.0 || r == 1.0);
    let found = if binary {
        RewardKind::ZeroOne
    } else {
        RewardKind::MarginOfRounds
    };
    if found == kind {
        return Ok(());
    }
    Err(CliError::new(
        "validation",
        format!(
            "{} holds {found} pick rewards but --reward is {kind}; ingest with --reward {kind}",
            path.display()
        ),
    ))
}

fn train(config: &Resolved, out: &mut dyn Write) -> Result<(), CliError> {
    let input = config.input()?;
    let path = config.output()?;
    let (records, bytes) = read_records(input)?;
    check_reward_kind(&records, config.reward, input)?;
    let mut manifest = Manifest::new(Command::Train, config);
    manifest.input(input, &bytes);
    let eval = match &config.eval {
        Some(p) => {
            let (r, b) = read_records(p)?;
            manifest.input(p, &b);
            r
        }
        None => records.clone(),
    };

    let mut training = TrainingConfig {
        learning_rate: config.lr,
        epochs: config.epochs,
        reward_kind: config.reward,
        variant: config.variant,
        seed: config.seed,
        checkpoint_every: config.checkpoint_every,
        checkpoint_unit: CheckpointUnit::Decisions,
        masked: config.mask,
    };
    training.validate()?;
    if config.grid {
        let search = grid_search(
            &records,
            config.test_fraction,
            &default_grid(),
            &training,
            &SnIwConfig::default(),
        )?;
        for s in &search.scores {
            say(
                out,
                format_args!(
                    "grid lr={} epochs={}: {:.4}",
                    s.point.learning_rate, s.point.epochs, s.validation_value
                ),
            )?;
        }
        manifest.detail("grid_scores", &search.scores);
        training = search.best;
    }

    let (picks, bans): (Vec<DecisionRecord>, Vec<DecisionRecord>) =
        eval.into_iter().partition(|r| r.kind == ActionKind::Pick);
    let sn_iw = SnIwConfig::default();
    let trained = train_with_checkpoints(&records, &training, |p: &BanditPolicy| {
        Ok((
            sn_iw_value(p, &picks, &sn_iw)?.value,
            sn_iw_value(p, &bans, &sn_iw)?.value,
        ))
    })?;

    let model = encode_model(&trained, Some(sha256_hex(&bytes)))?;
    let mut curve = Vec::new();
    trained.write_checkpoints_csv(&mut curve)?;
    manifest.output(path, &model)?;
    manifest.output(&checkpoint_path(path), &curve)?;
    manifest.write(&meta_path(path))?;

    let last = trained
        .checkpoints
        .last()
        .expect("training records an initial checkpoint");
    say(
        out,
        format_args!(
            "trained {} ({}) lr={} epochs={}: {} updates; final SN-IW pick {:.4} ban {:.4}; {} checkpoints",
            training.variant.display_name(),
            training.reward_kind,
            training.learning_rate,
            training.epochs,
            trained.updates.parameter_updates,
            last.pick_value,
            last.ban_value,
            trained.checkpoints.len()
        ),
    )
}

fn load_models(config: &Resolved) -> Result<Vec<(LoadedModel, Vec<u8>)>, CliError> {
    if config.models.is_empty() {
        return Err(CliError::new("usage", "at least one --model is required"));
    }
    config
        .models
        .iter()
        .map(|p| {
            let bytes = read_file(p)?;
            let id = p
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("model")
                .to_string();
            let file = decode_model(&bytes)
                .map_err(|e| CliError::new(e.kind(), format!("{}: {e}", p.display())))?;
            Ok((LoadedModel::from_file(id, &file)?, bytes))
        })
        .collect()
}

fn evaluate(config: &Resolved, out: &mut dyn Write) -> Result<(), CliError> {
    let input = config.input()?;
    let path = config.output()?;
    let (test, bytes) = read_records(input)?;
    let mut manifest = Manifest::new(Command::Evaluate, config);
    manifest.input(input, &bytes);
    let models = load_models(config)?;
    for (p, (_, b)) in config.models.iter().zip(&models) {
        manifest.input(p, b);
    }

    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let find = |kind: RewardKind| -> Result<Option<&BanditPolicy>, CliError> {
            let hits: Vec<&LoadedModel> = models
                .iter()
                .map(|(m, _)| m)
                .filter(|m| m.descriptor.variant == variant && m.descriptor.reward_kind == kind)
                .collect();
            match hits.len() {
                0 => Ok(None),
                1 => Ok(Some(&hits[0].policy)),
                _ => Err(CliError::new(
                    "validation",
                    format!("more than one {variant} model trained on {kind} rewards"),
                )),
            }
        };
        match (
            find(RewardKind::ZeroOne)?,
            find(RewardKind::MarginOfRounds)?,
        ) {
            (Some(zero_one), Some(mor)) => rows.push(ModelRow {
                label: variant.display_name().into(),
                zero_one,
                mor,
            }),
            (None, None) => {}
            _ => {
                return Err(CliError::new(
                    "validation",
                    format!("{variant} needs one zero-one and one mor model"),
                ))
            }
        }
    }

    let grid_config = GridConfig {
        sn_iw: SnIwConfig::default(),
        dm: DmConfig {
            lambda: config.lambda,
            ..DmConfig::default()
        },
    };
    let grid = evaluation_grid(&rows, &test, &grid_config)?;
    let mut csv = Vec::new();
    grid.write_csv(&mut csv)?;
    let text = grid.to_text();
    manifest.output(path, &csv)?;
    manifest.output(&path.with_extension("txt"), text.as_bytes())?;
    manifest.write(&meta_path(path))?;
    write!(out, "{text}").map_err(|e| CliError::new("io", e.to_string()))
}

fn load_stats(config: &Resolved) -> Result<StatsBook, CliError> {
    match &config.stats {
        Some(p) => serde_json::from_slice(&read_file(p)?)
            .map_err(|e| CliError::new("json", format!("{}: {e}", p.display()))),
        None => Ok(StatsBook::new()),
    }
}

fn snapshot(config: &Resolved) -> Result<Snapshot, CliError> {
    let models = load_models(config)?.into_iter().map(|(m, _)| m);
    Ok(Snapshot::new(models, load_stats(config)?))
}

fn render(rec: &Recommendation) -> String {
    let mut s = format!("model {} ({})\n", rec.model_id, rec.variant.display_name());
    if rec.cold_start {
        s.push_str("cold start: at least one team has no history\n");
    }
    if rec.complete {
        let decider = rec.decider.map(|m| m.name()).unwrap_or("?");
        s.push_str(&format!("veto complete; decider: {decider}\n"));
        return s;
    }
    let action = rec.action.map(|a| a.to_string()).unwrap_or_default();
    s.push_str(&format!(
        "step {}: {} to {action}\n",
        rec.step,
        rec.team.as_deref().unwrap_or("?")
    ));
    for p in &rec.distribution {
        let bar = "#".repeat((p.probability * 40.0).round() as usize);
        s.push_str(&format!("{:<9} {:.6} {bar}\n", p.map.name(), p.probability));
    }
    s
}

fn recommend(config: &Resolved, out: &mut dyn Write) -> Result<(), CliError> {
    let input = config.input()?;
    let bytes = if input == Path::new("-") {
        let mut buf = Vec::new();
        std::io::stdin()
            .read_to_end(&mut buf)
            .map_err(|e| CliError::new("io", e.to_string()))?;
        buf
    } else {
        read_file(input)?
    };
    let draft = parse_draft_state(&bytes)?;
    let rec = snapshot(config)?.recommend(&draft)?;
    write!(out, "{}", render(&rec)).map_err(|e| CliError::new("io", e.to_string()))
}

fn serve(config: &Resolved, out: &mut dyn Write) -> Result<(), CliError> {
    let snapshot = snapshot(config)?;
    let addr = SocketAddr::from(([0, 0, 0, 0], config.port));
    say(
        out,
        format_args!(
            "serving {} model(s) on {addr}",
            snapshot.descriptors().len()
        ),
    )?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::new("io", e.to_string()))?;
    runtime
        .block_on(veto_advisor::serve(addr, snapshot))
        .map_err(|e| CliError::new("io", e.to_string()))
}
