use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use veto_advisor::{router, LoadedModel, Snapshot};
use veto_core::domain::MapId;
use veto_core::features::StatsBook;
use veto_core::model_io::ModelFile;
use veto_core::policy::{BanditPolicy, PolicyParameters, Variant};
use veto_core::simulator::{generate_ecosystem, simulate_season};
use veto_core::training::{TrainedPolicy, TrainingConfig};

fn model(id: &str, variant: Variant) -> LoadedModel {
    let mut policy = BanditPolicy::zeros(variant);
    // skew the pick weights so distributions are not uniform
    let theta: Vec<f64> = (0..policy.main().dim())
        .map(|i| ((i * 7) % 11) as f64 * 0.1)
        .collect();
    policy = BanditPolicy::from_parameters(
        variant,
        PolicyParameters::from_theta(policy.main().role(), theta).unwrap(),
        policy.split_ban().cloned(),
    )
    .unwrap();
    let trained = TrainedPolicy {
        policy,
        config: TrainingConfig {
            variant,
            ..Default::default()
        },
        checkpoints: vec![],
        updates: Default::default(),
    };
    LoadedModel::from_file(id, &ModelFile::from_trained(&trained, Some("feed".into()))).unwrap()
}

fn app() -> Router {
    let eco = generate_ecosystem(6, 3).unwrap();
    let mut stats = StatsBook::new();
    for m in simulate_season(&eco, 60, 3).unwrap() {
        stats.record_match(&m).unwrap();
    }
    router(Snapshot::new(
        [
            model("combo", Variant::Combo),
            model("split", Variant::Split),
        ],
        stats,
    ))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (
        status,
        serde_json::from_slice(&bytes).unwrap_or(Value::Null),
    )
}

const ORDER: [(&str, &str); 6] = [
    ("team-000", "ban"),
    ("team-001", "ban"),
    ("team-000", "pick"),
    ("team-001", "pick"),
    ("team-000", "ban"),
    ("team-001", "ban"),
];

fn draft(steps: usize) -> Value {
    let decisions: Vec<Value> = ORDER
        .iter()
        .take(steps)
        .enumerate()
        .map(|(i, (team, action))| json!({"team": team, "action": action, "map": MapId::ALL[i].name()}))
        .collect();
    json!({"team_a": "team-000", "team_b": "team-001", "decisions": decisions})
}

fn probs(rec: &Value) -> Vec<(String, f64)> {
    rec["distribution"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| {
            (
                p["map"].as_str().unwrap().to_string(),
                p["probability"].as_f64().unwrap(),
            )
        })
        .collect()
}

#[tokio::test]
async fn health_and_models() {
    let app = app();
    let (s, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok"}));

    let (s, body) = call(&app, "GET", "/models", None).await;
    assert_eq!(s, StatusCode::OK);
    let ids: Vec<&str> = body
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["combo", "split"]);
    assert_eq!(body[1]["variant"], "split");
    assert_eq!(body[0]["input_hash"], "feed");
}

#[tokio::test]
async fn fresh_draft_gets_a_seven_map_ban_distribution() {
    let (s, rec) = call(&app(), "POST", "/draft/recommend", Some(draft(0))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(rec["action"], "ban");
    assert_eq!(rec["team"], "team-000");
    assert_eq!(rec["mask_applied"], true);
    assert_eq!(rec["cold_start"], false);
    let p = probs(&rec);
    assert_eq!(p.len(), 7);
    assert!((p.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-6);
}

#[tokio::test]
async fn unknown_teams_are_flagged_cold_start() {
    let body = json!({"team_a": "nobody", "team_b": "ghosts", "model_id": "split"});
    let (s, rec) = call(&app(), "POST", "/draft/recommend", Some(body)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(rec["cold_start"], true);
    assert_eq!(rec["model_id"], "split");
    assert_eq!(probs(&rec).len(), 7);
}

#[tokio::test]
async fn step_three_pick_and_step_six_decider() {
    let app = app();
    let (_, rec) = call(&app, "POST", "/draft/recommend", Some(draft(3))).await;
    assert_eq!(rec["action"], "pick");
    assert_eq!(rec["team"], "team-001");
    let p = probs(&rec);
    assert_eq!(p.len(), 4);
    assert!(p.iter().all(|x| x.1 > 0.0));
    assert!(p.windows(2).all(|w| w[0].1 >= w[1].1));

    let (s, rec) = call(&app, "POST", "/draft/recommend", Some(draft(6))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(rec["complete"], true);
    assert_eq!(rec["decider"], "vertigo");
    assert_eq!(rec["distribution"], json!([]));
}

#[tokio::test]
async fn errors_carry_code_and_step() {
    let app = app();
    let mut bad = draft(2);
    bad["decisions"][1]["map"] = json!("dust2");
    let (s, err) = call(&app, "POST", "/draft/recommend", Some(bad)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "unavailable_map");
    assert_eq!(err["step"], 1);

    let mut wrong_turn = draft(1);
    wrong_turn["decisions"][0]["team"] = json!("team-001");
    let (s, err) = call(&app, "POST", "/draft/recommend", Some(wrong_turn)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "turn_order");
    assert_eq!(err["step"], 0);

    let mut unknown = draft(0);
    unknown["model_id"] = json!("nope");
    let (s, err) = call(&app, "POST", "/draft/recommend", Some(unknown)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "unknown_model");

    let (s, err) = call(&app, "POST", "/draft/recommend", Some(json!({"team_a": 3}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "bad_request");
    assert!(err.get("step").is_none());
}

#[tokio::test]
async fn what_if_is_stateless_and_masks_the_hypothetical() {
    let app = app();
    let base = draft(2);
    let (_, before) = call(&app, "POST", "/draft/recommend", Some(base.clone())).await;
    let req = json!({"state": base, "hypothetical": {"team": "team-000", "action": "pick", "map": "nuke"}});
    let (s, branch) = call(&app, "POST", "/draft/what-if", Some(req)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(branch["step"], 3);
    assert!(probs(&branch).iter().all(|(m, _)| m != "nuke"));
    let (_, after) = call(&app, "POST", "/draft/recommend", Some(base)).await;
    assert_eq!(before, after);

    let illegal = json!({"state": draft(2), "hypothetical": {"team": "team-000", "action": "pick", "map": "dust2"}});
    let (s, err) = call(&app, "POST", "/draft/what-if", Some(illegal)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["step"], 2);
}

#[tokio::test]
async fn six_what_ifs_reach_the_decider() {
    let app = app();
    let mut state = draft(0);
    let mut last = Value::Null;
    for (i, (team, action)) in ORDER.iter().enumerate() {
        let hyp = json!({"team": team, "action": action, "map": MapId::ALL[6 - i].name()});
        let (s, rec) = call(
            &app,
            "POST",
            "/draft/what-if",
            Some(json!({"state": state, "hypothetical": hyp})),
        )
        .await;
        assert_eq!(s, StatusCode::OK, "{rec}");
        state["decisions"].as_array_mut().unwrap().push(hyp);
        last = rec;
    }
    assert_eq!(last["complete"], true);
    assert_eq!(last["decider"], "dust2");
}

#[tokio::test]
async fn identical_requests_give_identical_bytes() {
    let app = app();
    let mut bodies = Vec::new();
    for _ in 0..3 {
        let req = Request::post("/draft/recommend")
            .body(Body::from(draft(4).to_string()))
            .unwrap();
        let res = app.clone().oneshot(req).await.unwrap();
        bodies.push(res.into_body().collect().await.unwrap().to_bytes());
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}
