//! HTTP service for live veto recommendations.
//!
//! State is an immutable snapshot of loaded models and team statistics, so
//! every request is answered from the same data and nothing is written back.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use veto_core::draft::{recommend, DraftDecision, DraftState, Recommendation};
use veto_core::features::StatsBook;
use veto_core::model_io::{decode_model, ModelFile};
use veto_core::policy::{BanditPolicy, Variant};
use veto_core::rewards::RewardKind;

pub const DEFAULT_PORT: u16 = 8720;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub id: String,
    pub variant: Variant,
    pub reward_kind: RewardKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub config_hash: String,
    pub input_hash: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub descriptor: ModelDescriptor,
    pub policy: BanditPolicy,
}

impl LoadedModel {
    pub fn from_file(id: impl Into<String>, file: &ModelFile) -> veto_core::Result<Self> {
        Ok(LoadedModel {
            descriptor: ModelDescriptor {
                id: id.into(),
                variant: file.variant,
                reward_kind: file.config.reward_kind,
                learning_rate: file.config.learning_rate,
                epochs: file.config.epochs,
                config_hash: file.config_hash.clone(),
                input_hash: file.input_hash.clone(),
            },
            policy: file.policy()?,
        })
    }

    /// Reads a model container; the id is the file stem.
    pub fn load(path: &Path) -> veto_core::Result<Self> {
        let bytes = std::fs::read(path)?;
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("model")
            .to_string();
        Self::from_file(id, &decode_model(&bytes)?)
    }
}

/// Models by id plus the statistics snapshot used to build contexts.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    models: BTreeMap<String, LoadedModel>,
    stats: StatsBook,
}

impl Snapshot {
    pub fn new(models: impl IntoIterator<Item = LoadedModel>, stats: StatsBook) -> Self {
        Snapshot {
            models: models
                .into_iter()
                .map(|m| (m.descriptor.id.clone(), m))
                .collect(),
            stats,
        }
    }

    pub fn descriptors(&self) -> Vec<ModelDescriptor> {
        self.models.values().map(|m| m.descriptor.clone()).collect()
    }

    /// Explicit id, or the first model by id when none is given.
    fn model(&self, id: Option<&str>) -> Result<&LoadedModel, ApiError> {
        match id {
            Some(id) => self.models.get(id).ok_or_else(|| ApiError {
                status: StatusCode::NOT_FOUND,
                code: "unknown_model".into(),
                message: format!("no model with id '{id}' is loaded"),
                step: None,
            }),
            None => self.models.values().next().ok_or_else(|| ApiError {
                status: StatusCode::NOT_FOUND,
                code: "unknown_model".into(),
                message: "no models are loaded".into(),
                step: None,
            }),
        }
    }

    pub fn recommend(&self, draft: &DraftState) -> Result<Recommendation, ApiError> {
        let model = self.model(draft.model_id.as_deref())?;
        recommend(&model.policy, &self.stats, draft, &model.descriptor.id).map_err(ApiError::from)
    }

    pub fn what_if(&self, request: &WhatIfRequest) -> Result<Recommendation, ApiError> {
        // replay the base state first so a bad base is reported at its own step
        request.state.replay()?;
        let branch = request.state.with_decision(request.hypothetical.clone())?;
        self.recommend(&branch)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub state: DraftState,
    pub hypothetical: DraftDecision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    pub step: Option<usize>,
}

impl ApiError {
    fn bad_request(message: String) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request".into(),
            message,
            step: None,
        }
    }
}

impl From<veto_core::Error> for ApiError {
    fn from(e: veto_core::Error) -> Self {
        use veto_core::Error as E;
        let status = match e {
            E::Validation(_)
            | E::TurnOrder { .. }
            | E::UnavailableMap { .. }
            | E::IncompleteVeto { .. }
            | E::VetoComplete
            | E::UnsupportedMap(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            code: e.kind().into(),
            message: e.to_string(),
            step: e.step(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code,
            message: self.message,
            step: self.step,
        };
        (self.status, Json(body)).into_response()
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("request body: {e}")))
}

type Shared = Arc<Snapshot>;

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn models(State(s): State<Shared>) -> Json<Vec<ModelDescriptor>> {
    Json(s.descriptors())
}

async fn draft_recommend(
    State(s): State<Shared>,
    body: Bytes,
) -> Result<Json<Recommendation>, ApiError> {
    let draft: DraftState = parse_json(&body)?;
    s.recommend(&draft).map(Json)
}

async fn draft_what_if(
    State(s): State<Shared>,
    body: Bytes,
) -> Result<Json<Recommendation>, ApiError> {
    let request: WhatIfRequest = parse_json(&body)?;
    s.what_if(&request).map(Json)
}

pub fn router(snapshot: Snapshot) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/models", get(models))
        .route("/draft/recommend", post(draft_recommend))
        .route("/draft/what-if", post(draft_what_if))
        .with_state(Arc::new(snapshot))
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(addr: SocketAddr, snapshot: Snapshot) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("advisor listening on {}", listener.local_addr()?);
    axum::serve(listener, router(snapshot))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
