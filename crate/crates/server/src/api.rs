use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use shorthand::dialogdata::ContextMode;
use tower_http::cors::{Any, CorsLayer};

use crate::session::{Author, Session, SessionError, SessionStore};

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub retryable: bool,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match e.code() {
            "unknown_session" => StatusCode::NOT_FOUND,
            "unknown_backend" | "invalid_request" => StatusCode::BAD_REQUEST,
            "backend_unavailable" => StatusCode::SERVICE_UNAVAILABLE,
            "backend_error" => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            body: ErrorBody {
                code: e.code().to_string(),
                message: e.to_string(),
                retryable: e.retryable(),
            },
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                code: "invalid_request".into(),
                message: e.body_text(),
                retryable: false,
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub backend: Option<String>,
    pub k: Option<usize>,
    pub context_mode: Option<ContextMode>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddTurn {
    pub author: Author,
    pub text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpandRequest {
    pub abbreviation: String,
    #[serde(default)]
    pub noisy: bool,
    pub k: Option<usize>,
    pub context_mode: Option<ContextMode>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct OptionView {
    pub phrase: String,
    pub count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ExpandResponse {
    pub options: Vec<OptionView>,
    pub raw_sample_count: usize,
    /// The context turns that were sent to the backend.
    pub context: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectRequest {
    pub phrase: String,
}

/// Builds the HTTP API. `allowed_origin` restricts CORS to one web UI
/// origin; `None` allows any origin.
pub fn router(store: Arc<SessionStore>, allowed_origin: Option<&str>) -> Router {
    let cors = match allowed_origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(origin) => CorsLayer::new().allow_origin(origin),
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/turns", post(add_turn))
        .route("/sessions/{id}/expand", post(expand))
        .route("/sessions/{id}/select", post(select))
        .layer(cors)
        .with_state(store)
}

async fn create_session(
    State(store): State<Arc<SessionStore>>,
    body: Option<Json<CreateSession>>,
) -> Result<(StatusCode, Json<Session>), ApiError> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let s = store.create_session(req.backend.as_deref(), req.k, req.context_mode)?;
    Ok((StatusCode::CREATED, Json(s)))
}

async fn get_session(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Session> {
    Ok(Json(store.get(&id)?))
}

async fn add_turn(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    body: Result<Json<AddTurn>, JsonRejection>,
) -> ApiResult<Session> {
    let Json(req) = body?;
    Ok(Json(store.add_turn(&id, req.author, &req.text)?))
}

async fn expand(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    body: Result<Json<ExpandRequest>, JsonRejection>,
) -> ApiResult<ExpandResponse> {
    let Json(req) = body?;
    // backends may block on network or heavy search
    let outcome = tokio::task::spawn_blocking(move || {
        store.expand_in_session(&id, &req.abbreviation, req.noisy, req.k, req.context_mode)
    })
    .await
    .map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        body: ErrorBody {
            code: "internal".into(),
            message: e.to_string(),
            retryable: false,
        },
    })??;
    Ok(Json(ExpandResponse {
        options: outcome
            .result
            .options
            .into_iter()
            .map(|o| OptionView {
                phrase: o.phrase.normalized,
                count: o.count,
                score: o.score,
            })
            .collect(),
        raw_sample_count: outcome.result.raw_sample_count,
        context: outcome.context,
    }))
}

async fn select(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    body: Result<Json<SelectRequest>, JsonRejection>,
) -> ApiResult<Session> {
    let Json(req) = body?;
    Ok(Json(store.select_option(&id, &req.phrase)?))
}
