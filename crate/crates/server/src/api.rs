//! JSON HTTP API over a shared [`Engine`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use memqa_core::answer::AnswerError;
use memqa_core::augment::{AugmentError, Augmenter};
use memqa_core::memory::{MemoryEntry, RecallQuery, StoreError};
use memqa_core::retrieval::{Engine, RetrievalError};

/// Everything a request may touch. The store inside the engine is the only mutable state.
#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub augmenter: Arc<Augmenter>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/v1/memories", post(create_memory))
        .route("/v1/query", post(query))
        .with_state(state)
}

struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<RetrievalError> for ApiError {
    fn from(e: RetrievalError) -> Self {
        let status = match &e {
            RetrievalError::InvalidQuery(_) => StatusCode::BAD_REQUEST,
            RetrievalError::Store(StoreError::DuplicateId(_)) => StatusCode::CONFLICT,
            RetrievalError::Store(StoreError::InvalidEntry(_)) => StatusCode::BAD_REQUEST,
            RetrievalError::NoGenerator
            | RetrievalError::Answer(AnswerError::BackendUnavailable(_)) => {
                StatusCode::SERVICE_UNAVAILABLE
            }
            RetrievalError::Augment(AugmentError::AugmentationFailed {
                ocr,
                caption,
                completion,
            }) => {
                return Self {
                    status: StatusCode::BAD_GATEWAY,
                    body: json!({
                        "error": "augmentation providers failed",
                        "providers": { "ocr": ocr, "caption": caption, "completion": completion },
                    }),
                }
            }
            RetrievalError::Augment(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid body: {e}")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            format!("worker failed: {e}"),
        )
    })?
}

#[derive(Deserialize)]
struct CreateMemory {
    #[serde(flatten)]
    entry: MemoryEntry,
    #[serde(default)]
    augment: bool,
}

#[derive(Serialize)]
struct Created {
    id: String,
    augmented: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

async fn create_memory(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let req: CreateMemory = parse_body(&body)?;
    req.entry
        .validate()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    let created = blocking(move || {
        let augmenter = req.augment.then_some(state.augmenter.as_ref());
        let (memory, warnings) = state.engine.record(req.entry, augmenter)?;
        Ok(Created {
            id: memory.entry.id,
            augmented: req.augment,
            warnings,
        })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(created)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    #[default]
    Retrieve,
    Answer,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRequest {
    question: String,
    asked_at: i64,
    #[serde(default)]
    tz_offset_minutes: i32,
    #[serde(default)]
    mode: Mode,
}

async fn query(State(state): State<AppState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: QueryRequest = parse_body(&body)?;
    let q = RecallQuery::new(req.question, req.asked_at).with_offset(req.tz_offset_minutes);
    q.validate()
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    let value = blocking(move || {
        let v = match req.mode {
            Mode::Retrieve => serde_json::to_value(state.engine.retrieve(&q)?),
            Mode::Answer => serde_json::to_value(state.engine.answer(&q)?),
        };
        v.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
    })
    .await?;
    Ok(Json(value))
}

/// Serves `router` until ctrl-c.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
