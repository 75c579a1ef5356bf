//! HTTP annotation service backing the interactive demo.
//!
//! - `POST /api/v1/annotate`: run the pipeline over one note.
//! - `GET /api/v1/schema`: the entity taxonomy.
//! - `GET /healthz`: liveness, backend reachability and template version.
//!
//! Handlers share only immutable configuration and the backend client; the
//! blocking pipeline runs on tokio's blocking pool.

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};

use kiwi_core::formats::json::to_value;
use kiwi_core::pipeline::{annotate_batch, Backend, PipelineConfig, ReInput, SentenceDiagnostic, StageTimings};
use kiwi_core::schema::{self, permitted_modifiers, AnnotationSet, Document, EntityMention, MainEntityType, ModifierType};
use kiwi_core::spanmark::template_version;

/// Default cap on request bodies (100 KB).
pub const DEFAULT_MAX_BODY_BYTES: usize = 100 * 1024;

/// Document id given to submitted notes.
pub const NOTE_ID: &str = "note";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_body_bytes: usize,
    /// Allowed CORS origins; empty allows any origin.
    pub cors_origins: Vec<String>,
    /// Label clients may pass as `backend`; other labels are rejected.
    pub backend_label: String,
    pub pipeline: PipelineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            cors_origins: Vec::new(),
            backend_label: "default".into(),
            pipeline: PipelineConfig::new(),
        }
    }
}

#[derive(Clone)]
struct AppState {
    backend: Arc<dyn Backend>,
    config: Arc<ServiceConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestTask {
    Ner,
    Re,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotateRequest {
    pub text: String,
    #[serde(default)]
    pub tasks: Option<Vec<RequestTask>>,
    #[serde(default)]
    pub re_input: Option<ReInput>,
    /// Main mentions for `re_input: "gold"`.
    #[serde(default)]
    pub mains: Option<Vec<EntityMention>>,
    #[serde(default)]
    pub backend: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct AnnotateResponse {
    pub annotation: Value,
    pub diagnostics: Vec<SentenceDiagnostic>,
    pub timings: StageTimings,
    pub backend: String,
    pub template_version: &'static str,
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message, "status": self.status.as_u16() }))).into_response()
    }
}

pub fn router(backend: Arc<dyn Backend>, config: ServiceConfig) -> Router {
    let cors = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE])
        .allow_origin(if config.cors_origins.is_empty() {
            AllowOrigin::any()
        } else {
            AllowOrigin::list(config.cors_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()))
        });
    let state = AppState { backend, config: Arc::new(config) };
    Router::new()
        .route("/api/v1/annotate", post(annotate))
        .route("/api/v1/schema", get(schema_info))
        .route("/healthz", get(healthz))
        .layer(cors)
        .with_state(state)
}

/// Serve `router` until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, router: Router) -> std::io::Result<()> {
    axum::serve(listener, router).await
}

async fn annotate(State(state): State<AppState>, body: Body) -> Result<Json<AnnotateResponse>, ApiError> {
    let limit = state.config.max_body_bytes;
    let bytes = to_bytes(body, limit)
        .await
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, format!("request body exceeds {limit} bytes")))?;
    let req: AnnotateRequest = serde_json::from_slice(&bytes)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))?;

    if req.text.trim().is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "text is empty"));
    }
    if let Some(label) = &req.backend {
        if *label != state.config.backend_label {
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("unknown backend `{label}`")));
        }
    }
    let tasks = req.tasks.unwrap_or_else(|| vec![RequestTask::Ner, RequestTask::Re]);
    if tasks.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "tasks must not be empty"));
    }
    let mut config = state.config.pipeline.clone();
    config.relations = tasks.contains(&RequestTask::Re);
    config.re_input = req.re_input.unwrap_or_default();

    let doc = Document::segmented(NOTE_ID, req.text);
    let gold = match config.re_input {
        ReInput::Pipeline => None,
        ReInput::Gold => {
            let mains = req.mains.ok_or_else(|| {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "re_input \"gold\" requires `mains`")
            })?;
            Some(gold_mains(&doc, mains)?)
        }
    };

    let backend = state.backend.clone();
    let (doc, run) = tokio::task::spawn_blocking(move || {
        let run = annotate_batch(std::slice::from_ref(&doc), backend.as_ref(), &config, gold.as_ref().map(std::slice::from_ref));
        (doc, run)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("pipeline task failed: {e}")))?;

    if let Some(f) = run.failures.first() {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("backend unavailable: {}", f.error)));
    }
    let annotation = run.annotations.into_iter().next().expect("one document in, one set out");
    let violations = schema::validate(&annotation, &doc);
    if !violations.is_empty() {
        return Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            format!("pipeline produced an invalid annotation: {violations:?}"),
        ));
    }
    Ok(Json(AnnotateResponse {
        annotation: to_value(&annotation),
        diagnostics: run.diagnostics,
        timings: run.timings,
        backend: state.backend.identity(),
        template_version: template_version(),
    }))
}

/// Check caller-supplied main mentions against the note.
fn gold_mains(doc: &Document, mains: Vec<EntityMention>) -> Result<AnnotationSet, ApiError> {
    let bad = |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, m);
    let set = AnnotationSet::new(NOTE_ID, mains, vec![]).map_err(|e| bad(e.to_string()))?;
    for m in &set.mentions {
        if !m.kind.is_main() {
            return Err(bad(format!("mention `{}` is not a main entity", m.id)));
        }
    }
    let violations = schema::validate(&set, doc);
    if !violations.is_empty() {
        return Err(bad(format!("invalid mains: {violations:?}")));
    }
    for m in &set.mentions {
        if doc.host_sentence(m.start, m.end).is_none() {
            return Err(bad(format!("mention `{}` crosses a sentence boundary", m.id)));
        }
    }
    Ok(set)
}

/// Taxonomy JSON: main types with permitted modifiers (prompt order), and
/// the modifier inventory.
pub fn schema_json() -> Value {
    let mains: Vec<Value> = MainEntityType::ALL
        .iter()
        .map(|&t| {
            json!({
                "name": t.name(),
                "label": t.display_label(),
                "modifiers": permitted_modifiers(t).iter().map(|m| m.name()).collect::<Vec<_>>(),
            })
        })
        .collect();
    let modifiers: Vec<Value> =
        ModifierType::ALL.iter().map(|m| json!({ "name": m.name(), "label": m.display_label() })).collect();
    let pairs: usize = MainEntityType::ALL.iter().map(|&t| permitted_modifiers(t).len()).sum();
    json!({
        "main_types": mains,
        "modifiers": modifiers,
        "relation_count": pairs,
        "template_version": template_version(),
    })
}

async fn schema_info() -> impl IntoResponse {
    ([(header::CACHE_CONTROL, "public, max-age=3600")], Json(schema_json()))
}

async fn healthz(State(state): State<AppState>) -> Json<Value> {
    let backend = state.backend.clone();
    let reachable = tokio::task::spawn_blocking(move || backend.is_reachable()).await.unwrap_or(false);
    Json(json!({
        "status": "ok",
        "backend_reachable": reachable,
        "template_version": template_version(),
    }))
}
