//! JSON API for the annotation queue, served under `/api/v1`.
//!
//! The queue sits behind one mutex, which makes leasing atomic and
//! serializes submissions.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use serde_json::{json, Value};
use streetcount_core::annotation::{
    AnnotationError, AnnotationQueue, Category, EventLog, FlagRequest, GenderLabel, ImageAnnotation, TaskKind,
};
use tower_http::services::ServeDir;

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub struct AppState<L: EventLog> {
    queue: Mutex<AnnotationQueue<L>>,
    clock: Clock,
}

impl<L: EventLog> AppState<L> {
    pub fn new(queue: AnnotationQueue<L>) -> Self {
        Self::with_clock(queue, Arc::new(Utc::now))
    }

    pub fn with_clock(queue: AnnotationQueue<L>, clock: Clock) -> Self {
        Self { queue: Mutex::new(queue), clock }
    }

    pub fn queue(&self) -> MutexGuard<'_, AnnotationQueue<L>> {
        self.queue.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }
}

pub struct ApiError(AnnotationError);

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self.0 {
            AnnotationError::Auth(_) => (StatusCode::FORBIDDEN, "auth"),
            AnnotationError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            AnnotationError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            AnnotationError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            AnnotationError::EmptyOverlap | AnnotationError::KappaUndefined => {
                (StatusCode::UNPROCESSABLE_ENTITY, "agreement_undefined")
            }
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(json!({ "error": kind, "message": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Deserialize)]
pub struct TaskQuery {
    pub annotator: String,
    #[serde(default = "default_kind")]
    pub kind: TaskKind,
}

fn default_kind() -> TaskKind {
    TaskKind::Counts
}

#[derive(Debug, Deserialize)]
pub struct AgreementQuery {
    pub category: Category,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CyclistLabel {
    pub cyclist_index: u32,
    pub label: GenderLabel,
}

#[derive(Debug, Clone, Deserialize)]
pub struct GenderRequest {
    pub image_id: String,
    pub annotator: String,
    pub labels: Vec<CyclistLabel>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ConsensusRequest {
    pub image_id: String,
    pub cyclist_index: u32,
    pub label: GenderLabel,
}

fn created() -> (StatusCode, Json<Value>) {
    (StatusCode::CREATED, Json(json!({ "status": "created" })))
}

async fn next_task<L: EventLog + 'static>(State(st): State<Arc<AppState<L>>>, Query(q): Query<TaskQuery>) -> ApiResult<Json<Value>> {
    let now = st.now();
    let task = st.queue().next_task(&q.annotator, q.kind, now)?;
    Ok(Json(match task {
        Some(t) => serde_json::to_value(t).expect("task payload serializes"),
        None => json!({ "done": true }),
    }))
}

async fn submit_response<L: EventLog + 'static>(
    State(st): State<Arc<AppState<L>>>,
    Json(ann): Json<ImageAnnotation>,
) -> ApiResult<impl IntoResponse> {
    let now = st.now();
    st.queue().submit_response(ann, now)?;
    Ok(created())
}

async fn flag<L: EventLog + 'static>(State(st): State<Arc<AppState<L>>>, Json(req): Json<FlagRequest>) -> ApiResult<impl IntoResponse> {
    let now = st.now();
    st.queue().flag(req, now)?;
    Ok(created())
}

async fn submit_gender<L: EventLog + 'static>(
    State(st): State<Arc<AppState<L>>>,
    Json(req): Json<GenderRequest>,
) -> ApiResult<impl IntoResponse> {
    let now = st.now();
    let labels: Vec<(u32, GenderLabel)> = req.labels.iter().map(|l| (l.cyclist_index, l.label)).collect();
    st.queue().submit_gender(&req.image_id, &req.annotator, &labels, now)?;
    Ok(created())
}

async fn consensus<L: EventLog + 'static>(
    State(st): State<Arc<AppState<L>>>,
    Json(req): Json<ConsensusRequest>,
) -> ApiResult<impl IntoResponse> {
    st.queue().set_consensus(&req.image_id, req.cyclist_index, req.label)?;
    Ok(created())
}

async fn progress<L: EventLog + 'static>(State(st): State<Arc<AppState<L>>>) -> Json<Value> {
    Json(serde_json::to_value(st.queue().progress()).expect("progress serializes"))
}

async fn agreement<L: EventLog + 'static>(
    State(st): State<Arc<AppState<L>>>,
    Query(q): Query<AgreementQuery>,
) -> ApiResult<Json<Value>> {
    let stats = st.queue().agreement_for(q.category)?;
    Ok(Json(serde_json::to_value(stats).expect("agreement serializes")))
}

async fn schema() -> Json<Value> {
    Json(annotation_schema())
}

/// JSON Schema for the body of `POST /response`.
pub fn annotation_schema() -> Value {
    let bins = json!({ "type": "string", "enum": ["0", "1-3", "4-6", ">6"] });
    let props: serde_json::Map<String, Value> = Category::ALL.iter().map(|c| (c.as_str().to_string(), bins.clone())).collect();
    json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "ImageAnnotation",
        "type": "object",
        "required": ["image_id", "annotator_id"],
        "additionalProperties": false,
        "properties": {
            "image_id": { "type": "string", "minLength": 1 },
            "annotator_id": { "type": "string", "minLength": 1 },
            "bins": {
                "type": "object",
                "properties": props,
                "additionalProperties": false
            },
            "flagged": { "type": "boolean" },
            "reason": { "type": ["string", "null"] },
            "ts": { "type": ["string", "null"], "format": "date-time" }
        },
        "if": { "properties": { "flagged": { "const": true } }, "required": ["flagged"] },
        "else": {
            "required": ["bins"],
            "properties": { "bins": { "required": Category::ALL.iter().map(|c| c.as_str()).collect::<Vec<_>>() } }
        }
    })
}

pub fn api<L: EventLog + 'static>(state: Arc<AppState<L>>) -> Router {
    let v1 = Router::new()
        .route("/task", get(next_task::<L>))
        .route("/response", post(submit_response::<L>))
        .route("/flag", post(flag::<L>))
        .route("/gender", post(submit_gender::<L>))
        .route("/consensus", post(consensus::<L>))
        .route("/progress", get(progress::<L>))
        .route("/agreement", get(agreement::<L>))
        .route("/schema/annotation", get(schema))
        .with_state(state);
    Router::new().nest("/api/v1", v1)
}

/// The API plus, when given, static UI assets at the root.
pub fn app<L: EventLog + 'static>(state: Arc<AppState<L>>, assets: Option<PathBuf>) -> Router {
    let router = api(state);
    match assets {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router,
    }
}

pub async fn serve<L: EventLog + 'static>(
    addr: SocketAddr,
    state: Arc<AppState<L>>,
    assets: Option<PathBuf>,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, app(state, assets)).await
}
