//! JSON HTTP interface over a [`MonitorState`].
//!
//! Reads take a snapshot of the current state. Mutations are serialized by a
//! single writer lock, run off the async runtime, are persisted (when a
//! store directory is configured) and only then become visible.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex;
use weldwatch_core::continual::{NewClass, UpdateKnobs};
use weldwatch_core::monitor::{self, LabelAssignment, MonitorState};
use weldwatch_core::{Error, SampleRecord};

/// Shared between handlers.
pub struct AppState {
    current: RwLock<Arc<MonitorState>>,
    writer: Mutex<Writer>,
    store: Option<PathBuf>,
}

#[derive(Default)]
struct Writer {
    /// Responses of completed mutations, keyed by request token.
    completed: HashMap<String, (StatusCode, Value)>,
}

impl AppState {
    pub fn new(state: MonitorState, store: Option<PathBuf>) -> Arc<Self> {
        Arc::new(AppState {
            current: RwLock::new(Arc::new(state)),
            writer: Mutex::new(Writer::default()),
            store,
        })
    }

    pub fn snapshot(&self) -> Arc<MonitorState> {
        self.current.read().expect("state lock poisoned").clone()
    }
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/state", get(get_state))
        .route("/clusters", get(get_clusters))
        .route("/samples/{id}", get(get_sample))
        .route("/metrics", get(get_metrics))
        .route("/detect", post(post_detect))
        .route("/cluster", post(post_cluster))
        .route("/labels", post(post_labels))
        .route("/update", post(post_update))
        .with_state(app)
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Request(_) => StatusCode::BAD_REQUEST,
            Error::Config(_) | Error::Data(_) | Error::Shape { .. } | Error::Fit { .. } | Error::Parse { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            Error::Io { .. } | Error::Restore { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

/// JSON request body whose rejections are reported as JSON errors.
pub struct Body<T>(pub T);

impl<S, T> FromRequest<S> for Body<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| Body(v))
            .map_err(|e| ApiError(e.status(), e.body_text()))
    }
}

type ApiResult = Result<(StatusCode, Json<Value>), ApiError>;

fn summary(s: &MonitorState) -> Value {
    json!({
        "revision": s.revision,
        "labels": s.labels(),
        "counts": {
            "classes": s.labels().len(),
            "known_samples": s.known.len(),
            "flagged": s.flagged_pool.len(),
            "clusters": s.cluster_report.as_ref().map_or(0, |r| r.clusters.len()),
        },
    })
}

async fn get_state(State(app): State<Arc<AppState>>) -> Json<Value> {
    Json(summary(&app.snapshot()))
}

async fn get_clusters(State(app): State<Arc<AppState>>) -> Json<Value> {
    let s = app.snapshot();
    let Some(report) = &s.cluster_report else {
        return Json(json!({ "revision": s.revision, "clusters": [], "purity": null }));
    };
    let clusters: Vec<Value> = report
        .clusters
        .iter()
        .map(|c| {
            let similarity: BTreeMap<&str, &Vec<f64>> = c
                .member_ids()
                .filter_map(|id| s.similarity.get(id).map(|v| (id, v)))
                .collect();
            let mut v = serde_json::to_value(c).expect("cluster serializes");
            v["similarity"] = json!(similarity);
            v
        })
        .collect();
    Json(json!({ "revision": s.revision, "clusters": clusters, "purity": report.purity }))
}

async fn get_sample(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult {
    let s = app.snapshot();
    let record = s
        .sample(&id)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no sample `{id}`")))?;
    Ok((
        StatusCode::OK,
        Json(json!({
            "sample_id": record.sample_id,
            "features": record.features,
            "label": record.label,
            "flagged": s.flagged_pool.iter().any(|r| r.sample_id == id),
            "similarity": s.similarity.get(&id),
            "history": s.history.get(&id).cloned().unwrap_or_default(),
        })),
    ))
}

async fn get_metrics(State(app): State<Arc<AppState>>) -> Json<Value> {
    let s = app.snapshot();
    Json(json!({ "revision": s.revision, "metrics": s.metrics }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectBody {
    request_token: Option<String>,
    expected_revision: Option<u64>,
    samples: Vec<SampleRecord>,
    /// Adds unknown-flagged samples to the pool. Off means a pure read.
    #[serde(default = "yes")]
    pool: bool,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterBody {
    request_token: Option<String>,
    expected_revision: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsBody {
    request_token: Option<String>,
    expected_revision: Option<u64>,
    assignments: Vec<LabelAssignment>,
    knobs: Option<UpdateKnobs>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateBody {
    request_token: Option<String>,
    expected_revision: Option<u64>,
    #[serde(default)]
    new_classes: Vec<NewClass>,
    knobs: Option<UpdateKnobs>,
}

#[derive(Serialize)]
struct MutationReply<T: Serialize> {
    #[serde(flatten)]
    state: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<T>,
}

/// Runs `op` on the current state as the single writer. A repeated token
/// returns the first response without applying anything.
async fn mutate<T, F>(app: Arc<AppState>, token: Option<String>, expected: Option<u64>, op: F) -> ApiResult
where
    T: Serialize + Send + 'static,
    F: FnOnce(&MonitorState) -> weldwatch_core::Result<(MonitorState, Option<T>)> + Send + 'static,
{
    let mut writer = app.writer.lock().await;
    if let Some((status, body)) = token.as_ref().and_then(|t| writer.completed.get(t)) {
        return Ok((*status, Json(body.clone())));
    }
    let current = app.snapshot();
    if let Some(rev) = expected {
        if rev != current.revision {
            return Err(ApiError(
                StatusCode::CONFLICT,
                format!("expected revision {rev}, current is {}", current.revision),
            ));
        }
    }
    let store = app.store.clone();
    let (next, result) = tokio::task::spawn_blocking(move || -> weldwatch_core::Result<_> {
        let (next, result) = op(&current)?;
        if let Some(dir) = &store {
            monitor::persist(&next, dir)?;
        }
        Ok((next, result))
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let body = serde_json::to_value(MutationReply {
        state: summary(&next),
        result,
    })
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    *app.current.write().expect("state lock poisoned") = Arc::new(next);
    if let Some(t) = token {
        writer.completed.insert(t, (StatusCode::OK, body.clone()));
    }
    Ok((StatusCode::OK, Json(body)))
}

async fn post_detect(State(app): State<Arc<AppState>>, Body(body): Body<DetectBody>) -> ApiResult {
    if !body.pool {
        let s = app.snapshot();
        let decisions = s.decide(&body.samples)?;
        return Ok((StatusCode::OK, Json(json!({ "revision": s.revision, "decisions": decisions }))));
    }
    let samples = body.samples;
    mutate(app, body.request_token, body.expected_revision, move |s| {
        let (next, decisions) = s.detect_batch(&samples)?;
        Ok((next, Some(json!({ "decisions": decisions }))))
    })
    .await
}

async fn post_cluster(State(app): State<Arc<AppState>>, Body(body): Body<ClusterBody>) -> ApiResult {
    mutate(app, body.request_token, body.expected_revision, |s| {
        Ok((s.cluster_pool()?, None::<()>))
    })
    .await
}

async fn post_labels(State(app): State<Arc<AppState>>, Body(body): Body<LabelsBody>) -> ApiResult {
    let (assignments, knobs) = (body.assignments, body.knobs);
    mutate(app, body.request_token, body.expected_revision, move |s| {
        let knobs = knobs.unwrap_or_else(|| s.settings.update.clone());
        Ok((s.apply_labels(&assignments, &knobs)?, None::<()>))
    })
    .await
}

async fn post_update(State(app): State<Arc<AppState>>, Body(body): Body<UpdateBody>) -> ApiResult {
    let (new_classes, knobs) = (body.new_classes, body.knobs);
    mutate(app, body.request_token, body.expected_revision, move |s| {
        let knobs = knobs.unwrap_or_else(|| s.settings.update.clone());
        Ok((s.update(new_classes, &knobs)?, None::<()>))
    })
    .await
}

/// Serves until ctrl-c.
pub async fn serve(app: Arc<AppState>, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
