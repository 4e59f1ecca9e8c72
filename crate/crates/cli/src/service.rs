//! HTTP service over a gallery root.
//!
//! | Method | Path | Response |
//! |---|---|---|
//! | GET | `/api/manifest/{job}` | `jobs/<job>/manifest.json` |
//! | GET | `/api/images/{job}--{image}` | PNG raster |
//! | GET | `/api/bins/{job}/{dim}` | bin ranges of local dimension `dim` |
//! | POST | `/api/jobs` | [`JobStatus`] for a [`JobRequest`] body |
//! | GET | `/api/jobs/{id}` | [`JobStatus`] |
//!
//! Errors are `{"error": "..."}` with a 4xx/5xx status. Jobs run one at a
//! time on a single worker.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use divan_core::dataset::Dataset;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::formats::boundaries_file;
use crate::pipeline::{jobs_dir, run_pipeline, JobRequest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: String,
    pub state: JobState,
    /// Every state the job has been in, oldest first.
    pub history: Vec<JobState>,
    pub cached: bool,
    pub error: Option<String>,
    /// Manifest URL once done.
    pub manifest: Option<String>,
}

impl JobStatus {
    fn new(id: &str, state: JobState, cached: bool) -> Self {
        Self {
            id: id.into(),
            state,
            history: vec![state],
            cached,
            error: None,
            manifest: (state == JobState::Done).then(|| manifest_url(id)),
        }
    }

    fn advance(&mut self, state: JobState) {
        self.state = state;
        self.history.push(state);
        if state == JobState::Done {
            self.manifest = Some(manifest_url(&self.id));
        }
    }
}

fn manifest_url(id: &str) -> String {
    format!("/api/manifest/{id}")
}

pub struct AppState {
    root: PathBuf,
    jobs: Mutex<HashMap<String, JobStatus>>,
    queue: mpsc::UnboundedSender<(String, JobRequest)>,
}

impl AppState {
    pub fn root(&self) -> &Path {
        &self.root
    }

    fn set(&self, id: &str, f: impl FnOnce(&mut JobStatus)) {
        if let Some(s) = self.jobs.lock().unwrap().get_mut(id) {
            f(s);
        }
    }
}

/// Builds the router and spawns the job worker on the current runtime.
pub fn app(root: PathBuf) -> Router {
    let (tx, mut rx) = mpsc::unbounded_channel::<(String, JobRequest)>();
    let state = Arc::new(AppState {
        root,
        jobs: Mutex::new(HashMap::new()),
        queue: tx,
    });
    let worker = state.clone();
    tokio::spawn(async move {
        while let Some((id, req)) = rx.recv().await {
            worker.set(&id, |s| s.advance(JobState::Running));
            let root = worker.root.clone();
            let result = tokio::task::spawn_blocking(move || run_pipeline(&req, &root)).await;
            match result {
                Ok(Ok(outcome)) => {
                    tracing::info!(job = %outcome.job_id, images = outcome.manifest.images.len(), "job done");
                    worker.set(&id, |s| s.advance(JobState::Done));
                }
                Ok(Err(e)) => {
                    tracing::warn!(job = %id, error = %format!("{e:#}"), "job failed");
                    worker.set(&id, |s| {
                        s.advance(JobState::Failed);
                        s.error = Some(format!("{e:#}"));
                    });
                }
                Err(e) => worker.set(&id, |s| {
                    s.advance(JobState::Failed);
                    s.error = Some(format!("worker panicked: {e}"));
                }),
            }
        }
    });
    Router::new()
        .route("/api/manifest/:job", get(get_manifest))
        .route("/api/images/:id", get(get_image))
        .route("/api/bins/:job/:dim", get(get_bins))
        .route("/api/jobs", post(post_job))
        .route("/api/jobs/:id", get(get_job))
        .with_state(state)
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn not_found(what: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("{what} not found"))
}

/// Ids are hex job ids or image ids: letters, digits, `-` and `_` only.
fn safe_id(id: &str) -> Result<&str, ApiError> {
    if !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        Ok(id)
    } else {
        Err(ApiError(StatusCode::BAD_REQUEST, format!("invalid id '{id}'")))
    }
}

async fn read_file(path: PathBuf, what: String) -> Result<Vec<u8>, ApiError> {
    tokio::fs::read(&path).await.map_err(|_| not_found(what))
}

fn json_bytes(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

async fn get_manifest(State(st): State<Arc<AppState>>, UrlPath(job): UrlPath<String>) -> Result<Response, ApiError> {
    let job = safe_id(&job)?;
    let path = jobs_dir(&st.root).join(job).join("manifest.json");
    Ok(json_bytes(read_file(path, format!("manifest for job {job}")).await?))
}

async fn get_image(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let id = id.strip_suffix(".png").unwrap_or(&id);
    let (job, image) = id
        .split_once("--")
        .ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, "image id must be <job>--<image>".into()))?;
    let (job, image) = (safe_id(job)?, safe_id(image)?);
    let path = jobs_dir(&st.root).join(job).join("images").join(format!("{image}.png"));
    let bytes = read_file(path, format!("image {image} of job {job}")).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn get_bins(
    State(st): State<Arc<AppState>>,
    UrlPath((job, dim)): UrlPath<(String, usize)>,
) -> Result<Response, ApiError> {
    let job = safe_id(&job)?;
    let path = jobs_dir(&st.root).join(job).join("bins").join(boundaries_file(dim));
    Ok(json_bytes(read_file(path, format!("bins for dimension {dim} of job {job}")).await?))
}

async fn post_job(
    State(st): State<Arc<AppState>>,
    Json(mut req): Json<JobRequest>,
) -> Result<(StatusCode, Json<JobStatus>), ApiError> {
    req.validate().map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("{e:#}")))?;
    if req.dataset.is_relative() {
        req.dataset = st.root.join(&req.dataset);
    }
    let fingerprint = Dataset::fingerprint(&req.dataset).map_err(|e| {
        ApiError(
            StatusCode::BAD_REQUEST,
            format!("dataset {} is not preprocessed: {e}", req.dataset.display()),
        )
    })?;
    let id = req.job_id(&fingerprint);
    let mut jobs = st.jobs.lock().unwrap();
    if let Some(existing) = jobs.get(&id) {
        if existing.state != JobState::Failed {
            return Ok((StatusCode::OK, Json(existing.clone())));
        }
    }
    if jobs_dir(&st.root).join(&id).join("manifest.json").exists() {
        let status = JobStatus::new(&id, JobState::Done, true);
        jobs.insert(id, status.clone());
        return Ok((StatusCode::OK, Json(status)));
    }
    let status = JobStatus::new(&id, JobState::Queued, false);
    jobs.insert(id.clone(), status.clone());
    st.queue
        .send((id, req))
        .map_err(|_| ApiError(StatusCode::SERVICE_UNAVAILABLE, "job worker stopped".into()))?;
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn get_job(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<JobStatus>, ApiError> {
    let id = safe_id(&id)?;
    if let Some(s) = st.jobs.lock().unwrap().get(id) {
        return Ok(Json(s.clone()));
    }
    if jobs_dir(&st.root).join(id).join("manifest.json").exists() {
        return Ok(Json(JobStatus::new(id, JobState::Done, true)));
    }
    Err(not_found(format!("job {id}")))
}
