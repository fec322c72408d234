//! HTTP front end for the review queue.
//!
//! Routes:
//!
//! - `GET /api/tasks/next?annotator=NAME` returns `{"task": ReviewTask | null}`
//! - `POST /api/verdicts` takes a `VerdictSubmission`, returns the stored verdict and progress
//! - `GET /api/progress`
//! - `GET /api/export/labels` returns answerability labels as JSON lines
//! - `GET /media/{path}` serves images from the media directory
//! - anything else is served from the UI directory, if one is configured
//!
//! Errors are `{"code": ..., "message": ...}` with a 4xx or 5xx status.
//! Every accepted verdict is appended to the log file before the queue sees it.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

use vqakit_core::corpus::ImageCaptionRecord;
use vqakit_core::review::{ReviewQueue, ReviewVerdict, VerdictSubmission};
use vqakit_core::{jsonl, Error, QaPair};

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// `review_candidates.jsonl` from the split stage.
    pub candidates: PathBuf,
    /// Corpus file used to map records to image paths.
    pub corpus: Option<PathBuf>,
    /// Append-only verdict log. Replayed on startup if it exists.
    pub log: PathBuf,
    pub media_dir: PathBuf,
    pub ui_dir: Option<PathBuf>,
    pub lease_ms: u64,
}

pub struct AppState {
    queue: Mutex<ReviewQueue>,
    log: Mutex<File>,
    media_dir: PathBuf,
    ui_dir: Option<PathBuf>,
    clock: Clock,
}

impl AppState {
    pub fn load(config: &ServiceConfig, clock: Clock) -> vqakit_core::Result<Arc<Self>> {
        let candidates: Vec<QaPair> = jsonl::read(&config.candidates)?;
        let image_refs: HashMap<String, String> = match &config.corpus {
            Some(path) => jsonl::read::<ImageCaptionRecord>(path)?
                .into_iter()
                .map(|r| (r.record_id, r.image_ref))
                .collect(),
            None => HashMap::new(),
        };
        let history: Vec<ReviewVerdict> = if config.log.is_file() {
            jsonl::read(&config.log)?
        } else {
            Vec::new()
        };
        let replayed = history.len();
        let queue = ReviewQueue::replay(candidates, image_refs, config.lease_ms, history)?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&config.log)
            .map_err(|e| Error::io(&config.log, e))?;
        tracing::info!(candidates = queue.candidates().len(), replayed, "review queue loaded");
        Ok(Arc::new(AppState {
            queue: Mutex::new(queue),
            log: Mutex::new(log),
            media_dir: config.media_dir.clone(),
            ui_dir: config.ui_dir.clone(),
            clock,
        }))
    }

    fn queue(&self) -> std::sync::MutexGuard<'_, ReviewQueue> {
        self.queue.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/verdicts", post(submit_verdict))
        .route("/api/progress", get(progress))
        .route("/api/export/labels", get(export_labels))
        .route("/media/{*path}", get(media))
        .fallback(get(ui))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "review service listening");
    axum::serve(listener, router(state)).await
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(what: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::UnknownPair(_) => StatusCode::NOT_FOUND,
            Error::InvalidData(_) | Error::Precondition(_) | Error::Json(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"code": self.code, "message": self.message}))).into_response()
    }
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

async fn next_task(State(state): State<Arc<AppState>>, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    let annotator = q
        .annotator
        .filter(|a| !a.trim().is_empty())
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "annotator query parameter is required"))?;
    let now = (state.clock)();
    let task = state.queue().next_task(&annotator, now);
    Ok(Json(json!({ "task": task })).into_response())
}

async fn submit_verdict(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let submission: VerdictSubmission = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", format!("invalid verdict: {e}")))?;
    let now = (state.clock)();
    let mut queue = state.queue();
    let verdict = queue.prepare(submission, now)?;
    {
        let mut line = serde_json::to_vec(&verdict).map_err(Error::from)?;
        line.push(b'\n');
        let mut log = state.log.lock().unwrap_or_else(|e| e.into_inner());
        log.write_all(&line)
            .and_then(|_| log.sync_data())
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "io", format!("verdict log: {e}")))?;
    }
    queue.apply(verdict.clone())?;
    let progress = queue.progress();
    Ok((StatusCode::CREATED, Json(json!({ "verdict": verdict, "progress": progress }))).into_response())
}

async fn progress(State(state): State<Arc<AppState>>) -> Response {
    Json(state.queue().progress()).into_response()
}

async fn export_labels(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let labels = state.queue().export_labels();
    let mut body = String::new();
    for l in &labels {
        body.push_str(&serde_json::to_string(l).map_err(Error::from)?);
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn media(State(state): State<Arc<AppState>>, UrlPath(path): UrlPath<String>) -> Result<Response, ApiError> {
    serve_file(&state.media_dir, &path).await
}

async fn ui(State(state): State<Arc<AppState>>, uri: Uri) -> Result<Response, ApiError> {
    let Some(dir) = &state.ui_dir else {
        return Err(ApiError::not_found(uri.path()));
    };
    let rel = uri.path().trim_start_matches('/');
    serve_file(dir, if rel.is_empty() { "index.html" } else { rel }).await
}

/// Join a request path onto `base`, refusing anything that could leave it.
pub fn safe_join(base: &Path, rel: &str) -> Option<PathBuf> {
    let rel = Path::new(rel);
    if rel.as_os_str().is_empty() || !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return None;
    }
    Some(base.join(rel))
}

async fn serve_file(base: &Path, rel: &str) -> Result<Response, ApiError> {
    let path = safe_join(base, rel).ok_or_else(|| ApiError::not_found(rel))?;
    let bytes = tokio::fs::read(&path).await.map_err(|_| ApiError::not_found(rel))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

fn content_type(path: &Path) -> &'static str {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "jpg" | "jpeg" => "image/jpeg",
        "png" => "image/png",
        "gif" => "image/gif",
        "webp" => "image/webp",
        "svg" => "image/svg+xml",
        "html" => "text/html; charset=utf-8",
        "js" => "text/javascript",
        "css" => "text/css",
        "json" => "application/json",
        _ => "application/octet-stream",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn safe_join_rejects_escapes() {
        let base = Path::new("/srv/media");
        assert_eq!(safe_join(base, "a/b.jpg"), Some(PathBuf::from("/srv/media/a/b.jpg")));
        assert_eq!(safe_join(base, "../etc/passwd"), None);
        assert_eq!(safe_join(base, "a/../../x"), None);
        assert_eq!(safe_join(base, "/etc/passwd"), None);
        assert_eq!(safe_join(base, "./a"), None);
        assert_eq!(safe_join(base, ""), None);
    }

    #[test]
    fn content_types() {
        assert_eq!(content_type(Path::new("x.JPG")), "image/jpeg");
        assert_eq!(content_type(Path::new("x")), "application/octet-stream");
    }
}
