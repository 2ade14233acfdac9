//! HTTP API backing the label-collection front end.
//!
//! Reads go straight to the immutable report files. Label posts are queued
//! to a single writer thread that appends and syncs the label log before the
//! request is acknowledged.

use std::collections::BTreeSet;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use pttrust_core::pipeline::{report_path, PipelineConfig, SnippetReport};
use pttrust_core::snippets::{append_label, read_labels, LabelRecord};
use pttrust_core::{Error, Result};

type WriteJob = (LabelRecord, oneshot::Sender<Result<()>>);

#[derive(Clone)]
pub struct AppState {
    cfg: Arc<PipelineConfig>,
    writer: mpsc::Sender<WriteJob>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SnippetSummary {
    pub snippet_id: u32,
    pub language: String,
    pub task: String,
    pub n_lines: usize,
    pub max_risk: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelBody {
    error_lines: Vec<i64>,
}

fn spawn_writer(labels: PathBuf) -> mpsc::Sender<WriteJob> {
    let (tx, rx) = mpsc::channel::<WriteJob>();
    std::thread::spawn(move || {
        for (record, done) in rx {
            let _ = done.send(append_label(&labels, &record));
        }
    });
    tx
}

fn error(status: StatusCode, reason: impl Into<String>) -> Response {
    (status, Json(json!({ "error": reason.into() }))).into_response()
}

fn load_report(cfg: &PipelineConfig, id: u32) -> std::result::Result<SnippetReport, Response> {
    let path = report_path(cfg, id);
    if !path.exists() {
        return Err(error(StatusCode::NOT_FOUND, format!("no report for snippet {id}")));
    }
    SnippetReport::load(&path).map_err(|e| error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

fn list_reports(dir: &Path) -> Result<Vec<SnippetReport>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::Io { path: dir.into(), source: e })? {
        let path = entry.map_err(|e| Error::Io { path: dir.into(), source: e })?.path();
        let name = path.file_name().unwrap_or_default().to_string_lossy();
        if name.starts_with("snippet_") && name.ends_with(".json") {
            out.push(SnippetReport::load(&path)?);
        }
    }
    out.sort_by_key(|r| r.snippet_id);
    Ok(out)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn snippets(State(state): State<AppState>) -> Response {
    match list_reports(&state.cfg.paths.reports) {
        Ok(reports) => Json(
            reports
                .into_iter()
                .map(|r| SnippetSummary {
                    snippet_id: r.snippet_id,
                    n_lines: r.lines.len(),
                    max_risk: r.risk_report().max_risk(),
                    language: r.language,
                    task: r.task,
                })
                .collect::<Vec<_>>(),
        )
        .into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn snippet(State(state): State<AppState>, UrlPath(id): UrlPath<u32>) -> Response {
    let report = match load_report(&state.cfg, id) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let labels = match read_labels(&state.cfg.paths.labels) {
        Ok(l) => l,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    let error_lines = labels.get(&id).map(|r| r.error_lines.clone()).unwrap_or_default();
    Json(json!({
        "snippet_id": report.snippet_id,
        "language": report.language,
        "task": report.task,
        "lines": report.lines,
        "snippet_risk": report.snippet_risk,
        "threshold": report.threshold,
        "labels": { "error_lines": error_lines },
    }))
    .into_response()
}

async fn post_labels(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<u32>,
    body: Bytes,
) -> Response {
    let report = match load_report(&state.cfg, id) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let body: LabelBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed body: {e}")),
    };
    let n = report.lines.len() as i64;
    let bad: Vec<i64> = body.error_lines.iter().copied().filter(|&l| l < 0 || l >= n).collect();
    if !bad.is_empty() {
        return error(
            StatusCode::BAD_REQUEST,
            format!("line indices {bad:?} out of range for {n} lines"),
        );
    }
    let lines: BTreeSet<usize> = body.error_lines.iter().map(|&l| l as usize).collect();
    let stored_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    let record = LabelRecord {
        snippet_id: id,
        error_lines: lines.into_iter().collect(),
        stored_at,
    };
    let (tx, rx) = oneshot::channel();
    if state.writer.send((record, tx)).is_err() {
        return error(StatusCode::SERVICE_UNAVAILABLE, "label writer stopped");
    }
    match rx.await {
        Ok(Ok(())) => Json(json!({ "accepted": true, "stored_at": stored_at })).into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(_) => error(StatusCode::SERVICE_UNAVAILABLE, "label writer stopped"),
    }
}

pub fn router(cfg: PipelineConfig) -> Router {
    let writer = spawn_writer(cfg.paths.labels.clone());
    let state = AppState {
        cfg: Arc::new(cfg),
        writer,
    };
    Router::new()
        .route("/api/health", get(health))
        .route("/api/snippets", get(snippets))
        .route("/api/snippets/{id}", get(snippet))
        .route("/api/snippets/{id}/labels", post(post_labels))
        .with_state(state)
}

/// Bind the configured address; port 0 picks a free port.
pub async fn bind(cfg: &PipelineConfig) -> Result<TcpListener> {
    if !cfg.paths.reports.is_dir() {
        return Err(Error::Config(format!(
            "reports directory {} does not exist",
            cfg.paths.reports.display()
        )));
    }
    let addr = format!("{}:{}", cfg.serve.bind, cfg.serve.port);
    TcpListener::bind(&addr)
        .await
        .map_err(|e| Error::Config(format!("cannot listen on {addr}: {e}")))
}

pub async fn serve(listener: TcpListener, cfg: PipelineConfig) -> std::io::Result<()> {
    axum::serve(listener, router(cfg)).await
}

pub fn local_addr(listener: &TcpListener) -> Option<SocketAddr> {
    listener.local_addr().ok()
}
