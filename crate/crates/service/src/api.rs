//! HTTP routes.

use std::sync::Arc;
use std::time::SystemTime;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::error::{ServiceError, ServiceResult};
use crate::pipeline::{ClassEntry, Engine, JobEntry, VisualizationJobResult, random_hex_id};
use crate::session::{Session, SessionStore};

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub sessions: Arc<SessionStore>,
    pub max_upload_bytes: usize,
}

pub fn router(state: AppState) -> Router {
    // Leave headroom over the cap so oversize files reach the handler and get
    // a descriptive error instead of a bare 413.
    let body_limit = state.max_upload_bytes.saturating_mul(2).saturating_add(1 << 20);
    Router::new()
        .route("/api/health", get(health))
        .route("/api/visualizers", get(visualizers))
        .route("/api/sessions", post(create_session))
        .route(
            "/api/sessions/{id}/images",
            post(upload_image).layer(DefaultBodyLimit::max(body_limit)),
        )
        .route("/api/sessions/{id}/jobs", post(create_job))
        .route("/api/sessions/{id}/artifacts/{png_id}", get(fetch_artifact))
        .with_state(state)
}

async fn health(State(s): State<AppState>) -> Json<Value> {
    Json(json!({
        "model": s.engine.name,
        "input_shape": s.engine.model.input_shape,
        "class_count": s.engine.model.class_count,
    }))
}

async fn visualizers(State(s): State<AppState>) -> Json<Value> {
    Json(json!(s.engine.visualizers()))
}

async fn create_session(State(s): State<AppState>) -> ServiceResult<(StatusCode, Json<Value>)> {
    let sessions = s.sessions.clone();
    let id = tokio::task::spawn_blocking(move || sessions.create(SystemTime::now()))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))))
}

fn too_large(cap: usize) -> ServiceError {
    ServiceError::bad_request(
        "payload_too_large",
        format!("upload exceeds the {cap}-byte limit ({} MiB)", cap as f64 / (1024.0 * 1024.0)),
    )
}

/// Checks that bytes are a decodable PNG.
pub fn check_png(bytes: &[u8]) -> ServiceResult<()> {
    if !bytes.starts_with(PNG_SIGNATURE) {
        return Err(ServiceError::bad_request("invalid_image", "upload is not a PNG file"));
    }
    lensbox_core::io::preprocess::decode_png(bytes)
        .map(|_| ())
        .map_err(|e| ServiceError::bad_request("invalid_image", e.to_string()))
}

async fn upload_image(
    State(s): State<AppState>,
    Path(id): Path<String>,
    mut multipart: Multipart,
) -> ServiceResult<(StatusCode, Json<Value>)> {
    let handle = s.sessions.get(&id, SystemTime::now())?;
    let cap = s.max_upload_bytes;
    let multipart_err = |e: axum::extract::multipart::MultipartError| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            too_large(cap)
        } else {
            ServiceError::bad_request("invalid_request", e.body_text())
        }
    };
    let field = multipart
        .next_field()
        .await
        .map_err(multipart_err)?
        .ok_or_else(|| ServiceError::bad_request("invalid_request", "multipart body has no file part"))?;
    let filename = field.file_name().unwrap_or("upload.png").to_string();
    let bytes = field.bytes().await.map_err(multipart_err)?;
    if bytes.len() > cap {
        return Err(too_large(cap));
    }
    check_png(&bytes)?;
    let mut session = handle.lock_owned().await;
    let image_id = tokio::task::spawn_blocking(move || session.add_image(&filename, &bytes))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(json!({ "image_id": image_id }))))
}

#[derive(Debug, Deserialize)]
pub struct JobRequest {
    pub visualizer: String,
    #[serde(default)]
    pub settings: Map<String, Value>,
    pub image_ids: Vec<String>,
}

/// Runs a visualizer over session images and writes the PNGs to the
/// session's output directory.
pub fn run_job(engine: &Engine, session: &mut Session, request: &JobRequest) -> ServiceResult<VisualizationJobResult> {
    let settings = engine.settings(&request.visualizer, &request.settings)?;
    if request.image_ids.is_empty() {
        return Err(ServiceError::bad_request("invalid_request", "image_ids must not be empty"));
    }
    let paths = request
        .image_ids
        .iter()
        .map(|id| session.image_path(id))
        .collect::<ServiceResult<Vec<_>>>()?;
    let mut entries = Vec::with_capacity(paths.len());
    for (image_id, path) in request.image_ids.iter().zip(paths) {
        let png = std::fs::read(&path)?;
        let maps = engine.visualize(&request.visualizer, &settings, &png)?;
        let classes = maps
            .into_iter()
            .map(|m| {
                Ok(ClassEntry {
                    png_id: session.write_artifact(&m.png)?,
                    label: m.label,
                    class_index: m.class_index,
                    probability: m.probability,
                })
            })
            .collect::<ServiceResult<Vec<_>>>()?;
        entries.push(JobEntry {
            image_id: image_id.clone(),
            classes,
        });
    }
    Ok(VisualizationJobResult {
        job_id: random_hex_id(64),
        visualizer: request.visualizer.clone(),
        settings: settings.to_json(),
        entries,
    })
}

async fn create_job(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<JobRequest>, JsonRejection>,
) -> ServiceResult<Json<VisualizationJobResult>> {
    let Json(request) = body.map_err(|e| ServiceError::bad_request("invalid_request", e.body_text()))?;
    let handle = s.sessions.get(&id, SystemTime::now())?;
    // The job holds the session for its whole duration.
    let mut session = handle.lock_owned().await;
    let engine = s.engine.clone();
    let result = tokio::task::spawn_blocking(move || run_job(&engine, &mut session, &request))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    log::info!(
        "session {id}: job {} ran {} over {} image(s)",
        result.job_id,
        result.visualizer,
        result.entries.len()
    );
    Ok(Json(result))
}

async fn fetch_artifact(
    State(s): State<AppState>,
    Path((id, png_id)): Path<(String, String)>,
) -> ServiceResult<impl IntoResponse> {
    let handle = s.sessions.get(&id, SystemTime::now())?;
    let path = handle.lock().await.artifact_path(&png_id)?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ServiceError::not_found("artifact", png_id))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes))
}
