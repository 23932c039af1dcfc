use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use ballast_core::imagecore::{decode_image, layer_bands, ImageError};
use ballast_core::pipeline::{Assets, PipelineConfig, PipelineError};
use ballast_core::Layer;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::engine::{SessionState, StageFailure};
use crate::graph::ViewStage;
use crate::store::{AppState, Session};
use crate::ServeOptions;

/// Slack on top of the image size limit for multipart framing.
const MULTIPART_OVERHEAD: usize = 64 * 1024;

pub fn router(state: AppState, opts: &ServeOptions) -> Router {
    let api = Router::new()
        .route(
            "/api/sessions",
            post(create_session).layer(DefaultBodyLimit::max(state.max_upload_bytes + MULTIPART_OVERHEAD)),
        )
        .route("/api/sessions/:id", get(get_session).delete(delete_session))
        .route("/api/sessions/:id/params", patch(update_params))
        .route("/api/sessions/:id/stages/:stage", get(get_stage))
        .route("/api/sessions/:id/result", get(get_result))
        .with_state(state);
    match &opts.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

fn error(status: StatusCode, kind: &str, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": kind, "message": message.into() }))).into_response()
}

fn not_found(id: &str) -> Response {
    error(StatusCode::NOT_FOUND, "NotFound", format!("no session {id}"))
}

fn invalid_param(field: &str, message: impl Into<String>) -> Response {
    (
        StatusCode::UNPROCESSABLE_ENTITY,
        Json(json!({ "error": "InvalidParameter", "field": field, "message": message.into() })),
    )
        .into_response()
}

fn conflict(f: StageFailure) -> Response {
    (StatusCode::CONFLICT, Json(f)).into_response()
}

fn json_bytes(status: StatusCode, body: Vec<u8>) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

/// Runs `f` on the session state on a blocking thread, holding the session
/// lock for the whole call.
async fn with_session<T: Send + 'static>(
    session: Arc<Session>,
    f: impl FnOnce(&mut SessionState) -> T + Send + 'static,
) -> T {
    let mut guard = session.state.clone().lock_owned().await;
    tokio::task::spawn_blocking(move || f(&mut guard))
        .await
        .expect("session task panicked")
}

async fn create_session(State(app): State<AppState>, mut form: Multipart) -> Response {
    let mut upload = None;
    loop {
        match form.next_field().await {
            Ok(Some(field)) => {
                let is_image = field.name() == Some("image") || field.file_name().is_some();
                let name = field.file_name().unwrap_or("upload").to_string();
                let bytes = match field.bytes().await {
                    Ok(b) => b,
                    Err(e) => return error(e.status(), "BadUpload", e.body_text()),
                };
                if is_image && upload.is_none() {
                    upload = Some((name, bytes));
                }
            }
            Ok(None) => break,
            Err(e) => return error(e.status(), "BadUpload", e.body_text()),
        }
    }
    let Some((name, bytes)) = upload else {
        return error(StatusCode::BAD_REQUEST, "BadUpload", "missing image field");
    };
    if bytes.len() > app.max_upload_bytes {
        return error(
            StatusCode::PAYLOAD_TOO_LARGE,
            "PayloadTooLarge",
            format!("upload exceeds {} bytes", app.max_upload_bytes),
        );
    }
    let decoded = tokio::task::spawn_blocking(move || {
        let image = decode_image(&bytes, Path::new(&name))?;
        layer_bands(image.height())?;
        Ok::<_, ImageError>((image, bytes))
    })
    .await
    .expect("decode task panicked");
    let (image, bytes) = match decoded {
        Ok(ok) => ok,
        Err(e @ ImageError::UnsupportedFormat { .. }) => {
            return error(StatusCode::UNSUPPORTED_MEDIA_TYPE, "UnsupportedFormat", e.to_string())
        }
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, "CorruptImage", e.to_string()),
    };
    let (width, height) = (image.width(), image.height());
    let id = uuid::Uuid::new_v4().simple().to_string();
    let cfg = PipelineConfig::default();
    app.store
        .insert(id.clone(), SessionState::new(image, cfg, Assets::default()), &bytes);
    log::info!("session {id}: {width}x{height}");
    (
        StatusCode::CREATED,
        Json(json!({ "id": id, "width": width, "height": height })),
    )
        .into_response()
}

async fn get_session(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    let Some(session) = app.store.get(&id) else {
        return not_found(&id);
    };
    let body = with_session(session, move |s| {
        json!({
            "id": id,
            "width": s.image().width(),
            "height": s.image().height(),
            "config": s.config(),
            "params_digest": s.config().digest(),
            "cached": s.cached().iter().map(|n| n.to_string()).collect::<Vec<_>>(),
        })
    })
    .await;
    Json(body).into_response()
}

async fn delete_session(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    if app.store.remove(&id) {
        StatusCode::NO_CONTENT.into_response()
    } else {
        not_found(&id)
    }
}

/// Merges a JSON merge patch into `current`, validates it and loads the
/// files it refers to.
fn merge_config(current: &PipelineConfig, patch: &Value) -> Result<(PipelineConfig, Assets), Response> {
    let cfg = current
        .apply_patch(patch)
        .map_err(|e| invalid_param(&e.path, e.reason))?;
    let assets = Assets::load(&cfg).map_err(|e| {
        let field = match e {
            PipelineError::Color(_) => "color_key",
            _ => "reference_image",
        };
        invalid_param(field, e.to_string())
    })?;
    Ok((cfg, assets))
}

async fn update_params(State(app): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    let Some(session) = app.store.get(&id) else {
        return not_found(&id);
    };
    let patch: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::BAD_REQUEST, "MalformedJson", e.to_string()),
    };
    let store = app.store.clone();
    with_session(session, move |s| {
        let (cfg, assets) = match merge_config(s.config(), &patch) {
            Ok(ok) => ok,
            Err(resp) => return resp,
        };
        store.spill_config(&id, &cfg);
        let stale = s.update(cfg, assets);
        let names: Vec<String> = stale.iter().map(|n| n.to_string()).collect();
        log::debug!("session {id}: invalidated {names:?}");
        Json(json!({ "invalidated": names, "params_digest": s.config().digest() })).into_response()
    })
    .await
}

async fn get_stage(
    State(app): State<AppState>,
    UrlPath((id, stage)): UrlPath<(String, String)>,
    Query(query): Query<HashMap<String, String>>,
) -> Response {
    let Some(session) = app.store.get(&id) else {
        return not_found(&id);
    };
    let Some(stage) = ViewStage::parse(&stage) else {
        return error(StatusCode::BAD_REQUEST, "UnknownStage", format!("no stage {stage}"));
    };
    let layer = match query.get("layer").map(|l| Layer::parse(l).ok_or(l)) {
        None => None,
        Some(Ok(l)) => Some(l),
        Some(Err(l)) => return error(StatusCode::BAD_REQUEST, "UnknownLayer", format!("no layer {l}")),
    };
    match with_session(session, move |s| s.stage_png(stage, layer)).await {
        Ok(bytes) => png(bytes),
        Err(f) => conflict(f),
    }
}

async fn get_result(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    let Some(session) = app.store.get(&id) else {
        return not_found(&id);
    };
    match with_session(session, |s| s.report()).await {
        Ok(report) => json_bytes(StatusCode::OK, report.to_json()),
        Err(f) => conflict(f),
    }
}
