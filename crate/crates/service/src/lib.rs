//! HTTP tuning service: upload an image, adjust pipeline parameters, and
//! inspect every intermediate stage with stage-level caching.
//!
//! | Route | Result |
//! |---|---|
//! | `POST /api/sessions` (multipart `image`) | `201 {id, width, height}` |
//! | `GET /api/sessions/{id}` | config, digest, cached stages |
//! | `PATCH /api/sessions/{id}/params` (JSON merge patch) | `{invalidated: [...]}` |
//! | `GET /api/sessions/{id}/stages/{stage}?layer=` | `image/png` |
//! | `GET /api/sessions/{id}/result` | report JSON |
//! | `DELETE /api/sessions/{id}` | `204` |
//!
//! Requests on one session are serialized, so concurrent requests for the
//! same stale stage compute it once. Different sessions run in parallel.

pub mod engine;
pub mod graph;
mod routes;
mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

pub use routes::router;
pub use store::{AppState, SessionStore};

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub port: u16,
    pub max_upload_mb: usize,
    pub session_ttl: Duration,
    pub static_dir: Option<PathBuf>,
    pub session_dir: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            port: 8080,
            max_upload_mb: 50,
            session_ttl: Duration::from_secs(3600),
            static_dir: None,
            session_dir: None,
        }
    }
}

/// Binds `0.0.0.0:port` and serves until the process ends.
pub async fn serve(opts: ServeOptions) -> std::io::Result<()> {
    let state = AppState::new(&opts)?;
    state.spawn_reaper();
    let app = router(state, &opts);
    let addr = SocketAddr::from(([0, 0, 0, 0], opts.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await
}
