use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use chrono::{DateTime, Utc};
use serde::Deserialize;
use tokio::sync::oneshot;

use super::service::{SiteReply, SiteRequest, SiteService};
use super::{SiteConfig, SiteError};

pub fn router(service: Arc<SiteService>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/computations", post(upload))
        .route("/computations/{id}", get(status).delete(withdraw))
        .route("/computations/{id}/execute", post(execute))
        .route("/computations/{id}/log", get(read_log))
        .with_state(service)
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_string())
}

fn respond(reply: SiteReply) -> Response {
    let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, "application/json")], reply.body).into_response()
}

/// Handlers do file I/O and numerics, so they run on the blocking pool.
async fn run<F>(service: Arc<SiteService>, f: F) -> Response
where
    F: FnOnce(&SiteService) -> SiteReply + Send + 'static,
{
    match tokio::task::spawn_blocking(move || f(&service)).await {
        Ok(reply) => respond(reply),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn health(State(s): State<Arc<SiteService>>) -> Response {
    run(s, |s| s.handle(None, SiteRequest::Health)).await
}

async fn upload(State(s): State<Arc<SiteService>>, headers: HeaderMap, body: Bytes) -> Response {
    let token = bearer(&headers);
    run(s, move |s| s.handle(token.as_deref(), SiteRequest::Upload { body: &body })).await
}

async fn execute(State(s): State<Arc<SiteService>>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> Response {
    let token = bearer(&headers);
    run(s, move |s| s.handle(token.as_deref(), SiteRequest::Execute { defn_id: &id, body: &body })).await
}

async fn status(State(s): State<Arc<SiteService>>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    let token = bearer(&headers);
    run(s, move |s| s.handle(token.as_deref(), SiteRequest::Status { defn_id: &id })).await
}

async fn withdraw(State(s): State<Arc<SiteService>>, Path(id): Path<String>, headers: HeaderMap) -> Response {
    let token = bearer(&headers);
    run(s, move |s| s.handle(token.as_deref(), SiteRequest::Withdraw { defn_id: &id })).await
}

#[derive(Debug, Deserialize)]
struct LogParams {
    since: Option<DateTime<Utc>>,
    until: Option<DateTime<Utc>>,
}

async fn read_log(
    State(s): State<Arc<SiteService>>,
    Path(id): Path<String>,
    Query(q): Query<LogParams>,
    headers: HeaderMap,
) -> Response {
    let token = bearer(&headers);
    run(s, move |s| {
        s.handle(token.as_deref(), SiteRequest::ReadLog { defn_id: &id, since: q.since, until: q.until })
    })
    .await
}

/// A site server running on its own thread and runtime.
pub struct SiteServerHandle {
    addr: SocketAddr,
    service: Arc<SiteService>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
    runtime_kill: Option<oneshot::Sender<()>>,
}

impl SiteServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn service(&self) -> &Arc<SiteService> {
        &self.service
    }

    /// Stops accepting connections and waits for in-flight requests.
    pub fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Tears the runtime down immediately, abandoning in-flight requests,
    /// as a crash would. Persisted state is all that survives.
    pub fn kill(mut self) {
        if let Some(tx) = self.runtime_kill.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for SiteServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Site(#[from] SiteError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("runtime: {0}")]
    Runtime(std::io::Error),
}

/// Opens the workspace, binds `config.listen` (port 0 picks a free port) and
/// serves on a background thread.
pub fn spawn_site_server(config: &SiteConfig) -> Result<SiteServerHandle, ServeError> {
    let service = Arc::new(SiteService::open(config)?);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(ServeError::Runtime)?;
    let listen = config.listen;
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind(listen))
        .map_err(|source| ServeError::Bind { addr: listen, source })?;
    let addr = listener.local_addr().map_err(|source| ServeError::Bind { addr: listen, source })?;
    let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
    let (kill_tx, kill_rx) = oneshot::channel::<()>();
    let app = router(service.clone());
    let name = config.name.clone();
    let thread = std::thread::Builder::new()
        .name(format!("site-{name}"))
        .spawn(move || {
            let killed = runtime.block_on(async move {
                let server = axum::serve(listener, app).with_graceful_shutdown(async {
                    let _ = shutdown_rx.await;
                });
                tokio::select! {
                    r = server => {
                        if let Err(e) = r {
                            tracing::error!(site = %name, error = %e, "server stopped");
                        }
                        false
                    }
                    _ = kill_rx => true,
                }
            });
            if killed {
                runtime.shutdown_background();
            }
        })
        .map_err(ServeError::Runtime)?;
    tracing::info!(site = %config.name, %addr, "site server listening");
    Ok(SiteServerHandle {
        addr,
        service,
        shutdown: Some(shutdown_tx),
        thread: Some(thread),
        runtime_kill: Some(kill_tx),
    })
}

/// Serves in the foreground until Ctrl-C.
pub fn serve_forever(config: &SiteConfig) -> Result<(), ServeError> {
    let service = Arc::new(SiteService::open(config)?);
    let runtime = tokio::runtime::Runtime::new().map_err(ServeError::Runtime)?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(config.listen)
            .await
            .map_err(|source| ServeError::Bind { addr: config.listen, source })?;
        tracing::info!(site = %config.name, addr = %config.listen, "site server listening");
        axum::serve(listener, router(service))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(ServeError::Runtime)
    })
}
