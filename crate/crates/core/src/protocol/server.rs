use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::sync::oneshot;

use super::messages::{decode, encode, Message};
use super::mock::{
    FaultConfig, GoalTerminator, GridEditor, GridScorer, OraclePolicy, ScriptedPolicy,
};
use super::{
    BackendError, EditorBackend, PolicyBackend, ScorerBackend, TerminatorBackend, EDITOR_PATH,
    HEALTH_PATH, POLICY_PATH, PROTOCOL_HEADER, PROTOCOL_VERSION, SCORER_PATH, TERMINATOR_PATH,
};

/// Backends exposed by a server. Kinds left as `None` answer 404.
#[derive(Clone, Default)]
pub struct ServerConfig {
    pub policy: Option<Arc<dyn PolicyBackend>>,
    pub editor: Option<Arc<dyn EditorBackend>>,
    pub terminator: Option<Arc<dyn TerminatorBackend>>,
    pub scorer: Option<Arc<dyn ScorerBackend>>,
}

impl ServerConfig {
    /// All four grid mocks: oracle policy, grid editor (with optional
    /// faults), goal terminator and grid scorer.
    pub fn grid_mocks(fault: Option<FaultConfig>) -> Self {
        Self {
            policy: Some(Arc::new(OraclePolicy::new())),
            editor: Some(Arc::new(match fault {
                Some(f) => GridEditor::with_faults(f),
                None => GridEditor::new(),
            })),
            terminator: Some(Arc::new(GoalTerminator::new())),
            scorer: Some(Arc::new(GridScorer::new())),
        }
    }

    /// Like [`ServerConfig::grid_mocks`] but with a scripted policy.
    pub fn scripted(script: Vec<String>) -> Self {
        Self {
            policy: Some(Arc::new(ScriptedPolicy::new(script))),
            ..Self::grid_mocks(None)
        }
    }

    fn kinds(&self) -> Vec<&'static str> {
        let mut kinds = Vec::new();
        if self.policy.is_some() {
            kinds.push("policy");
        }
        if self.editor.is_some() {
            kinds.push("editor");
        }
        if self.terminator.is_some() {
            kinds.push("terminator");
        }
        if self.scorer.is_some() {
            kinds.push("scorer");
        }
        kinds
    }
}

/// A running server. Dropping the handle shuts it down.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves on a background
/// thread with its own runtime.
pub fn serve(config: ServerConfig, addr: SocketAddr) -> std::io::Result<ServerHandle> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let app = router(config);
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name(format!("mira-server-{}", addr.port()))
        .spawn(move || {
            runtime.block_on(async move {
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        })?;
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

fn router(config: ServerConfig) -> Router {
    let kinds = config.kinds();
    let mut app = Router::new().route(
        HEALTH_PATH,
        get(move || async move { Json(json!({"status": "ok", "backends": kinds})) }),
    );
    if let Some(b) = config.policy {
        app = app.route(POLICY_PATH, post(move |h: HeaderMap, body: Bytes| handle(h, body, move |r| b.step(&r))));
    }
    if let Some(b) = config.editor {
        app = app.route(EDITOR_PATH, post(move |h: HeaderMap, body: Bytes| handle(h, body, move |r| b.apply(&r))));
    }
    if let Some(b) = config.terminator {
        app = app.route(
            TERMINATOR_PATH,
            post(move |h: HeaderMap, body: Bytes| handle(h, body, move |r| b.decide(&r))),
        );
    }
    if let Some(b) = config.scorer {
        app = app.route(SCORER_PATH, post(move |h: HeaderMap, body: Bytes| handle(h, body, move |r| b.score(&r))));
    }
    app.fallback(|| async { error(StatusCode::NOT_FOUND, "no such endpoint".into()) })
        .layer(axum::middleware::map_response(|mut response: Response| async move {
            response
                .headers_mut()
                .insert(PROTOCOL_HEADER, HeaderValue::from_static(PROTOCOL_VERSION));
            response
        }))
}

fn error(status: StatusCode, message: String) -> Response {
    (status, Json(json!({ "error": message }))).into_response()
}

fn status_of(err: &BackendError) -> StatusCode {
    match err {
        BackendError::Remote { status, .. } => {
            StatusCode::from_u16(*status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
        }
        BackendError::Timeout(_) => StatusCode::GATEWAY_TIMEOUT,
        BackendError::Connection(_) | BackendError::Malformed(_) | BackendError::ProtocolVersion { .. } => {
            StatusCode::BAD_GATEWAY
        }
        BackendError::ScriptUnderflow { .. } => StatusCode::CONFLICT,
    }
}

async fn handle<Req, Resp, F>(headers: HeaderMap, body: Bytes, f: F) -> Response
where
    Req: Message + Send + 'static,
    Resp: Message + Send + 'static,
    F: FnOnce(Req) -> Result<Resp, BackendError> + Send + 'static,
{
    let version = headers.get(PROTOCOL_HEADER).and_then(|v| v.to_str().ok());
    if version != Some(PROTOCOL_VERSION) {
        return error(
            StatusCode::BAD_REQUEST,
            format!("missing or unsupported {PROTOCOL_HEADER}: {version:?}, expected {PROTOCOL_VERSION}"),
        );
    }
    let req = match decode::<Req>(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    };
    match tokio::task::spawn_blocking(move || f(req)).await {
        Ok(Ok(resp)) => (
            StatusCode::OK,
            [(axum::http::header::CONTENT_TYPE, "application/json")],
            encode(&resp),
        )
            .into_response(),
        Ok(Err(e)) => {
            let message = match &e {
                BackendError::Remote { message, .. } => message.clone(),
                other => other.to_string(),
            };
            error(status_of(&e), message)
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("backend panicked: {e}")),
    }
}
