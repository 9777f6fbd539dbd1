use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kcc_core::{ReplyKind, SessionState};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

use crate::config::GatewayConfig;
use crate::service::{ChatService, Engine, InboundMessage, ServiceError};

#[derive(Debug, Deserialize)]
pub struct MessageRequest {
    pub sender_id: String,
    #[serde(default)]
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct MessageResponse {
    pub sender_id: String,
    pub replies: Vec<String>,
    pub kinds: Vec<ReplyKind>,
    pub state: SessionState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("engine failed to load: {0}")]
    Engine(String),
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match e {
            ServiceError::Unready => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

pub fn router(service: Arc<ChatService>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/v1/messages", post(post_message))
        .route("/api/v1/health", get(health))
        .with_state(service);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(TraceLayer::new_for_http())
}

async fn post_message(
    State(service): State<Arc<ChatService>>,
    body: Result<Json<MessageRequest>, JsonRejection>,
) -> Result<Json<MessageResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.body_text()))?;
    let out = service.handle_message(InboundMessage::now(req.sender_id, req.text)).await?;
    Ok(Json(MessageResponse {
        sender_id: out.sender_id,
        replies: out.replies,
        kinds: out.kinds,
        state: out.state_after,
        confidence: out.confidence,
    }))
}

async fn health(State(service): State<Arc<ChatService>>) -> Response {
    match service.engine() {
        Some(engine) => Json(json!({
            "status": "ok",
            "corpus_docs": engine.index.n_docs(),
            "threshold": engine.policy.confidence_threshold(),
        }))
        .into_response(),
        None => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "unready" }))).into_response(),
    }
}

/// Serves `service` on `listener` until `shutdown` resolves. Idle sessions
/// are swept every quarter of the idle limit; sessions are saved on exit when
/// a snapshot path is configured.
pub async fn serve(
    listener: TcpListener,
    service: Arc<ChatService>,
    config: &GatewayConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let idle = config.session_idle();
    let sweeper = {
        let service = service.clone();
        let period = (idle / 4).max(std::time::Duration::from_secs(1));
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            loop {
                tick.tick().await;
                let evicted = service.session_gc(idle);
                if evicted > 0 {
                    tracing::info!(evicted, "idle sessions evicted");
                }
            }
        })
    };
    let app = router(service.clone(), config.static_dir.clone());
    let result = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;
    sweeper.abort();
    if let Some(path) = &config.session_snapshot_path {
        match service.save_sessions(path).await {
            Ok(n) => tracing::info!(sessions = n, path = %path.display(), "sessions saved"),
            Err(e) => tracing::error!(error = %e, "saving sessions failed"),
        }
    }
    result
}

/// Binds the configured address, restores sessions, and serves while the
/// engine loads in the background. Requests get 503 until it is ready.
pub async fn run(config: GatewayConfig) -> Result<(), RunError> {
    let service = Arc::new(ChatService::unready());
    if let Some(path) = config.session_snapshot_path.as_ref().filter(|p| p.exists()) {
        let n = service.load_sessions(path)?;
        tracing::info!(sessions = n, "sessions restored");
    }
    let listener = TcpListener::bind(config.listen_addr()).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");

    let (fail_tx, mut fail_rx) = tokio::sync::oneshot::channel::<String>();
    {
        let service = service.clone();
        let config = config.clone();
        tokio::task::spawn_blocking(move || match Engine::load(&config) {
            Ok(engine) => {
                tracing::info!(docs = engine.index.n_docs(), "engine ready");
                service.install_engine(engine);
            }
            Err(e) => {
                let _ = fail_tx.send(e.to_string());
            }
        });
    }
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let shutdown = async move {
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = stop_rx => {}
        }
    };
    let server = serve(listener, service, &config, shutdown);
    tokio::pin!(server);
    tokio::select! {
        res = &mut server => Ok(res?),
        Ok(msg) = &mut fail_rx => {
            let _ = stop_tx.send(());
            server.await?;
            Err(RunError::Engine(msg))
        }
    }
}
