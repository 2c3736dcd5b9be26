//! HTTP front for the triage service.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cadastre_core::prompt::Verdict;
use cadastre_core::triage::{ReviewDecision, TriageService};
use cadastre_core::Error;
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

pub const TOKEN_HEADER: &str = "x-triage-token";

#[derive(Clone)]
struct AppState {
    service: Arc<TriageService>,
    token: Arc<str>,
}

struct ApiError(Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::UnknownImage(_) | Error::UnknownPrompt(_) => StatusCode::NOT_FOUND,
            Error::ConflictingVerdict { .. } => StatusCode::CONFLICT,
            Error::ManualImage(_) | Error::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

#[derive(Deserialize)]
struct QueueQuery {
    label: Option<String>,
}

#[derive(Deserialize)]
struct ReviewBody {
    image_id: String,
    verdict: Verdict,
    #[serde(default)]
    reviewer: String,
}

#[derive(Deserialize)]
struct PromoteBody {
    min_samples: u64,
    threshold: f64,
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let safe = matches!(*req.method(), Method::GET | Method::HEAD | Method::OPTIONS);
    let ok = req
        .headers()
        .get(TOKEN_HEADER)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v == &*state.token);
    if safe || ok {
        next.run(req).await
    } else {
        (StatusCode::UNAUTHORIZED, Json(json!({ "error": "missing or invalid X-Triage-Token" }))).into_response()
    }
}

async fn queue_next(State(state): State<AppState>, Query(q): Query<QueueQuery>) -> Response {
    let label = q.label.filter(|l| !l.is_empty());
    match state.service.next_pending(label.as_deref()) {
        Some(r) => Json(r).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn image(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let path = state.service.image_path(&id).ok_or_else(|| ApiError(Error::UnknownImage(id)))?;
    let bytes = tokio::fs::read(&path).await.map_err(|e| ApiError(Error::Image(format!("{}: {e}", path.display()))))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn review(State(state): State<AppState>, Json(body): Json<ReviewBody>) -> Result<Response, ApiError> {
    let d = ReviewDecision::now(body.image_id, body.verdict, body.reviewer);
    let service = state.service.clone();
    let stats = tokio::task::spawn_blocking(move || service.submit_review(&d))
        .await
        .map_err(|e| ApiError(Error::Service(e.to_string())))?
        .map_err(ApiError)?;
    Ok(Json(stats).into_response())
}

async fn stats(State(state): State<AppState>) -> Response {
    Json(state.service.stats()).into_response()
}

async fn prompts(State(state): State<AppState>) -> Response {
    Json(state.service.prompts()).into_response()
}

async fn promote(State(state): State<AppState>, Json(body): Json<PromoteBody>) -> Result<Response, ApiError> {
    let ids = state.service.promote(body.min_samples, body.threshold).map_err(ApiError)?;
    Ok(Json(json!({ "promoted": ids, "prompts": state.service.prompts() })).into_response())
}

pub fn router(service: Arc<TriageService>, token: &str, static_dir: Option<PathBuf>) -> Router {
    let state = AppState {
        service,
        token: Arc::from(token),
    };
    let api = Router::new()
        .route("/api/queue/next", get(queue_next))
        .route("/api/image/{id}", get(image))
        .route("/api/review", post(review))
        .route("/api/stats", get(stats))
        .route("/api/prompts", get(prompts))
        .route("/api/prompts/promote", post(promote));
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Serves until SIGINT/SIGTERM, then persists the prompt sidecar.
pub async fn serve(service: Arc<TriageService>, token: &str, static_dir: Option<PathBuf>, bind: SocketAddr) -> cadastre_core::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| Error::Service(format!("cannot bind {bind}: {e}")))?;
    eprintln!("triage service listening on http://{}", listener.local_addr().map_err(|e| Error::Service(e.to_string()))?);
    axum::serve(listener, router(service.clone(), token, static_dir))
        .with_graceful_shutdown(shutdown_signal())
        .await
        .map_err(|e| Error::Service(e.to_string()))?;
    service.flush()
}
