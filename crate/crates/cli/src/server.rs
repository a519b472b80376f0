//! HTTP API behind the annotation UI.

use std::path::Path;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use moralframe::annotation::{agreement_report, aggregate_gold, AnnotationError, AnnotationRecord, AnnotationStore};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

type Store = Arc<AnnotationStore>;

/// API routes, plus static files from `static_dir` for every other path.
pub fn router(store: Store, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/labels", post(submit_label))
        .route("/api/agreement", get(agreement))
        .route("/api/export", get(export))
        .route("/api/progress", get(progress))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

fn error(status: StatusCode, reason: impl Into<String>) -> Response {
    (status, Json(json!({ "error": reason.into() }))).into_response()
}

fn annotation_error(e: AnnotationError) -> Response {
    if e.is_validation() {
        error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
    } else {
        log::error!("{e}");
        error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: String,
}

async fn next_task(State(store): State<Store>, Query(q): Query<NextQuery>) -> Response {
    match store.next_task(&q.annotator) {
        Ok(Some(comment)) => Json(comment).into_response(),
        Ok(None) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => annotation_error(e),
    }
}

async fn submit_label(State(store): State<Store>, body: Result<Json<AnnotationRecord>, JsonRejection>) -> Response {
    let record = match body {
        Ok(Json(r)) => r,
        Err(rejection) => return error(StatusCode::UNPROCESSABLE_ENTITY, rejection.body_text()),
    };
    match tokio::task::spawn_blocking(move || store.record_label(record)).await {
        Ok(Ok(ack)) => (StatusCode::CREATED, Json(ack)).into_response(),
        Ok(Err(e)) => annotation_error(e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn agreement(State(store): State<Store>) -> Response {
    Json(agreement_report(&store)).into_response()
}

async fn export(State(store): State<Store>) -> Response {
    let report = aggregate_gold(&store);
    let mut body = String::new();
    for g in &report.gold {
        body.push_str(&serde_json::to_string(g).expect("gold label serializes"));
        body.push('\n');
    }
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

async fn progress(State(store): State<Store>) -> Response {
    Json(store.progress()).into_response()
}

/// Serves until interrupted.
pub async fn serve(store: Store, static_dir: Option<&Path>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation server listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
