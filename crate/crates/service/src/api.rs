//! HTTP routes over [`SessionService`].

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::Deserialize;

use crate::error::ServiceError;
use crate::service::{CreateRequest, PreferenceRequest, SessionService};

type AppState = Arc<SessionService>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if self.status() >= 500 {
            tracing::error!(error = %self, "request failed");
        }
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body())).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ServiceError>;

fn body<T>(r: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    r.map(|Json(v)| v).map_err(|e| ServiceError::BadRequest(e.body_text()))
}

fn params<T>(r: Result<Query<T>, QueryRejection>) -> Result<T, ServiceError> {
    r.map(|Query(v)| v).map_err(|e| ServiceError::BadRequest(e.body_text()))
}

#[derive(Debug, Default, Deserialize)]
struct PageParams {
    top_k: Option<usize>,
    offset: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
struct UndoParams {
    expected_revision: Option<u64>,
    top_k: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
struct EntityParams {
    offset: Option<usize>,
    limit: Option<usize>,
}

pub fn router(service: Arc<SessionService>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_metadata))
        .route("/sessions/{id}/ranking", get(ranking))
        .route("/sessions/{id}/preferences", post(submit_preference))
        .route("/sessions/{id}/preferences/last", delete(undo_preference))
        .route("/queries", get(list_queries))
        .route("/entities", get(list_entities))
        .fallback(|| async { ServiceError::NotFound("no such route".into()) })
        .with_state(service)
}

async fn create_session(
    State(svc): State<AppState>,
    req: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<crate::session::RankingPage>), ServiceError> {
    let page = svc.create(&body(req)?)?;
    Ok((StatusCode::CREATED, Json(page)))
}

async fn session_metadata(
    State(svc): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<crate::session::SessionMetadata> {
    Ok(Json(svc.metadata(&id)?))
}

async fn ranking(
    State(svc): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<PageParams>, QueryRejection>,
) -> ApiResult<crate::session::RankingPage> {
    let q = params(q)?;
    Ok(Json(svc.ranking(&id, q.top_k, q.offset)?))
}

async fn submit_preference(
    State(svc): State<AppState>,
    Path(id): Path<String>,
    req: Result<Json<PreferenceRequest>, JsonRejection>,
) -> ApiResult<crate::session::RankingPage> {
    Ok(Json(svc.submit(&id, &body(req)?)?))
}

async fn undo_preference(
    State(svc): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<UndoParams>, QueryRejection>,
) -> ApiResult<crate::session::RankingPage> {
    let q = params(q)?;
    Ok(Json(svc.undo(&id, q.expected_revision, q.top_k)?))
}

async fn list_queries(State(svc): State<AppState>) -> ApiResult<Vec<crate::catalog::QuerySummary>> {
    Ok(Json(svc.queries()))
}

async fn list_entities(
    State(svc): State<AppState>,
    q: Result<Query<EntityParams>, QueryRejection>,
) -> ApiResult<crate::service::EntityPage> {
    let q = params(q)?;
    Ok(Json(svc.entities(q.offset, q.limit)))
}

/// Serves until the listener fails or the task is cancelled.
pub async fn serve(service: Arc<SessionService>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(service)).await
}
