//! JSON-over-HTTP routes.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use crate::service::{AnnotationEvent, AnnotationService, OpenSession, ServiceError};

type Shared = Arc<AnnotationService>;

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            Self::UnknownImage(_) | Self::UnknownSession(_) => StatusCode::NOT_FOUND,
            Self::SessionClosed(_) => StatusCode::GONE,
            Self::MissingMetadata(_) | Self::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            Self::MissingLabels(_)
            | Self::BoxOutOfRange { .. }
            | Self::OutOfBoundsEndpoints { .. }
            | Self::SunBelowHorizon { .. }
            | Self::NoGroundTruth
            | Self::PolarNight { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Self::Catalog(_) | Self::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.kind(), "message": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

/// Run CPU-bound session work off the async executor.
async fn blocking<R: Send + 'static>(
    f: impl FnOnce() -> Result<R, ServiceError> + Send + 'static,
) -> Result<R, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ServiceError::InvalidRequest(format!("worker failed: {e}"))))
}

async fn image(
    State(svc): State<Shared>,
    Path(id): Path<String>,
) -> Result<Response, ServiceError> {
    let png = svc.image_png(&id)?;
    Ok((
        [(header::CONTENT_TYPE, "image/png")],
        Body::from(png.to_vec()),
    )
        .into_response())
}

async fn boxes(
    State(svc): State<Shared>,
    Path(id): Path<String>,
) -> Result<Response, ServiceError> {
    Ok(Json(svc.boxes(&id)?).into_response())
}

async fn open_session(
    State(svc): State<Shared>,
    Json(req): Json<OpenSession>,
) -> Result<Response, ServiceError> {
    let opened = svc.open_session(&req)?;
    let mut body = serde_json::to_value(&opened).expect("serializable");
    body["image_url"] = json!(format!("/images/{}", req.image_id));
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_session(
    State(svc): State<Shared>,
    Path(id): Path<String>,
) -> Result<Response, ServiceError> {
    Ok(Json(svc.session_view(&id)?).into_response())
}

async fn close_session(
    State(svc): State<Shared>,
    Path(id): Path<String>,
) -> Result<Response, ServiceError> {
    Ok(Json(svc.close_session(&id)?).into_response())
}

async fn submit(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    Json(ev): Json<AnnotationEvent>,
) -> Result<Response, ServiceError> {
    let sub = blocking(move || svc.submit_annotation(&id, &ev)).await?;
    Ok((StatusCode::CREATED, Json(sub)).into_response())
}

async fn refine(
    State(svc): State<Shared>,
    Path(id): Path<String>,
) -> Result<Response, ServiceError> {
    let fit = blocking(move || svc.refine_session_time(&id)).await?;
    Ok(Json(fit).into_response())
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/images/{id}", get(image))
        .route("/images/{id}/boxes", get(boxes))
        .route("/sessions", post(open_session))
        .route("/sessions/{id}", get(get_session).delete(close_session))
        .route("/sessions/{id}/annotations", post(submit))
        .route("/sessions/{id}/refine-time", post(refine))
        .with_state(service)
}

/// Serve until Ctrl-C.
pub async fn serve(service: Shared, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
