//! REST surface over a [`Pipeline`]. Long-running work is accepted with
//! `202` and finished in the background; clients poll `GET /runs/{id}`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use worldprog_core::prompt::AblationFlags;

use crate::imageio::decode_png;
use crate::service::{GenerateRequest, Intervention, Pipeline, Prepared};
use crate::store::{RunKind, RunMeta};
use crate::Error;

const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    workers: Arc<Semaphore>,
}

impl AppState {
    pub fn new(pipeline: Arc<Pipeline>) -> Self {
        let n = pipeline.config.budgets.workers.max(1);
        Self { pipeline, workers: Arc::new(Semaphore::new(n)) }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRun {
    /// Base64-encoded PNG.
    pub image_png: String,
    pub caption: String,
    #[serde(default)]
    pub ablation: AblationFlags,
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub request_id: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct CreateIntervention {
    #[serde(flatten)]
    pub intervention: Intervention,
    #[serde(default)]
    pub request_id: Option<String>,
}

#[derive(Debug, Serialize)]
struct Accepted {
    id: String,
    status: crate::store::RunStatus,
    existing: bool,
}

struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Validation(_) | Error::PatchPath { .. } | Error::Params(_) | Error::Image(_) | Error::Core(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            Error::Precondition(_) | Error::NothingToEvaluate(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": self.0.to_string() });
        if let Error::Validation(v) = &self.0 {
            body["violations"] = json!(v);
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/program", get(get_program))
        .route("/runs/{id}/parameters", get(get_parameters))
        .route("/runs/{id}/interventions", post(create_intervention))
        .route("/runs/{id}/frames/{k}", get(get_frame))
        .route("/runs/{id}/stmap", get(get_stmap))
        .route("/runs/{id}/scores", get(get_scores))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> crate::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| Error::Backend(format!("worker panicked: {e}")))?.map_err(ApiError)
}

fn spawn_work(state: &AppState, work: impl FnOnce(&Pipeline) + Send + 'static) {
    let (pipeline, workers) = (state.pipeline.clone(), state.workers.clone());
    tokio::spawn(async move {
        let Ok(_permit) = workers.acquire_owned().await else { return };
        if let Err(e) = tokio::task::spawn_blocking(move || work(&pipeline)).await {
            tracing::error!(error = %e, "background run panicked");
        }
    });
}

fn accepted(meta: &RunMeta, existing: bool) -> Response {
    let code = if existing { StatusCode::OK } else { StatusCode::ACCEPTED };
    (code, Json(Accepted { id: meta.id.clone(), status: meta.status, existing })).into_response()
}

async fn create_run(State(state): State<AppState>, Json(body): Json<CreateRun>) -> ApiResult<Response> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(body.image_png.as_bytes())
        .map_err(|e| Error::Image(format!("image_png is not base64: {e}")))?;
    let image = decode_png(&bytes)?;
    let req = GenerateRequest {
        image,
        caption: body.caption,
        ablation: body.ablation,
        n_samples: body.n_samples,
        request_id: body.request_id,
        fixture_dir: None,
    };
    let p = state.pipeline.clone();
    let (meta, existing) = blocking(move || p.begin_generate(&req, RunKind::Generate, None)).await?;
    if !existing {
        let m = meta.clone();
        spawn_work(&state, move |p| {
            p.run_generate(m);
        });
    }
    Ok(accepted(&meta, existing))
}

async fn list_runs(State(state): State<AppState>) -> ApiResult<Json<Vec<RunMeta>>> {
    let p = state.pipeline.clone();
    Ok(Json(blocking(move || p.store().list()).await?))
}

async fn get_run(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let p = state.pipeline.clone();
    blocking(move || {
        let meta = p.store().meta(&id)?;
        let trace = p.trace(&id).ok();
        let frames = p.frame_count(&id)?;
        Ok(Json(json!({ "meta": meta, "trace": trace, "frame_count": frames })))
    })
    .await
}

async fn get_program(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let p = state.pipeline.clone();
    let (file, source) = blocking(move || p.program(&id)).await?;
    Ok(Json(json!({ "file": file, "source": source })))
}

async fn get_parameters(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let p = state.pipeline.clone();
    let params = blocking(move || p.parameters(&id)).await?;
    Ok(Json(json!(params)))
}

async fn create_intervention(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<CreateIntervention>,
) -> ApiResult<Response> {
    let p = state.pipeline.clone();
    let (meta, prepared) = blocking(move || p.begin_intervention(&id, &body.intervention, body.request_id)).await?;
    let existing = prepared == Prepared::Existing;
    if !existing {
        let m = meta.clone();
        spawn_work(&state, move |p| {
            p.run_intervention(m, prepared);
        });
    }
    Ok(accepted(&meta, existing))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn get_frame(State(state): State<AppState>, Path((id, k)): Path<(String, usize)>) -> ApiResult<Response> {
    let p = state.pipeline.clone();
    Ok(png(blocking(move || p.frame_png(&id, k)).await?))
}

async fn get_stmap(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let p = state.pipeline.clone();
    Ok(png(blocking(move || p.stmap_png(&id)).await?))
}

async fn get_scores(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let p = state.pipeline.clone();
    let scores = blocking(move || {
        p.store().meta(&id)?;
        p.scores(&id)
    })
    .await?;
    Ok(Json(json!(scores)))
}

/// Marks interrupted runs failed, then serves until Ctrl-C.
pub async fn serve(pipeline: Arc<Pipeline>, addr: SocketAddr) -> crate::Result<()> {
    let recovered = pipeline.store().recover()?;
    if recovered > 0 {
        tracing::warn!(recovered, "marked interrupted runs as failed");
    }
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(AppState::new(pipeline)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
