//! HTTP/JSON front end for the detection engine.
//!
//! Long-running commands (train, eval, ablate, gen-data) run on the blocking
//! pool; streaming sessions keep their recurrent state in memory between
//! frame requests.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use lapnet::cells::LapNet;
use lapnet::harness::api::{
    AblateRequest, ErrorBody, ErrorKind, EvalRequest, FrameRequest, GenDataRequest, OpenStreamRequest, StreamFrame,
    StreamInfo, TrainRequest,
};
use lapnet::harness::{
    cmd_ablate, cmd_eval, cmd_gen_data, cmd_train, AblationTable, Checkpoint, EvalReport, GenReport, StreamSession,
    TrainReport,
};
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

/// Error response: 400 for validation failures, 404 for unknown streams,
/// 500 for runtime failures.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn validation(status: StatusCode, message: String) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                kind: ErrorKind::Validation,
                message,
            },
        }
    }
}

impl From<lapnet::Error> for ApiError {
    fn from(err: lapnet::Error) -> Self {
        let body = ErrorBody::from(&err);
        let status = match body.kind {
            ErrorKind::Validation => StatusCode::BAD_REQUEST,
            ErrorKind::Runtime => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError { status, body }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rejection: JsonRejection) -> Self {
        ApiError::validation(StatusCode::BAD_REQUEST, rejection.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

struct Stream {
    model: Arc<LapNet>,
    session: StreamSession,
}

#[derive(Default)]
struct AppState {
    streams: Mutex<HashMap<u64, Arc<Mutex<Stream>>>>,
    next_id: AtomicU64,
}

type Shared = Arc<AppState>;

async fn blocking<T, F>(job: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> lapnet::Result<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(job).await {
        Ok(result) => Ok(Json(result?)),
        Err(join) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody {
                kind: ErrorKind::Runtime,
                message: format!("worker failed: {join}"),
            },
        }),
    }
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    version: &'static str,
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok",
        version: env!("CARGO_PKG_VERSION"),
    })
}

async fn train(body: Result<Json<TrainRequest>, JsonRejection>) -> ApiResult<TrainReport> {
    let Json(req) = body?;
    blocking(move || cmd_train(req.config, req.resume.as_deref())).await
}

async fn eval(body: Result<Json<EvalRequest>, JsonRejection>) -> ApiResult<EvalReport> {
    let Json(req) = body?;
    blocking(move || cmd_eval(&req.checkpoint, req.manifest.as_deref(), &req.split, req.out_dir.as_deref())).await
}

async fn ablate(body: Result<Json<AblateRequest>, JsonRejection>) -> ApiResult<AblationTable> {
    let Json(req) = body?;
    blocking(move || cmd_ablate(req.config, &req.sweep, &req.seeds)).await
}

async fn gen_data(body: Result<Json<GenDataRequest>, JsonRejection>) -> ApiResult<GenReport> {
    let Json(req) = body?;
    blocking(move || cmd_gen_data(&req.config, &req.out_dir)).await
}

async fn open_stream(
    State(state): State<Shared>,
    body: Result<Json<OpenStreamRequest>, JsonRejection>,
) -> ApiResult<StreamInfo> {
    let Json(req) = body?;
    let Json(checkpoint) = blocking(move || Checkpoint::load(&req.checkpoint)).await?;
    let model = Arc::new(checkpoint.model);
    let id = state.next_id.fetch_add(1, Ordering::Relaxed) + 1;
    let info = StreamInfo {
        id,
        feature_dim: model.config().feature_dim,
        num_classes: model.config().num_classes,
    };
    let session = StreamSession::new(&model);
    state
        .streams
        .lock()
        .expect("stream table poisoned")
        .insert(id, Arc::new(Mutex::new(Stream { model, session })));
    tracing::debug!(id, "stream opened");
    Ok(Json(info))
}

fn find_stream(state: &AppState, id: u64) -> Result<Arc<Mutex<Stream>>, ApiError> {
    state
        .streams
        .lock()
        .expect("stream table poisoned")
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::validation(StatusCode::NOT_FOUND, format!("no open stream {id}")))
}

async fn push_frame(
    State(state): State<Shared>,
    Path(id): Path<u64>,
    body: Result<Json<FrameRequest>, JsonRejection>,
) -> ApiResult<StreamFrame> {
    let Json(req) = body?;
    let stream = find_stream(&state, id)?;
    let mut stream = stream.lock().expect("stream poisoned");
    let Stream { model, session } = &mut *stream;
    let index = session.frames();
    let output = session.push(model, &req.frame)?;
    Ok(Json(StreamFrame { index, output }))
}

async fn close_stream(State(state): State<Shared>, Path(id): Path<u64>) -> Result<StatusCode, ApiError> {
    let removed = state.streams.lock().expect("stream table poisoned").remove(&id);
    match removed {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::validation(StatusCode::NOT_FOUND, format!("no open stream {id}"))),
    }
}

/// All service routes under `/v1`.
pub fn router() -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/train", post(train))
        .route("/v1/eval", post(eval))
        .route("/v1/ablate", post(ablate))
        .route("/v1/gen-data", post(gen_data))
        .route("/v1/streams", post(open_stream))
        .route("/v1/streams/{id}/frames", post(push_frame))
        .route("/v1/streams/{id}", delete(close_stream))
        .with_state(Arc::new(AppState::default()))
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router()).await
}

/// Binds `addr` and serves in a background task. Returns the bound address,
/// which differs from `addr` when port 0 was requested.
pub async fn spawn(addr: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, tokio::spawn(serve(listener))))
}
