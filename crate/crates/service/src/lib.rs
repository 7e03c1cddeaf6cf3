//! HTTP service answering flow queries with trained surrogates, and with the
//! finite-difference oracle for side-by-side comparison.

mod error;
mod registry;

pub use error::ServiceError;
pub use registry::{ModelEntry, ModelInfo, Registry, RegistryConfig, RegistryItem};

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::State;
use axum::http::header::ACCEPT;
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use log::info;
use nsgen_core::data::build_input;
use nsgen_core::grid::{
    rasterize_obstacles, BoundarySpec, Channel, FlowField, GeometryMask, GridSpec, InletParams, LidParams, Shape,
};
use nsgen_core::io::{Dtype, Nsf1};
use nsgen_core::solver::{FdmSolver, SolverParams, SteadySolution};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc;
use tokio_stream::wrappers::ReceiverStream;
use tokio_stream::StreamExt;

pub const DEFAULT_PORT: u16 = 8089;
/// Media type selecting base64-encoded NSF1 fields.
pub const NSF1_MEDIA_TYPE: &str = "application/x-nsf1";
pub const DEFAULT_PROGRESS_EVERY: usize = 100;

/// Moving-lid parameters of a cavity request; the whole lid moves by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidRequest {
    pub u0: f64,
    #[serde(default)]
    pub start_fraction: f64,
    #[serde(default = "one")]
    pub extent_fraction: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRequest {
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lid: Option<LidRequest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inlet: Option<InletParams>,
    #[serde(default)]
    pub obstacles: Vec<Shape>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRequest {
    #[serde(flatten)]
    pub solve: SolveRequest,
    /// Wall-clock budget of the solve.
    pub budget_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub progress_every: Option<usize>,
}

/// Field payload: nested row arrays or base64 NSF1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldPayload {
    Arrays {
        u: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        p: Vec<Vec<f64>>,
    },
    Nsf1(String),
}

impl FieldPayload {
    pub fn encode(field: &FlowField, nsf1: bool) -> Result<Self, ServiceError> {
        if nsf1 {
            let bytes = Nsf1::from_field(field, Dtype::F64).encode()?;
            return Ok(FieldPayload::Nsf1(base64::engine::general_purpose::STANDARD.encode(bytes)));
        }
        let rows = |c: Channel| field.channel(c).rows().into_iter().map(|r| r.to_vec()).collect();
        Ok(FieldPayload::Arrays {
            u: rows(Channel::U),
            v: rows(Channel::V),
            p: rows(Channel::P),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResponse {
    pub model_id: String,
    pub latency_ms: f64,
    pub grid_size: usize,
    /// `"json"` or `"nsf1-base64"`.
    pub encoding: String,
    pub fields: FieldPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub model_id: String,
    pub latency_ms: f64,
    pub grid_size: usize,
    pub converged: bool,
    /// The budget ran out before convergence.
    pub timed_out: bool,
    pub steps: usize,
    pub residual: f64,
    pub encoding: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields: Option<FieldPayload>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub step: usize,
    pub residual: f64,
}

#[derive(Clone)]
pub struct AppState {
    pub registry: Arc<Registry>,
}

pub fn router(registry: Registry) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/models", get(list_models))
        .route("/solve", post(solve))
        .route("/oracle-solve", post(oracle_solve))
        .with_state(AppState {
            registry: Arc::new(registry),
        })
}

pub async fn serve(addr: SocketAddr, registry: Registry) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("serving {} models on {}", registry.len(), listener.local_addr()?);
    axum::serve(listener, router(registry)).await
}

async fn healthz(State(st): State<AppState>) -> Json<Value> {
    Json(json!({ "status": "ok", "models": st.registry.len() }))
}

async fn list_models(State(st): State<AppState>) -> Json<Vec<ModelInfo>> {
    Json(st.registry.list())
}

fn wants_nsf1(headers: &HeaderMap) -> bool {
    headers
        .get(ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains(NSF1_MEDIA_TYPE))
}

fn wants_events(headers: &HeaderMap) -> bool {
    headers
        .get(ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("text/event-stream"))
}

fn encoding_name(nsf1: bool) -> String {
    if nsf1 { "nsf1-base64" } else { "json" }.into()
}

/// Boundary conditions, obstacles, mask and grid of a request, checked
/// against the model's ranges.
fn prepare(
    entry: &ModelEntry,
    req: &SolveRequest,
) -> Result<(BoundarySpec, Vec<Shape>, Option<GeometryMask>, GridSpec), ServiceError> {
    let bc = match (req.lid, req.inlet) {
        (Some(l), None) => BoundarySpec::cavity_lid(LidParams {
            u0: l.u0,
            start_fraction: l.start_fraction,
            extent_fraction: l.extent_fraction,
        }),
        (None, Some(i)) => BoundarySpec::internal(i.u0, i.v0),
        _ => return Err(ServiceError::BadRequest("give exactly one of `lid` or `inlet`".into())),
    };
    let grid = entry.input.grid()?;
    let mask = if req.obstacles.is_empty() {
        None
    } else {
        Some(rasterize_obstacles(&req.obstacles, &grid).map_err(|e| ServiceError::Unrasterizable(e.to_string()))?)
    };
    entry
        .input
        .ranges
        .check(&bc, &req.obstacles, &grid)
        .map_err(ServiceError::OutOfRange)?;
    bc.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    Ok((bc, req.obstacles.clone(), mask, grid))
}

async fn solve(
    State(st): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<SolveRequest>,
) -> Result<Json<SolveResponse>, ServiceError> {
    let entry = st.registry.get(&req.model_id)?.clone();
    let (bc, shapes, _, _) = prepare(&entry, &req)?;
    let nsf1 = wants_nsf1(&headers);
    let started = Instant::now();
    let grid_size = entry.input.grid_size;
    let field = tokio::task::spawn_blocking(move || -> Result<FlowField, ServiceError> {
        let input = build_input(&entry.input, &bc, &shapes)?;
        Ok(entry.model.predict(&input)?)
    })
    .await
    .map_err(|e| ServiceError::Registry(format!("worker failed: {e}")))??;
    let latency_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(Json(SolveResponse {
        model_id: req.model_id,
        latency_ms,
        grid_size,
        encoding: encoding_name(nsf1),
        fields: FieldPayload::encode(&field, nsf1)?,
    }))
}

enum OracleMessage {
    Progress(Progress),
    Done(Result<SteadySolution, nsgen_core::Error>),
}

fn oracle_response(
    model_id: &str,
    grid_size: usize,
    started: Instant,
    sol: &SteadySolution,
    nsf1: bool,
) -> Result<(StatusCode, OracleResponse), ServiceError> {
    let timed_out = sol.cancelled;
    let status = if timed_out { StatusCode::REQUEST_TIMEOUT } else { StatusCode::OK };
    Ok((
        status,
        OracleResponse {
            model_id: model_id.into(),
            latency_ms: started.elapsed().as_secs_f64() * 1e3,
            grid_size,
            converged: sol.converged,
            timed_out,
            steps: sol.steps,
            residual: sol.residual,
            encoding: encoding_name(nsf1),
            fields: Some(FieldPayload::encode(&sol.field, nsf1)?),
        },
    ))
}

/// Runs the oracle for a request. Progress events stream as server-sent
/// events when the client accepts them; otherwise the final state is
/// returned as JSON. An exhausted budget answers 408 with the partial field.
async fn oracle_solve(
    State(st): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<OracleRequest>,
) -> Result<Response, ServiceError> {
    let started = Instant::now();
    let entry = st.registry.get(&req.solve.model_id)?.clone();
    let (bc, _, mask, grid) = prepare(&entry, &req.solve)?;
    let nsf1 = wants_nsf1(&headers);
    let model_id = entry.id.clone();
    let grid_size = grid.nx;
    if req.budget_ms == 0 {
        let body = OracleResponse {
            model_id,
            latency_ms: started.elapsed().as_secs_f64() * 1e3,
            grid_size,
            converged: false,
            timed_out: true,
            steps: 0,
            residual: f64::INFINITY,
            encoding: encoding_name(nsf1),
            fields: None,
        };
        return Ok((StatusCode::REQUEST_TIMEOUT, Json(body)).into_response());
    }
    let every = req.progress_every.unwrap_or(DEFAULT_PROGRESS_EVERY).max(1);
    let solver = FdmSolver::new(&bc, mask.as_ref(), &grid, SolverParams::for_problem(&bc, &grid))?;
    let deadline = started + Duration::from_millis(req.budget_ms);
    let (tx, rx) = mpsc::channel::<OracleMessage>(256);
    tokio::task::spawn_blocking(move || {
        let mut observer = |step: usize, residual: f64| {
            if step % every == 0 {
                let sent = tx.try_send(OracleMessage::Progress(Progress { step, residual }));
                if matches!(sent, Err(mpsc::error::TrySendError::Closed(_))) {
                    return false;
                }
            }
            Instant::now() < deadline
        };
        let result = solver.initial_state().and_then(|init| solver.solve_from(init, &mut observer));
        let _ = tx.blocking_send(OracleMessage::Done(result));
    });

    if !wants_events(&headers) {
        let mut rx = rx;
        while let Some(msg) = rx.recv().await {
            if let OracleMessage::Done(result) = msg {
                let (status, body) = oracle_response(&model_id, grid_size, started, &result?, nsf1)?;
                return Ok((status, Json(body)).into_response());
            }
        }
        return Err(ServiceError::Registry("oracle worker stopped without a result".into()));
    }

    let events = ReceiverStream::new(rx).map(move |msg| {
        let event = match msg {
            OracleMessage::Progress(p) => Event::default().event("progress").json_data(p),
            OracleMessage::Done(Ok(sol)) => match oracle_response(&model_id, grid_size, started, &sol, nsf1) {
                Ok((status, body)) => {
                    let name = if status == StatusCode::OK { "result" } else { "timeout" };
                    let mut v = json!(body);
                    v["status"] = json!(status.as_u16());
                    Event::default().event(name).json_data(v)
                }
                Err(e) => Event::default().event("error").json_data(json!({ "error": e.to_string() })),
            },
            OracleMessage::Done(Err(e)) => Event::default().event("error").json_data(json!({ "error": e.to_string() })),
        };
        Ok::<_, Infallible>(event.unwrap_or_else(|e| Event::default().event("error").data(e.to_string())))
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()).into_response())
}
