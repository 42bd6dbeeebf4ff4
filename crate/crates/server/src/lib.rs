//! Local HTTP service: per-session block scenes, wind solves run off the
//! request path, stateless tracking and study endpoints, and an NDJSON event
//! stream per session.
//!
//! Routes, all under `/api/v1`:
//!
//! | method | path | body → response |
//! |---|---|---|
//! | GET | `/health` | `{"status":"ok"}` |
//! | GET | `/sessions` | list of session ids |
//! | POST | `/sessions` | `CreateSession` → `SessionCreated` |
//! | GET | `/sessions/{id}` | `SceneSnapshot` |
//! | POST | `/sessions/{id}/blocks/{block}/pose` | `PoseUpdate` → `VersionResponse` |
//! | POST | `/sessions/{id}/wind` | `WindRunRequest` → 202 `WindRunAccepted` |
//! | GET | `/sessions/{id}/wind` | `WindResult` |
//! | GET | `/sessions/{id}/wind.bin` | binary field export |
//! | GET | `/sessions/{id}/events` | NDJSON `EventEnvelope` lines |
//! | POST | `/track` | `TrackRequest` → `TrackResponse` |
//! | POST | `/study` | `StudyRequest` → `AmplificationReport` |

mod error;
mod session;

pub use error::ApiError;
pub use session::{PersistedSession, StoreSnapshot};

use axum::body::{Body, Bytes};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use formloop_core::bench::amplification_study;
use formloop_core::pipeline::{refine_multi_pass, LogEstimator};
use formloop_core::protocol::{
    CreateSession, Event, PoseUpdate, SceneSnapshot, SessionCreated, StudyRequest, StudyResponse, TrackRequest,
    TrackResponse, VersionResponse, WindResult, WindRunAccepted, WindRunRequest, API_PREFIX,
};
use formloop_core::scene::{ObservationLog, Scene};
use formloop_core::wind::{run_to_steady_with, voxelize, write_binary};
use serde::de::DeserializeOwned;
use session::{Solved, Store};
use std::convert::Infallible;
use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path as FsPath, PathBuf};
use std::sync::{Arc, RwLock};
use tokio::net::TcpListener;
use tokio::sync::{oneshot, watch};

#[derive(Clone)]
pub struct AppState {
    store: Arc<RwLock<Store>>,
    closing: watch::Receiver<bool>,
}

impl AppState {
    fn new(store: Store, closing: watch::Receiver<bool>) -> Self {
        Self {
            store: Arc::new(RwLock::new(store)),
            closing,
        }
    }

    fn session(&self, id: &str) -> Result<session::Session, ApiError> {
        self.store.read().expect("store lock").get(id)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    /// Sessions are loaded from here at startup when the file exists and
    /// written back on graceful shutdown.
    pub snapshot: Option<PathBuf>,
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(get_scene))
        .route("/sessions/{id}/blocks/{block}/pose", post(post_pose))
        .route("/sessions/{id}/wind", get(get_wind).post(post_wind))
        .route("/sessions/{id}/wind.bin", get(get_wind_binary))
        .route("/sessions/{id}/events", get(events))
        .route("/track", post(track))
        .route("/study", post(study))
        .fallback(|| async { (StatusCode::NOT_FOUND, Json(formloop_core::protocol::ErrorBody { error: "not_found".into(), message: "no such route".into() })) });
    Router::new().nest(API_PREFIX, api).with_state(state)
}

/// Bodies are parsed by hand so that every rejection carries an `ErrorBody`.
/// Malformed JSON is 400; well-formed JSON with the wrong shape is 422.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| {
        let status = match e.classify() {
            serde_json::error::Category::Data => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        let body = formloop_core::protocol::ErrorBody {
            error: if status == StatusCode::BAD_REQUEST { "malformed" } else { "invalid" }.into(),
            message: e.to_string(),
        };
        (status, Json(body)).into_response()
    })
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

async fn list_sessions(State(app): State<AppState>) -> Json<Vec<String>> {
    Json(app.store.read().expect("store lock").ids())
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<Json<SessionCreated>, Response> {
    let req: CreateSession = if body.is_empty() { CreateSession::default() } else { parse(&body)? };
    let scene = req.scene.unwrap_or_else(Scene::default_tabletop);
    let id = app.store.write().expect("store lock").create(scene);
    Ok(Json(SessionCreated { id, version: 0 }))
}

async fn get_scene(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SceneSnapshot>, ApiError> {
    let session = app.session(&id)?;
    let snap = session.lock().expect("session lock").snapshot();
    Ok(Json(snap))
}

async fn post_pose(
    State(app): State<AppState>,
    Path((id, block)): Path<(String, String)>,
    body: Bytes,
) -> Result<Json<VersionResponse>, Response> {
    let session = app.session(&id).map_err(IntoResponse::into_response)?;
    let update: PoseUpdate = parse(&body)?;
    let pose = update
        .to_pose(&block)
        .map_err(|e| ApiError::Invalid(e.to_string()).into_response())?;
    let version = session
        .lock()
        .expect("session lock")
        .set_pose(&block, pose)
        .map_err(IntoResponse::into_response)?;
    Ok(Json(VersionResponse { version }))
}

async fn post_wind(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, Response> {
    let session = app.session(&id).map_err(IntoResponse::into_response)?;
    let req: WindRunRequest = if body.is_empty() { WindRunRequest::default() } else { parse(&body)? };
    if !(req.tol > 0.0) || req.max_iters == 0 {
        return Err(ApiError::Invalid("tol must be positive and max_iters at least 1".into()).into_response());
    }
    // The solve reads an immutable snapshot; later edits bump the version.
    // If an edit lands while the mask is built, rebuild against the new scene.
    let (mask, version, run_id) = loop {
        let (scene, version) = {
            let s = session.lock().expect("session lock");
            if s.active_run.is_some() {
                return Err(ApiError::RunActive.into_response());
            }
            (s.scene.clone(), s.version)
        };
        let mask = voxelize(&scene, &req.spec)
            .and_then(|m| m.check(&req.spec).map(|_| m))
            .map_err(|e| ApiError::Invalid(e.to_string()).into_response())?;
        let mut s = session.lock().expect("session lock");
        if s.version == version {
            let run_id = s.begin_run().map_err(IntoResponse::into_response)?;
            break (mask, version, run_id);
        }
    };
    let spec = req.spec.clone();
    let worker = session.clone();
    tokio::task::spawn_blocking(move || {
        let result = run_to_steady_with(&mask, &spec, req.tol, req.max_iters, |iter, residual| {
            worker
                .lock()
                .expect("session lock")
                .emit(Event::WindProgress { run_id, iter, residual });
        });
        let mut s = worker.lock().expect("session lock");
        s.active_run = None;
        match result {
            Ok(field) => {
                let converged = field.converged;
                s.wind = Some(Solved {
                    run_id,
                    scene_version: version,
                    spec,
                    field: Arc::new(field),
                });
                s.emit(Event::WindDone { run_id, version, converged });
            }
            Err(e) => {
                tracing::warn!(run_id, error = %e, "wind run failed");
                s.emit(Event::WindFailed { run_id, reason: e.to_string() });
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(WindRunAccepted { run_id, scene_version: version })).into_response())
}

async fn get_wind(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<WindResult>, ApiError> {
    let session = app.session(&id)?;
    let result = session.lock().expect("session lock").wind_result()?;
    Ok(Json(result))
}

pub const SCENE_VERSION_HEADER: &str = "x-scene-version";
pub const STALE_HEADER: &str = "x-stale";

async fn get_wind_binary(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    let (field, dx, version, stale) = {
        let s = session.lock().expect("session lock");
        let w = s.wind.as_ref().ok_or(ApiError::NoWindResult)?;
        (w.field.clone(), w.spec.dx, w.scene_version, w.scene_version != s.version)
    };
    let mut buf = Vec::new();
    write_binary(&field, dx, &mut buf).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/octet-stream".to_string()),
            (header::HeaderName::from_static(SCENE_VERSION_HEADER), version.to_string()),
            (header::HeaderName::from_static(STALE_HEADER), stale.to_string()),
        ],
        buf,
    )
        .into_response())
}

async fn events(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = app.session(&id)?;
    let rx = session.lock().expect("session lock").subscribe();
    let closing = app.closing.clone();
    let stream = futures::stream::unfold((rx, closing), |(mut rx, mut closing)| async move {
        if *closing.borrow() {
            return None;
        }
        let next = tokio::select! {
            r = rx.recv() => r.ok(),
            _ = closing.changed() => None,
        }?;
        let mut line = serde_json::to_vec(&next).expect("events serialize");
        line.push(b'\n');
        Some((Ok::<_, Infallible>(Bytes::from(line)), (rx, closing)))
    });
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], Body::from_stream(stream)).into_response())
}

async fn track(body: Bytes) -> Result<Json<TrackResponse>, Response> {
    let req: TrackRequest = parse(&body)?;
    let out = tokio::task::spawn_blocking(move || {
        for o in &req.observations {
            o.validate()?;
        }
        let log = ObservationLog {
            scene: req.scene,
            observations: req.observations,
        };
        let est = LogEstimator::new(&log);
        let out = refine_multi_pass(&est, &log.scene, &req.config, log.frame_count(), None)?;
        Ok::<_, formloop_core::Error>(out.trajectories)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()).into_response())?
    .map_err(|e| ApiError::from(e).into_response())?;
    Ok(Json(TrackResponse { trajectories: out }))
}

async fn study(body: Bytes) -> Result<Json<StudyResponse>, Response> {
    let req: StudyRequest = parse(&body)?;
    let report = tokio::task::spawn_blocking(move || {
        amplification_study(&req.distances, req.sigma_deg.to_radians(), req.trials, req.seed, req.axis_model)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()).into_response())?
    .map_err(|e| ApiError::Invalid(e.to_string()).into_response())?;
    Ok(Json(report))
}

fn load_store(path: Option<&FsPath>) -> std::io::Result<Store> {
    match path {
        Some(p) if p.exists() => {
            let snap: StoreSnapshot = serde_json::from_slice(&std::fs::read(p)?)?;
            Ok(Store::from_snapshot(snap))
        }
        _ => Ok(Store::default()),
    }
}

/// Serves until `shutdown` resolves, then closes event streams, drains
/// requests and writes the snapshot if one is configured.
pub async fn serve(
    listener: TcpListener,
    config: ServerConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let (close_tx, close_rx) = watch::channel(false);
    let state = AppState::new(load_store(config.snapshot.as_deref())?, close_rx);
    let store = state.store.clone();
    let app = router(state);
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            let _ = close_tx.send(true);
        })
        .await?;
    if let Some(path) = &config.snapshot {
        let snap = store.read().expect("store lock").to_snapshot();
        std::fs::write(path, serde_json::to_vec_pretty(&snap)?)?;
        tracing::info!(path = %path.display(), "snapshot written");
    }
    Ok(())
}

/// A server running on a background task.
pub struct RunningServer {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    handle: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Graceful shutdown; returns once the snapshot (if any) is on disk.
    pub async fn stop(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        self.handle.await.map_err(std::io::Error::other)?
    }
}

/// Binds `bind` (port 0 picks a free port) and serves in the background.
pub async fn spawn(bind: &str, config: ServerConfig) -> std::io::Result<RunningServer> {
    let listener = TcpListener::bind(bind).await?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel();
    let handle = tokio::spawn(serve(listener, config, async move {
        let _ = rx.await;
    }));
    Ok(RunningServer {
        addr,
        stop: Some(tx),
        handle,
    })
}
