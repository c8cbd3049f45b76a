//! HTTP supervision endpoint.
//!
//! Production systems register a detector, stream embeddings to it and poll
//! its drift status:
//!
//! | method | path | |
//! |---|---|---|
//! | `POST` | `/detectors` | register a detector document or `{"path": ...}` |
//! | `POST` | `/detectors/{id}/score` | score one record or an array of records |
//! | `GET` | `/detectors/{id}/status` | counters, window state, recent events |
//! | `DELETE` | `/detectors/{id}` | drop a detector |
//!
//! Records use the line-stream layout. Score requests against one detector
//! are applied in arrival order under that detector's lock; different
//! detectors proceed independently. Nothing is persisted across restarts.

use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use serde_json::{json, Value};

use isodrift::io::{detector_from_value, load_detector, parse_stream_value, FormatError};
use isodrift::pipeline::{MonitorConfig, MonitorEvent, MonitorSnapshot};
use isodrift::{Detector, Monitor};

pub const DEFAULT_RECENT_EVENTS: usize = 50;

/// A registered detector and its monitor.
pub struct DetectorHandle {
    pub detector_id: String,
    pub detector: Detector,
    state: Mutex<HandleState>,
}

struct HandleState {
    monitor: Monitor,
    recent: VecDeque<MonitorEvent<f64>>,
}

impl DetectorHandle {
    pub fn snapshot(&self) -> MonitorSnapshot<f64> {
        self.state.lock().monitor.snapshot()
    }
}

/// In-memory detector registry shared by all connections.
pub struct Registry {
    next_id: AtomicU64,
    detectors: RwLock<HashMap<String, Arc<DetectorHandle>>>,
    recent_events: usize,
}

impl Registry {
    pub fn new(recent_events: usize) -> Self {
        Self {
            next_id: AtomicU64::new(1),
            detectors: RwLock::new(HashMap::new()),
            recent_events,
        }
    }

    /// Registers `detector` with a fresh monitor and returns its id.
    pub fn register(&self, detector: Detector, monitor: MonitorConfig<f64>) -> String {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        let id = format!("det-{n}");
        let handle = DetectorHandle {
            detector_id: id.clone(),
            detector,
            state: Mutex::new(HandleState {
                monitor: Monitor::new(monitor),
                recent: VecDeque::new(),
            }),
        };
        self.detectors.write().insert(id.clone(), Arc::new(handle));
        id
    }

    pub fn get(&self, id: &str) -> Option<Arc<DetectorHandle>> {
        self.detectors.read().get(id).cloned()
    }

    pub fn remove(&self, id: &str) -> bool {
        self.detectors.write().remove(id).is_some()
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::new(DEFAULT_RECENT_EVENTS)
    }
}

pub type AppState = Arc<Registry>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/detectors", post(create_detector))
        .route("/detectors/{id}", axum::routing::delete(delete_detector))
        .route("/detectors/{id}/score", post(score))
        .route("/detectors/{id}/status", get(status))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn not_found(id: &str) -> Response {
    error(StatusCode::NOT_FOUND, format!("unknown detector {id}"))
}

fn format_error_response(e: FormatError) -> Response {
    match e {
        FormatError::UnsupportedVersion { .. } => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        other => error(StatusCode::BAD_REQUEST, other.to_string()),
    }
}

fn monitor_config(body: &Value, detector: &Detector) -> Result<MonitorConfig<f64>, String> {
    let mut cfg = MonitorConfig::for_detector(detector);
    if let Some(w) = body.get("window") {
        cfg.window = w
            .as_u64()
            .filter(|&w| w > 0)
            .ok_or("window must be a positive integer")? as usize;
    }
    match body.get("alarm_rate") {
        None => {}
        Some(Value::String(s)) if s == "auto" => {}
        Some(v) => {
            cfg.alarm_rate = v
                .as_f64()
                .filter(|r| (0.0..=1.0).contains(r))
                .ok_or("alarm_rate must be \"auto\" or a number in [0, 1]")?;
        }
    }
    Ok(cfg)
}

/// Body: a detector document, `{"detector": <document>}` or
/// `{"path": "<model file>"}`; the wrapped forms may also carry `window`
/// and `alarm_rate`.
async fn create_detector(State(reg): State<AppState>, body: Bytes) -> Response {
    let body: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed JSON: {e}")),
    };
    let loaded = if body.get("format_version").is_some() {
        detector_from_value(body.clone())
    } else if let Some(doc) = body.get("detector") {
        detector_from_value(doc.clone())
    } else if let Some(path) = body.get("path").and_then(Value::as_str) {
        load_detector(path)
    } else {
        return error(
            StatusCode::BAD_REQUEST,
            "body must be a detector document, {\"detector\": ...} or {\"path\": ...}",
        );
    };
    let detector = match loaded {
        Ok(d) => d,
        Err(e) => return format_error_response(e),
    };
    let cfg = match monitor_config(&body, &detector) {
        Ok(c) => c,
        Err(m) => return error(StatusCode::BAD_REQUEST, m),
    };
    let threshold = detector.threshold();
    let id = reg.register(detector, cfg);
    (
        StatusCode::CREATED,
        Json(json!({
            "detector_id": id,
            "threshold": threshold,
            "window": cfg.window,
            "alarm_rate": cfg.alarm_rate,
        })),
    )
        .into_response()
}

#[derive(Serialize)]
#[serde(untagged)]
enum ScoreEntry {
    Scored { id: u64, score: f64, flagged: bool },
    Failed { index: usize, id: Option<u64>, error: String },
}

async fn score(State(reg): State<AppState>, Path(id): Path<String>, body: Bytes) -> Response {
    let Some(handle) = reg.get(&id) else {
        return not_found(&id);
    };
    let items = match serde_json::from_slice::<Value>(&body) {
        Ok(Value::Array(items)) => items,
        Ok(obj @ Value::Object(_)) => vec![obj],
        Ok(_) => return error(StatusCode::BAD_REQUEST, "body must be a record or an array of records"),
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed JSON: {e}")),
    };

    let dim = handle.detector.dim();
    let mut results = Vec::with_capacity(items.len());
    let mut events = Vec::new();
    let mut guard = handle.state.lock();
    let st = &mut *guard;
    for (index, item) in items.into_iter().enumerate() {
        match parse_stream_value(item, Some(dim)) {
            Ok(record) => {
                let (scored, evs) = st.monitor.observe(&handle.detector, &record);
                match scored {
                    Some(s) => results.push(ScoreEntry::Scored {
                        id: s.id,
                        score: s.score,
                        flagged: s.flagged,
                    }),
                    None => {
                        let message = match evs.first() {
                            Some(MonitorEvent::Error { message, .. }) => message.clone(),
                            _ => "scoring failed".to_string(),
                        };
                        results.push(ScoreEntry::Failed {
                            index,
                            id: Some(record.id),
                            error: message,
                        });
                    }
                }
                events.extend(evs);
            }
            Err(e) => {
                let ev = st.monitor.record_error(e.id, e.message.clone());
                results.push(ScoreEntry::Failed {
                    index,
                    id: e.id,
                    error: e.message,
                });
                events.push(ev);
            }
        }
    }
    for ev in &events {
        if st.recent.len() == reg.recent_events {
            st.recent.pop_front();
        }
        if reg.recent_events > 0 {
            st.recent.push_back(ev.clone());
        }
    }
    let snap = st.monitor.snapshot();
    drop(guard);

    Json(json!({
        "results": results,
        "events": events,
        "window_flag_rate": snap.window_flag_rate,
        "alarm_active": snap.alarm_active,
    }))
    .into_response()
}

async fn status(State(reg): State<AppState>, Path(id): Path<String>) -> Response {
    let Some(handle) = reg.get(&id) else {
        return not_found(&id);
    };
    let (snap, recent) = {
        let st = handle.state.lock();
        (st.monitor.snapshot(), st.recent.iter().cloned().collect::<Vec<_>>())
    };
    Json(json!({
        "detector_id": handle.detector_id,
        "threshold": handle.detector.threshold(),
        "baseline_flag_rate": handle.detector.baseline_flag_rate(),
        "dim": handle.detector.dim(),
        "counters": {
            "seen": snap.seen,
            "scored": snap.scored,
            "flagged": snap.flagged,
            "errors": snap.errors,
        },
        "monitor": snap,
        "window_flag_rate": snap.window_flag_rate,
        "alarm_active": snap.alarm_active,
        "recent_events": recent,
    }))
    .into_response()
}

async fn delete_detector(State(reg): State<AppState>, Path(id): Path<String>) -> Response {
    if reg.remove(&id) {
        StatusCode::NO_CONTENT.into_response()
    } else {
        not_found(&id)
    }
}
