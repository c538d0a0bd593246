//! Session server for interactive pixel-goal pushing. Clients create a
//! simulated scene, designate pixels and goals, then step or run the MPC
//! loop while frames and predicted-distribution heatmaps stream back.
//!
//! Endpoints:
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/session` | [`SessionRequest`] | [`SessionView`] |
//! | POST | `/session/{id}/goal` | [`GoalRequest`] | [`GoalAck`] |
//! | POST | `/session/{id}/step` | none | [`StepEvent`] |
//! | POST | `/session/{id}/run` | none | [`SessionView`] |
//! | POST | `/session/{id}/pause` | none | [`SessionView`] |
//! | POST | `/session/{id}/reset` | [`SessionRequest`] | [`SessionView`] |
//! | GET | `/session/{id}/frame` | none | [`SessionView`] |
//! | GET | `/session/{id}/events` | WebSocket upgrade | [`ServerEvent`] stream |
//!
//! The event socket also accepts [`ClientCommand`] messages and answers each
//! with a [`CommandReply`].

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::broadcast::error::RecvError;
use tokio::sync::mpsc;
use vismpc_core::flow::PredictorModel;
use vismpc_core::planner::PlanConfig;

pub mod error;
pub mod session;
pub mod wire;

pub use error::ServiceError;
pub use session::{spawn_session, SessionHandle};
pub use wire::{
    ClientCommand, CommandReply, GoalAck, GoalRequest, Heatmap, Mode, ServerEvent, SessionRequest, SessionView, StepEvent,
};

pub const DEFAULT_PORT: u16 = 8642;

/// Server-wide defaults applied to every session.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub grid: usize,
    pub seed: u64,
    pub objects: usize,
    pub steps: usize,
    pub model: PredictorModel,
    pub plan: PlanConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            grid: 32,
            seed: 0,
            objects: 2,
            steps: vismpc_core::bench::DEFAULT_STEPS,
            model: PredictorModel::oracle(),
            plan: PlanConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), ServiceError> {
        self.plan.validate()?;
        if let PredictorModel::Learned(params) = &self.model {
            let c = params.config();
            if c.width != self.grid || c.height != self.grid {
                return Err(ServiceError::BadRequest(format!(
                    "model expects {}x{} frames, grid is {}",
                    c.width, c.height, self.grid
                )));
            }
        }
        Ok(())
    }
}

pub struct AppState {
    config: Arc<ServiceConfig>,
    sessions: Mutex<HashMap<u64, SessionHandle>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            config: Arc::new(config),
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn create(&self, req: &SessionRequest) -> Result<(SessionHandle, SessionView), ServiceError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (handle, view) = spawn_session(id, self.config.clone(), req)?;
        self.sessions.lock().expect("session map").insert(id, handle.clone());
        Ok((handle, view))
    }

    pub fn session(&self, id: u64) -> Result<SessionHandle, ServiceError> {
        self.sessions
            .lock()
            .expect("session map")
            .get(&id)
            .cloned()
            .ok_or(ServiceError::UnknownSession(id))
    }
}

type Shared = State<Arc<AppState>>;

async fn create_session(State(app): Shared, body: Option<Json<SessionRequest>>) -> Result<Json<SessionView>, ServiceError> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    Ok(Json(app.create(&req)?.1))
}

async fn set_goal(State(app): Shared, Path(id): Path<u64>, Json(req): Json<GoalRequest>) -> Result<Json<GoalAck>, ServiceError> {
    Ok(Json(app.session(id)?.set_goal(req.pairs).await?))
}

async fn step(State(app): Shared, Path(id): Path<u64>) -> Result<Json<StepEvent>, ServiceError> {
    Ok(Json(app.session(id)?.step().await?))
}

async fn run(State(app): Shared, Path(id): Path<u64>) -> Result<Json<SessionView>, ServiceError> {
    Ok(Json(app.session(id)?.run().await?))
}

async fn pause(State(app): Shared, Path(id): Path<u64>) -> Result<Json<SessionView>, ServiceError> {
    Ok(Json(app.session(id)?.pause().await?))
}

async fn reset(
    State(app): Shared,
    Path(id): Path<u64>,
    body: Option<Json<SessionRequest>>,
) -> Result<Json<SessionView>, ServiceError> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    Ok(Json(app.session(id)?.reset(req).await?))
}

async fn frame(State(app): Shared, Path(id): Path<u64>) -> Result<Json<SessionView>, ServiceError> {
    Ok(Json(app.session(id)?.view().await?))
}

async fn events(State(app): Shared, Path(id): Path<u64>, ws: WebSocketUpgrade) -> Result<Response, ServiceError> {
    let handle = app.session(id)?;
    Ok(ws.on_upgrade(move |socket| event_socket(socket, handle)))
}

async fn send_json<T: serde::Serialize>(socket: &mut WebSocket, value: &T) -> bool {
    match serde_json::to_string(value) {
        Ok(text) => socket.send(Message::Text(text.into())).await.is_ok(),
        Err(_) => false,
    }
}

async fn event_socket(mut socket: WebSocket, handle: SessionHandle) {
    let mut events = handle.subscribe();
    // Commands are queued in arrival order; replies are awaited off the loop
    // so a pending step never stalls the stream.
    let (replies_tx, mut replies) = mpsc::unbounded_channel::<CommandReply>();
    loop {
        tokio::select! {
            ev = events.recv() => match ev {
                Ok(ev) => {
                    if !send_json(&mut socket, &ev).await {
                        break;
                    }
                }
                Err(RecvError::Lagged(n)) => {
                    let msg = ServerEvent::Error { message: format!("{n} events dropped") };
                    if !send_json(&mut socket, &msg).await {
                        break;
                    }
                }
                Err(RecvError::Closed) => break,
            },
            Some(reply) = replies.recv() => {
                if !send_json(&mut socket, &reply).await {
                    break;
                }
            }
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(text))) => match serde_json::from_str::<ClientCommand>(&text) {
                    Ok(cmd) => {
                        let pending = handle.submit(cmd).await;
                        let tx = replies_tx.clone();
                        tokio::spawn(async move {
                            let _ = tx.send(pending.await);
                        });
                    }
                    Err(e) => {
                        let r = CommandReply::Rejected { error: "bad_request".into(), message: e.to_string() };
                        if !send_json(&mut socket, &r).await {
                            break;
                        }
                    }
                },
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}/goal", post(set_goal))
        .route("/session/{id}/step", post(step))
        .route("/session/{id}/run", post(run))
        .route("/session/{id}/pause", post(pause))
        .route("/session/{id}/reset", post(reset))
        .route("/session/{id}/frame", get(frame))
        .route("/session/{id}/events", get(events))
        .with_state(state)
}

/// Serves until the process exits.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> Result<(), ServiceError> {
    config.validate()?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServiceError::BadRequest(format!("cannot bind {addr}: {e}")))?;
    axum::serve(listener, router(AppState::new(config)))
        .await
        .map_err(|e| ServiceError::BadRequest(format!("server error: {e}")))
}
