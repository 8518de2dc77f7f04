//! HTTP and websocket front end: a session registry, one tokio task per
//! session, and per-connection fan-out with replay.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Serialize;
use tokio::sync::{broadcast, mpsc};
use tokio::task::JoinHandle;
use tokio::time::Instant;

use sketchloop::sim::TaskKind;

use crate::engine::{SessionEngine, FRAME_INTERVAL};
use crate::protocol::{rejection, ClientKind, Envelope, StartBody, PROTOCOL_VERSION};

/// How long a finished session keeps answering on its inbox.
const LINGER: Duration = Duration::from_secs(30);
/// Finished sessions kept for log retrieval before the oldest are evicted.
const RETAINED: usize = 1024;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    /// Concurrent live sessions; further `start` requests are rejected.
    pub max_sessions: usize,
    /// Pause between controller ticks.
    pub step_delay: Duration,
    pub frame_interval: Duration,
    /// Step budget override for new sessions.
    pub budget: Option<u64>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            max_sessions: 8,
            step_delay: Duration::from_millis(20),
            frame_interval: FRAME_INTERVAL,
            budget: None,
        }
    }
}

type Outbound = (u64, Arc<str>);

struct SessionHandle {
    inbox: mpsc::UnboundedSender<Envelope>,
    /// Every outbound message in seq order; index `i` holds seq `i + 1`.
    history: Mutex<Vec<Arc<str>>>,
    live: broadcast::Sender<Outbound>,
    log: Mutex<String>,
    ended: AtomicBool,
}

impl SessionHandle {
    /// Messages after `from_seq` plus a receiver for everything newer,
    /// taken atomically with respect to the publisher.
    fn attach(&self, from_seq: u64) -> (Vec<Outbound>, broadcast::Receiver<Outbound>) {
        let history = self.history.lock().expect("history lock");
        let backlog = history
            .iter()
            .enumerate()
            .skip(from_seq as usize)
            .map(|(i, m)| (i as u64 + 1, m.clone()))
            .collect();
        (backlog, self.live.subscribe())
    }

    fn publish(&self, engine: &mut SessionEngine) {
        let out = engine.drain();
        if out.is_empty() {
            return;
        }
        {
            let mut history = self.history.lock().expect("history lock");
            for env in out {
                let text: Arc<str> = env.to_text().into();
                history.push(text.clone());
                let _ = self.live.send((env.seq, text));
            }
        }
        *self.log.lock().expect("log lock") = engine.audit_jsonl();
        if engine.is_finished() {
            self.ended.store(true, Ordering::SeqCst);
        }
    }
}

#[derive(Default)]
struct Registry {
    next_id: u64,
    sessions: BTreeMap<u64, Arc<SessionHandle>>,
}

impl Registry {
    fn get(&self, id: &str) -> Option<Arc<SessionHandle>> {
        let n: u64 = id.strip_prefix('s')?.parse().ok()?;
        self.sessions.get(&n).cloned()
    }

    fn live_count(&self) -> usize {
        self.sessions
            .values()
            .filter(|s| !s.ended.load(Ordering::SeqCst))
            .count()
    }

    fn evict(&mut self) {
        while self.sessions.len() > RETAINED {
            let oldest = self
                .sessions
                .iter()
                .find(|(_, s)| s.ended.load(Ordering::SeqCst))
                .map(|(k, _)| *k);
            match oldest {
                Some(k) => {
                    self.sessions.remove(&k);
                }
                None => break,
            }
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    cfg: Arc<ServerConfig>,
    registry: Arc<Mutex<Registry>>,
}

impl AppState {
    pub fn new(cfg: ServerConfig) -> Self {
        Self {
            cfg: Arc::new(cfg),
            registry: Arc::default(),
        }
    }

    fn open_session(&self, body: &StartBody) -> Result<(String, Arc<SessionHandle>), String> {
        let task = body.task.as_deref().ok_or("start needs a task or a session_id")?;
        let mut reg = self.registry.lock().expect("registry lock");
        if reg.live_count() >= self.cfg.max_sessions {
            return Err(format!("server is at capacity ({} sessions)", self.cfg.max_sessions));
        }
        let n = reg.next_id + 1;
        let id = format!("s{n}");
        let budget = body.budget.or(self.cfg.budget);
        let mut engine = SessionEngine::open(&id, task, body.seed, body.hitl_gate, budget)
            .map_err(|e| e.to_string())?
            .with_frame_interval(self.cfg.frame_interval);
        engine.frame_now(Duration::ZERO);
        reg.next_id = n;

        let (inbox, rx) = mpsc::unbounded_channel();
        let (live, _) = broadcast::channel(256);
        let handle = Arc::new(SessionHandle {
            inbox,
            history: Mutex::default(),
            live,
            log: Mutex::default(),
            ended: AtomicBool::new(false),
        });
        handle.publish(&mut engine);
        reg.sessions.insert(n, handle.clone());
        reg.evict();
        drop(reg);

        log::info!("session {id} opened: task={task} seed={} gate={}", body.seed, body.hitl_gate);
        tokio::spawn(run_session(engine, handle.clone(), rx, self.cfg.step_delay));
        Ok((id, handle))
    }
}

async fn run_session(
    mut engine: SessionEngine,
    handle: Arc<SessionHandle>,
    mut inbox: mpsc::UnboundedReceiver<Envelope>,
    step_delay: Duration,
) {
    let t0 = Instant::now();
    loop {
        while let Ok(msg) = inbox.try_recv() {
            engine.handle(&msg, t0.elapsed());
        }
        handle.publish(&mut engine);
        if engine.can_advance() {
            engine.advance(t0.elapsed());
            handle.publish(&mut engine);
            if step_delay.is_zero() {
                tokio::task::yield_now().await;
            } else {
                tokio::time::sleep(step_delay).await;
            }
            continue;
        }
        let wait = if engine.is_finished() { LINGER } else { Duration::MAX };
        match tokio::time::timeout(wait, inbox.recv()).await {
            Ok(Some(msg)) => engine.handle(&msg, t0.elapsed()),
            Ok(None) | Err(_) => break,
        }
    }
    handle.publish(&mut engine);
    handle.ended.store(true, Ordering::SeqCst);
    log::info!("session {} closed", engine.id());
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", get(ws_upgrade))
        .route("/tasks", get(list_tasks))
        .route("/sessions/{id}/log", get(session_log))
        .with_state(state)
}

/// Binds `cfg.addr` and serves until the process exits.
pub async fn serve(cfg: ServerConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(cfg.addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(cfg))).await
}

#[derive(Serialize)]
struct TaskInfo {
    name: &'static str,
    description: &'static str,
    subtasks: [usize; 2],
}

async fn list_tasks() -> Json<Vec<TaskInfo>> {
    Json(
        TaskKind::ALL
            .iter()
            .map(|k| {
                let (lo, hi) = k.subtask_count_range();
                TaskInfo {
                    name: k.as_str(),
                    description: k.description(),
                    subtasks: [lo, hi],
                }
            })
            .collect(),
    )
}

async fn session_log(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    let handle = state.registry.lock().expect("registry lock").get(&id);
    match handle {
        Some(h) => {
            let body = h.log.lock().expect("log lock").clone();
            ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
        }
        None => (StatusCode::NOT_FOUND, format!("no session {id}\n")).into_response(),
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state))
}

fn reject_text(session: Option<&str>, kind: &str, seq: u64, reason: &str) -> Message {
    let env = Envelope::new("state_update", session, 0, rejection(kind, seq, reason, vec![]));
    Message::Text(env.to_text().into())
}

fn spawn_forwarder(
    handle: Arc<SessionHandle>,
    from_seq: u64,
    out: mpsc::UnboundedSender<Message>,
) -> JoinHandle<()> {
    tokio::spawn(async move {
        let mut last = from_seq;
        'attach: loop {
            let (backlog, mut rx) = handle.attach(last);
            for (seq, text) in backlog {
                last = seq;
                if out.send(Message::Text(text.as_ref().into())).is_err() {
                    return;
                }
            }
            loop {
                match rx.recv().await {
                    Ok((seq, text)) => {
                        if seq <= last {
                            continue;
                        }
                        last = seq;
                        if out.send(Message::Text(text.as_ref().into())).is_err() {
                            return;
                        }
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => continue 'attach,
                    Err(broadcast::error::RecvError::Closed) => return,
                }
            }
        }
    })
}

async fn connection(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    let (out, mut out_rx) = mpsc::unbounded_channel::<Message>();
    let writer = tokio::spawn(async move {
        while let Some(m) = out_rx.recv().await {
            if sink.send(m).await.is_err() {
                break;
            }
        }
    });

    let mut attached: Option<(String, Arc<SessionHandle>, JoinHandle<()>)> = None;
    while let Some(Ok(frame)) = stream.next().await {
        let text = match frame {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let env: Envelope = match serde_json::from_str(text.as_str()) {
            Ok(e) => e,
            Err(e) => {
                let _ = out.send(reject_text(None, "unknown", 0, &format!("malformed message: {e}")));
                continue;
            }
        };
        let session = attached.as_ref().map(|(id, _, _)| id.as_str());
        if env.v != PROTOCOL_VERSION {
            let reason = format!("unsupported protocol version {}", env.v);
            let _ = out.send(reject_text(session, &env.kind, env.seq, &reason));
            continue;
        }
        if ClientKind::parse(&env.kind) == Some(ClientKind::Start) {
            let body: StartBody = match serde_json::from_str(env.body.get()) {
                Ok(b) => b,
                Err(e) => {
                    let _ = out.send(reject_text(session, "start", env.seq, &format!("bad body: {e}")));
                    continue;
                }
            };
            let target = match body.session_id.as_deref() {
                Some(id) => {
                    let found = state.registry.lock().expect("registry lock").get(id);
                    found
                        .map(|h| (id.to_string(), h, body.from_seq.unwrap_or(0)))
                        .ok_or_else(|| format!("unknown session {id}"))
                }
                None => state.open_session(&body).map(|(id, h)| (id, h, 0)),
            };
            match target {
                Ok((id, handle, from_seq)) => {
                    if let Some((_, _, fwd)) = attached.take() {
                        fwd.abort();
                    }
                    let fwd = spawn_forwarder(handle.clone(), from_seq, out.clone());
                    attached = Some((id, handle, fwd));
                }
                Err(reason) => {
                    let _ = out.send(reject_text(session, "start", env.seq, &reason));
                }
            }
            continue;
        }
        match &attached {
            Some((id, handle, _)) => {
                if handle.inbox.send(env.clone()).is_err() {
                    let _ = out.send(reject_text(Some(id), &env.kind, env.seq, "session ended"));
                }
            }
            None => {
                let _ = out.send(reject_text(None, &env.kind, env.seq, "no session attached; send start first"));
            }
        }
    }
    if let Some((_, _, fwd)) = attached {
        fwd.abort();
    }
    drop(out);
    let _ = writer.await;
}
