//! One live session: an episode runner plus the outbound message stream.
//!
//! The engine is synchronous and clock-free; the caller passes the current
//! time so frame throttling is testable.

use std::time::Duration;

use base64::Engine as _;
use serde::Serialize;
use serde_json::value::RawValue;
use serde_json::Value;

use sketchloop::control::{hex_digest, Intervention, LoopError, LoopEvent, LoopState, ModeToken};
use sketchloop::sim::{EpisodeConfig, EpisodeRunner, LayoutError, ScriptedEvent, TaskKind, Tick};
use sketchloop::sketch::{
    parse_sketch_value, parse_sketch_with_warnings, sketch_digest, write_record, SketchError,
    VisualSketch,
};

use crate::protocol::{raw, rejection, ClientKind, EditBody, Envelope, InjectBody, ServerKind};

/// Default minimum spacing between two `frame` messages (at most 5 per second).
pub const FRAME_INTERVAL: Duration = Duration::from_millis(200);

#[derive(Debug, thiserror::Error)]
pub enum OpenError {
    #[error(transparent)]
    UnknownTask(#[from] sketchloop::sim::UnknownTask),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("budget must be positive")]
    Budget,
}

pub struct SessionEngine {
    id: String,
    runner: EpisodeRunner,
    paused: bool,
    out_seq: u64,
    in_seq: u64,
    outbox: Vec<Envelope>,
    audit_seen: usize,
    last_frame: Option<Duration>,
    frame_interval: Duration,
    outcome_sent: bool,
}

fn sketch_body(sketch: &VisualSketch) -> Box<RawValue> {
    RawValue::from_string(write_record(sketch)).expect("canonical record is valid JSON")
}

impl SessionEngine {
    /// Opens a session. The first outbound message is a `state_update`;
    /// call [`frame_now`](Self::frame_now) to also queue the initial frame.
    pub fn open(
        id: impl Into<String>,
        task: &str,
        seed: u64,
        hitl_gate: bool,
        budget: Option<u64>,
    ) -> Result<Self, OpenError> {
        let kind: TaskKind = task.parse()?;
        let mut cfg = EpisodeConfig {
            hitl_gate,
            ..EpisodeConfig::default()
        };
        if let Some(b) = budget {
            if b == 0 {
                return Err(OpenError::Budget);
            }
            cfg.budget = b;
        }
        let runner = EpisodeRunner::new(kind, seed, cfg)?;
        let mut engine = Self {
            id: id.into(),
            runner,
            paused: false,
            out_seq: 0,
            in_seq: 0,
            outbox: Vec::new(),
            audit_seen: 0,
            last_frame: None,
            frame_interval: FRAME_INTERVAL,
            outcome_sent: false,
        };
        engine.push_state(None);
        Ok(engine)
    }

    pub fn with_frame_interval(mut self, d: Duration) -> Self {
        self.frame_interval = d;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn runner(&self) -> &EpisodeRunner {
        &self.runner
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn is_finished(&self) -> bool {
        self.runner.is_finished()
    }

    /// Audit log of the episode as line-delimited JSON.
    pub fn audit_jsonl(&self) -> String {
        let mut s = String::new();
        for r in self.runner.controller().audit_log() {
            s.push_str(&r.to_line());
            s.push('\n');
        }
        s
    }

    /// Whether [`advance`](Self::advance) would make progress.
    pub fn can_advance(&self) -> bool {
        if self.paused || self.runner.is_finished() {
            return false;
        }
        self.runner.controller().state() != LoopState::AwaitingApproval
            || self.runner.has_pending_events()
    }

    /// Queues a frame unless one went out within the throttle interval.
    pub fn frame_now(&mut self, now: Duration) {
        self.maybe_frame(now);
    }

    pub fn drain(&mut self) -> Vec<Envelope> {
        std::mem::take(&mut self.outbox)
    }

    fn emit(&mut self, kind: ServerKind, body: Box<RawValue>) {
        self.out_seq += 1;
        self.outbox
            .push(Envelope::new(kind.as_str(), Some(&self.id), self.out_seq, body));
    }

    fn push_state(&mut self, extra: Option<Value>) {
        let ctx = self.runner.controller().context();
        let mut body = serde_json::json!({
            "state": self.runner.controller().state().to_string(),
            "step": self.runner.step_count(),
            "paused": self.paused,
            "client_seq": self.in_seq,
            "task": self.runner.spec().kind.as_str(),
            "instruction": ctx.instruction,
            "subtask": ctx.current_subtask,
            "completed": ctx.completed_subtasks,
        });
        if let (Some(Value::Object(extra)), Value::Object(map)) = (extra, &mut body) {
            map.extend(extra);
        }
        self.emit(ServerKind::StateUpdate, raw(&body));
    }

    fn ack(&mut self, kind: ClientKind, seq: u64, extra: Value) {
        let mut v = serde_json::json!({ "ack": kind.as_str(), "in_reply_to": seq });
        if let (Value::Object(map), Value::Object(extra)) = (&mut v, extra) {
            map.extend(extra);
        }
        self.push_state(Some(v));
    }

    fn reject(&mut self, kind: &str, seq: u64, reason: &str, violations: Vec<String>) {
        let body = rejection(kind, seq, reason, violations);
        self.emit(ServerKind::StateUpdate, body);
    }

    fn maybe_frame(&mut self, now: Duration) {
        let due = self
            .last_frame
            .is_none_or(|last| now.saturating_sub(last) >= self.frame_interval);
        if !due {
            return;
        }
        self.last_frame = Some(now);
        let img = self.runner.render();
        #[derive(Serialize)]
        struct Frame {
            t: u64,
            view: &'static str,
            width: u32,
            height: u32,
            format: &'static str,
            data: String,
        }
        let body = raw(&Frame {
            t: self.runner.step_count(),
            view: "ego",
            width: img.width(),
            height: img.height(),
            format: "ppm",
            data: base64::engine::general_purpose::STANDARD.encode(img.to_ppm()),
        });
        self.emit(ServerKind::Frame, body);
    }

    /// Turns new audit records into token / proposal messages.
    fn flush_audit(&mut self) {
        let log = self.runner.controller().audit_log().to_vec();
        for r in &log[self.audit_seen..] {
            let Some(token) = r.token else { continue };
            #[derive(Serialize)]
            struct Token<'a> {
                token: &'a str,
                t: u64,
                #[serde(skip_serializing_if = "Option::is_none")]
                subtask: Option<&'a str>,
                #[serde(skip_serializing_if = "Option::is_none")]
                sketch_digest: Option<&'a str>,
                #[serde(skip_serializing_if = "Option::is_none")]
                action_digest: Option<&'a str>,
            }
            let name = match token {
                ModeToken::Bor => "BOR",
                ModeToken::Eor => "EOR",
                ModeToken::Boa => "BOA",
            };
            self.emit(
                ServerKind::Token,
                raw(&Token {
                    token: name,
                    t: r.timestamp,
                    subtask: r.subtask.as_deref(),
                    sketch_digest: r.sketch_digest.as_deref(),
                    action_digest: r.action_digest.as_deref(),
                }),
            );
            if token == ModeToken::Eor {
                self.push_proposal();
            }
        }
        self.audit_seen = log.len();
    }

    fn push_proposal(&mut self) {
        let ctx = self.runner.controller().context();
        let Some(sketch) = ctx.current_sketch() else { return };
        #[derive(Serialize)]
        struct Proposal {
            subtask: Option<String>,
            rationale: Option<String>,
            sketch: Box<RawValue>,
            digest: String,
            awaiting_approval: bool,
        }
        let body = raw(&Proposal {
            subtask: ctx.current_subtask.clone(),
            rationale: ctx.rationale.clone(),
            sketch: sketch_body(sketch),
            digest: hex_digest(sketch_digest(sketch)),
            awaiting_approval: self.runner.controller().state() == LoopState::AwaitingApproval,
        });
        self.emit(ServerKind::SketchProposal, body);
    }

    fn push_outcome(&mut self) {
        if self.outcome_sent || !self.runner.is_finished() {
            return;
        }
        self.outcome_sent = true;
        let ep = self.runner.episode();
        let body = serde_json::json!({
            "success": ep.success,
            "steps": ep.steps(),
            "subtasks_completed": ep.spec.satisfied_count(ep.final_scene()),
            "subtasks_total": ep.spec.plan.len(),
            "fault": ep.fault,
        });
        self.emit(ServerKind::Outcome, raw(&body));
    }

    /// Runs one controller decision and emits what it produced.
    pub fn advance(&mut self, now: Duration) {
        if !self.can_advance() {
            return;
        }
        let tick = self.runner.tick();
        self.flush_audit();
        match tick {
            Tick::Blocked => {}
            Tick::Advanced(_) | Tick::Finished => {
                self.push_state(None);
                self.maybe_frame(now);
            }
        }
        self.push_outcome();
    }

    /// Handles one client message (other than attach requests).
    pub fn handle(&mut self, msg: &Envelope, now: Duration) {
        let Some(kind) = ClientKind::parse(&msg.kind) else {
            self.reject(&msg.kind, msg.seq, "unknown message type", vec![]);
            return;
        };
        if msg.seq <= self.in_seq {
            self.reject(
                kind.as_str(),
                msg.seq,
                &format!("seq must increase (last accepted {})", self.in_seq),
                vec![],
            );
            return;
        }
        self.in_seq = msg.seq;
        if self.runner.is_finished() && kind != ClientKind::Start {
            self.reject(kind.as_str(), msg.seq, "session ended", vec![]);
            return;
        }
        match kind {
            ClientKind::Start => self.ack(kind, msg.seq, Value::Null),
            ClientKind::Pause => {
                self.paused = true;
                self.ack(kind, msg.seq, Value::Null);
            }
            ClientKind::Resume => {
                self.paused = false;
                self.ack(kind, msg.seq, Value::Null);
            }
            ClientKind::Approve => match self.runner.approve() {
                Ok(()) => {
                    self.flush_audit();
                    self.ack(kind, msg.seq, Value::Null);
                }
                Err(e) => self.reject(kind.as_str(), msg.seq, &e.to_string(), vec![]),
            },
            ClientKind::EditSketch => self.handle_edit(msg),
            ClientKind::InjectEvent => self.handle_inject(msg),
        }
        self.push_outcome();
        if kind == ClientKind::EditSketch || kind == ClientKind::InjectEvent {
            self.maybe_frame(now);
        }
    }

    fn parse_sketch_field(v: &Value) -> Result<VisualSketch, SketchError> {
        match v {
            Value::String(s) => parse_sketch_with_warnings(s).map(|p| p.sketch),
            other => parse_sketch_value(other).map(|p| p.sketch),
        }
    }

    fn sketch_rejection(&mut self, kind: ClientKind, seq: u64, e: &SketchError) {
        let violations = e
            .report()
            .map(|r| r.violations.iter().map(|v| v.to_string()).collect())
            .unwrap_or_default();
        self.reject(kind.as_str(), seq, &format!("invalid sketch: {e}"), violations);
    }

    fn handle_edit(&mut self, msg: &Envelope) {
        let kind = ClientKind::EditSketch;
        let body: EditBody = match serde_json::from_str(msg.body.get()) {
            Ok(b) => b,
            Err(e) => return self.reject(kind.as_str(), msg.seq, &format!("bad body: {e}"), vec![]),
        };
        let sketch = match Self::parse_sketch_field(&body.sketch) {
            Ok(s) => s,
            Err(e) => return self.sketch_rejection(kind, msg.seq, &e),
        };
        let digest = hex_digest(sketch_digest(&sketch));
        let editor = body.editor.as_deref().unwrap_or("ui");
        match self.runner.edit_sketch(sketch, body.directive, Some(editor)) {
            Ok(()) => {
                self.flush_audit();
                self.ack(kind, msg.seq, serde_json::json!({ "digest": digest }));
            }
            Err(LoopError::NotEditable(_)) => {
                self.reject(kind.as_str(), msg.seq, "not editable now", vec![])
            }
            Err(LoopError::Rejected(report)) => {
                let v = report.violations.iter().map(|v| v.to_string()).collect();
                self.reject(kind.as_str(), msg.seq, "invalid sketch", v)
            }
            Err(e) => self.reject(kind.as_str(), msg.seq, &e.to_string(), vec![]),
        }
    }

    fn handle_inject(&mut self, msg: &Envelope) {
        let kind = ClientKind::InjectEvent;
        let body: InjectBody = match serde_json::from_str(msg.body.get()) {
            Ok(b) => b,
            Err(e) => return self.reject(kind.as_str(), msg.seq, &format!("bad body: {e}"), vec![]),
        };
        match body.kind.as_str() {
            "none" => {}
            "scene_change" => self.runner.schedule_now(ScriptedEvent::SceneChange),
            "subtask_complete" => self.runner.inject(LoopEvent::SubtaskComplete),
            "error_detected" => self.runner.inject(LoopEvent::ErrorDetected {
                diagnostic: body.diagnostic.unwrap_or_else(|| "reported by operator".into()),
            }),
            "human_intervention" => {
                let sketch = match body.sketch.as_ref().map(Self::parse_sketch_field).transpose() {
                    Ok(s) => s,
                    Err(e) => return self.sketch_rejection(kind, msg.seq, &e),
                };
                match Intervention::new(sketch, body.directive) {
                    Ok(iv) => self.runner.inject(LoopEvent::HumanIntervention(iv)),
                    Err(e) => return self.reject(kind.as_str(), msg.seq, &e.to_string(), vec![]),
                }
            }
            other => {
                return self.reject(
                    kind.as_str(),
                    msg.seq,
                    &format!("unknown event kind {other:?}"),
                    vec![],
                )
            }
        }
        self.ack(kind, msg.seq, serde_json::json!({ "event": body.kind }));
    }
}
