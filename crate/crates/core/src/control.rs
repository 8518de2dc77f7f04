//! Token-gated reasoning/action loop.
//!
//! The controller alternates between two phases. A deliberation phase is
//! bracketed by `BOR` and `EOR`: the reasoner proposes the next subtask and a
//! sketch, which is rendered onto the reference view and installed in the
//! context. An action phase is opened by `BOA`: the policy turns the current
//! context into an action chunk. The controller begins by deliberating and
//! deliberates again whenever a subtask completes, an error is reported, a
//! human intervenes or the scene changes; otherwise it acts.
//!
//! State table:
//!
//! | state            | event                     | tokens      | next                         |
//! |------------------|---------------------------|-------------|------------------------------|
//! | Boot             | any                       | BOR EOR     | Executing / AwaitingApproval |
//! | Executing        | none                      | BOA         | Executing                    |
//! | Executing        | trigger                   | BOR EOR     | Executing / AwaitingApproval |
//! | AwaitingApproval | none                      | (nothing)   | AwaitingApproval             |
//! | AwaitingApproval | trigger                   | BOR EOR     | AwaitingApproval             |
//! | any              | reasoner/policy failure   | (partial)   | Faulted                      |

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::render::{render_sketch, RasterImage, Rgb, SketchStyle};
use crate::sketch::{sketch_digest, validate_sketch, ValidationReport, VisualSketch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModeToken {
    Bor,
    Eor,
    Boa,
}

impl fmt::Display for ModeToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeToken::Bor => "<BOR>",
            ModeToken::Eor => "<EOR>",
            ModeToken::Boa => "<BOA>",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SubtaskComplete,
    ErrorDetected,
    HumanIntervention,
    SceneChange,
    None,
}

impl EventKind {
    pub fn triggers_reasoning(self) -> bool {
        !matches!(self, EventKind::None)
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "subtask_complete" => EventKind::SubtaskComplete,
            "error_detected" => EventKind::ErrorDetected,
            "human_intervention" => EventKind::HumanIntervention,
            "scene_change" => EventKind::SceneChange,
            "none" => EventKind::None,
            _ => return Option::None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::SubtaskComplete => "subtask_complete",
            EventKind::ErrorDetected => "error_detected",
            EventKind::HumanIntervention => "human_intervention",
            EventKind::SceneChange => "scene_change",
            EventKind::None => "none",
        }
    }
}

/// Operator input: an edited sketch, a text directive, or both.
#[derive(Debug, Clone, PartialEq)]
pub struct Intervention {
    pub sketch: Option<VisualSketch>,
    pub directive: Option<String>,
}

impl Intervention {
    pub fn new(sketch: Option<VisualSketch>, directive: Option<String>) -> Result<Self, LoopError> {
        let directive = directive.filter(|d| !d.trim().is_empty());
        if sketch.is_none() && directive.is_none() {
            return Err(LoopError::EmptyIntervention);
        }
        if let Some(s) = &sketch {
            let report = validate_sketch(s);
            if !report.is_ok() {
                return Err(LoopError::Rejected(report));
            }
        }
        Ok(Self { sketch, directive })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoopEvent {
    None,
    SubtaskComplete,
    ErrorDetected { diagnostic: String },
    HumanIntervention(Intervention),
    SceneChange,
}

impl LoopEvent {
    pub fn kind(&self) -> EventKind {
        match self {
            LoopEvent::None => EventKind::None,
            LoopEvent::SubtaskComplete => EventKind::SubtaskComplete,
            LoopEvent::ErrorDetected { .. } => EventKind::ErrorDetected,
            LoopEvent::HumanIntervention(_) => EventKind::HumanIntervention,
            LoopEvent::SceneChange => EventKind::SceneChange,
        }
    }
}

/// Output of one deliberation: rationale, next subtask, and its sketch.
#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningRecord {
    pub rationale: String,
    pub subtask: String,
    pub sketch: VisualSketch,
}

impl ReasoningRecord {
    pub fn check(&self) -> Result<(), String> {
        if self.subtask.trim().is_empty() {
            return Err("reasoner returned an empty subtask".into());
        }
        let report = validate_sketch(&self.sketch);
        if !report.is_ok() {
            return Err(format!("reasoner returned an invalid sketch: {report}"));
        }
        Ok(())
    }

    /// `{"rationale":..,"subtask":..,"sketch":{..}}` with the canonical sketch record.
    pub fn to_record(&self) -> String {
        format!(
            "{{\"rationale\":{},\"subtask\":{},\"sketch\":{}}}",
            serde_json::to_string(&self.rationale).expect("string"),
            serde_json::to_string(&self.subtask).expect("string"),
            crate::sketch::write_record(&self.sketch)
        )
    }
}

/// Fixed-horizon sequence of action vectors of equal dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    actions: Vec<Vec<f64>>,
}

impl ActionChunk {
    pub fn new(actions: Vec<Vec<f64>>, dim: usize) -> Result<Self, LoopError> {
        if actions.is_empty() {
            return Err(LoopError::BadChunk("horizon must be at least 1".into()));
        }
        if let Some(bad) = actions.iter().find(|a| a.len() != dim) {
            return Err(LoopError::BadChunk(format!(
                "action has {} components, embodiment expects {dim}",
                bad.len()
            )));
        }
        Ok(Self { actions })
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn dim(&self) -> usize {
        self.actions[0].len()
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn into_actions(self) -> Vec<Vec<f64>> {
        self.actions
    }

    pub fn digest(&self) -> u64 {
        let mut h = Sha256::new();
        for a in &self.actions {
            for v in a {
                h.update(v.to_le_bytes());
            }
            h.update([0xff]);
        }
        let out = h.finalize();
        u64::from_be_bytes(out[..8].try_into().expect("sha256 is 32 bytes"))
    }
}

/// Component failure surfaced by a reasoner or policy.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct AgentError(pub String);

impl AgentError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

pub trait Reasoner {
    fn reason(&mut self, ctx: &LoopContext) -> Result<ReasoningRecord, AgentError>;
}

pub trait ActionPolicy {
    fn act(&mut self, ctx: &LoopContext) -> Result<ActionChunk, AgentError>;
}

impl<R: Reasoner + ?Sized> Reasoner for &mut R {
    fn reason(&mut self, ctx: &LoopContext) -> Result<ReasoningRecord, AgentError> {
        (**self).reason(ctx)
    }
}

impl<P: ActionPolicy + ?Sized> ActionPolicy for &mut P {
    fn act(&mut self, ctx: &LoopContext) -> Result<ActionChunk, AgentError> {
        (**self).act(ctx)
    }
}

/// Plays back recorded reasoning outputs in order.
#[derive(Debug, Clone, Default)]
pub struct ReplayReasoner {
    records: VecDeque<ReasoningRecord>,
}

impl ReplayReasoner {
    pub fn new(records: impl IntoIterator<Item = ReasoningRecord>) -> Self {
        Self {
            records: records.into_iter().collect(),
        }
    }
}

impl Reasoner for ReplayReasoner {
    fn reason(&mut self, _ctx: &LoopContext) -> Result<ReasoningRecord, AgentError> {
        self.records
            .pop_front()
            .ok_or_else(|| AgentError::new("replay exhausted"))
    }
}

/// Plays back recorded action chunks in order.
#[derive(Debug, Clone, Default)]
pub struct ReplayPolicy {
    chunks: VecDeque<ActionChunk>,
}

impl ReplayPolicy {
    pub fn new(chunks: impl IntoIterator<Item = ActionChunk>) -> Self {
        Self {
            chunks: chunks.into_iter().collect(),
        }
    }
}

impl ActionPolicy for ReplayPolicy {
    fn act(&mut self, _ctx: &LoopContext) -> Result<ActionChunk, AgentError> {
        self.chunks
            .pop_front()
            .ok_or_else(|| AgentError::new("replay exhausted"))
    }
}

/// Working memory of the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopContext {
    pub instruction: String,
    /// Latest image per view id.
    pub observations: BTreeMap<String, RasterImage>,
    pub completed_subtasks: Vec<String>,
    pub current_subtask: Option<String>,
    pub rationale: Option<String>,
    /// Joint/gripper readings of the embodiment.
    pub proprio: Vec<f64>,
    /// Intervention being answered by the current deliberation.
    pub pending_intervention: Option<Intervention>,
    /// Diagnostic of the error being answered by the current deliberation.
    pub last_error: Option<String>,
    // sketch and its rendering are installed and replaced together
    sketch: Option<(VisualSketch, RasterImage)>,
}

impl LoopContext {
    pub fn new(instruction: impl Into<String>) -> Self {
        Self {
            instruction: instruction.into(),
            observations: BTreeMap::new(),
            completed_subtasks: Vec::new(),
            current_subtask: None,
            rationale: None,
            proprio: Vec::new(),
            pending_intervention: None,
            last_error: None,
            sketch: None,
        }
    }

    pub fn current_sketch(&self) -> Option<&VisualSketch> {
        self.sketch.as_ref().map(|(s, _)| s)
    }

    pub fn current_sketch_image(&self) -> Option<&RasterImage> {
        self.sketch.as_ref().map(|(_, i)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopState {
    Boot,
    Deliberating,
    AwaitingApproval,
    Executing,
    Faulted,
}

impl fmt::Display for LoopState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoopState::Boot => "boot",
            LoopState::Deliberating => "deliberating",
            LoopState::AwaitingApproval => "awaiting_approval",
            LoopState::Executing => "executing",
            LoopState::Faulted => "faulted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LoopError {
    #[error("loop is faulted: {0}")]
    Faulted(String),
    #[error("intervention rejected: {0}")]
    Rejected(ValidationReport),
    #[error("sketch frame {got} does not match the reference frame {expected}")]
    FrameMismatch { expected: String, got: String },
    #[error("not editable now (state {0})")]
    NotEditable(LoopState),
    #[error("nothing to approve (state {0})")]
    NothingToApprove(LoopState),
    #[error("intervention needs a sketch or a directive")]
    EmptyIntervention,
    #[error("bad action chunk: {0}")]
    BadChunk(String),
    #[error("render: {0}")]
    Render(String),
}

/// One line of the episode audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub timestamp: u64,
    pub state: LoopState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<ModeToken>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<EventKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sketch_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl AuditRecord {
    pub fn new(timestamp: u64, state: LoopState) -> Self {
        Self {
            timestamp,
            state,
            token: None,
            event: None,
            subtask: None,
            sketch_digest: None,
            action_digest: None,
            note: None,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("audit record serialization is infallible")
    }
}

pub fn hex_digest(d: u64) -> String {
    format!("{d:016x}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub tokens: Vec<ModeToken>,
    pub reasoning: Option<ReasoningRecord>,
    pub chunk: Option<ActionChunk>,
    pub state: LoopState,
    pub fault: Option<String>,
}

impl StepOutput {
    fn new(state: LoopState) -> Self {
        Self {
            tokens: Vec::new(),
            reasoning: None,
            chunk: None,
            state,
            fault: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Controller {
    state: LoopState,
    ctx: LoopContext,
    style: SketchStyle,
    hitl_gate: bool,
    fault: Option<String>,
    audit: Vec<AuditRecord>,
    clock: u64,
}

impl Controller {
    pub fn new(ctx: LoopContext, hitl_gate: bool) -> Self {
        Self {
            state: LoopState::Boot,
            ctx,
            style: SketchStyle::default(),
            hitl_gate,
            fault: None,
            audit: Vec::new(),
            clock: 0,
        }
    }

    pub fn with_style(mut self, style: SketchStyle) -> Self {
        self.style = style;
        self
    }

    pub fn state(&self) -> LoopState {
        self.state
    }

    pub fn context(&self) -> &LoopContext {
        &self.ctx
    }

    pub fn fault(&self) -> Option<&str> {
        self.fault.as_deref()
    }

    pub fn hitl_gate(&self) -> bool {
        self.hitl_gate
    }

    pub fn audit_log(&self) -> &[AuditRecord] {
        &self.audit
    }

    /// Sets the timestamp stamped on subsequent audit records.
    pub fn set_clock(&mut self, t: u64) {
        self.clock = t;
    }

    /// Sensor input: latest image of a view.
    pub fn observe(&mut self, view: impl Into<String>, image: RasterImage) {
        self.ctx.observations.insert(view.into(), image);
    }

    /// Sensor input: proprioceptive state.
    pub fn set_proprio(&mut self, proprio: Vec<f64>) {
        self.ctx.proprio = proprio;
    }

    /// Appends an externally produced record (e.g. an event seen by a
    /// detector) to the audit log.
    pub fn append_audit(&mut self, mut record: AuditRecord) {
        record.timestamp = self.clock;
        self.audit.push(record);
    }

    fn log(&mut self, f: impl FnOnce(&mut AuditRecord)) {
        let mut r = AuditRecord::new(self.clock, self.state);
        f(&mut r);
        self.audit.push(r);
    }

    fn current_digest(&self) -> Option<String> {
        self.ctx.current_sketch().map(|s| hex_digest(sketch_digest(s)))
    }

    fn enter_fault(&mut self, out: &mut StepOutput, msg: String) {
        self.state = LoopState::Faulted;
        self.fault = Some(msg.clone());
        self.log(|r| r.note = Some(format!("fault: {msg}")));
        out.state = LoopState::Faulted;
        out.fault = Some(msg);
    }

    fn render_for(&self, sketch: &VisualSketch) -> Result<RasterImage, String> {
        let f = &sketch.frame;
        let base = match self.ctx.observations.get(&f.view) {
            Some(img) if img.width() == f.width && img.height() == f.height => img.clone(),
            Some(img) => {
                return Err(format!(
                    "reference view {} is {}x{}, sketch frame is {}x{}",
                    f.view,
                    img.width(),
                    img.height(),
                    f.width,
                    f.height
                ))
            }
            None => RasterImage::new(f.width, f.height, Rgb::BLACK),
        };
        render_sketch(&base, sketch, &self.style).map_err(|e| e.to_string())
    }

    /// Advances the loop by one gating decision.
    pub fn step<R, P>(
        &mut self,
        event: LoopEvent,
        reasoner: &mut R,
        policy: &mut P,
    ) -> Result<StepOutput, LoopError>
    where
        R: Reasoner + ?Sized,
        P: ActionPolicy + ?Sized,
    {
        match self.state {
            LoopState::Faulted => Err(LoopError::Faulted(self.fault.clone().unwrap_or_default())),
            LoopState::Deliberating => Err(LoopError::NotEditable(LoopState::Deliberating)),
            LoopState::Boot => self.deliberate(event, reasoner),
            LoopState::Executing | LoopState::AwaitingApproval
                if event.kind().triggers_reasoning() =>
            {
                self.deliberate(event, reasoner)
            }
            LoopState::AwaitingApproval => Ok(StepOutput::new(self.state)),
            LoopState::Executing => Ok(self.act(policy)),
        }
    }

    fn deliberate<R: Reasoner + ?Sized>(
        &mut self,
        event: LoopEvent,
        reasoner: &mut R,
    ) -> Result<StepOutput, LoopError> {
        if let LoopEvent::HumanIntervention(iv) = &event {
            if let Some(s) = &iv.sketch {
                let report = validate_sketch(s);
                if !report.is_ok() {
                    return Err(LoopError::Rejected(report));
                }
            }
        }
        let kind = event.kind();
        if kind.triggers_reasoning() {
            self.log(|r| r.event = Some(kind));
        }
        match event {
            LoopEvent::SubtaskComplete => {
                if let Some(done) = self.ctx.current_subtask.take() {
                    self.ctx.completed_subtasks.push(done);
                }
            }
            LoopEvent::ErrorDetected { diagnostic } => self.ctx.last_error = Some(diagnostic),
            LoopEvent::HumanIntervention(iv) => self.ctx.pending_intervention = Some(iv),
            // an interrupted subtask is not complete; it stays out of the history
            LoopEvent::SceneChange | LoopEvent::None => {}
        }

        self.state = LoopState::Deliberating;
        let mut out = StepOutput::new(self.state);
        out.tokens.push(ModeToken::Bor);
        self.log(|r| r.token = Some(ModeToken::Bor));

        let mut record = match reasoner.reason(&self.ctx) {
            Ok(r) => r,
            Err(e) => {
                self.enter_fault(&mut out, format!("reasoner: {e}"));
                return Ok(out);
            }
        };
        if let Some(edited) = self
            .ctx
            .pending_intervention
            .take()
            .and_then(|iv| iv.sketch)
        {
            record.sketch = edited;
        }
        if let Err(msg) = record.check() {
            self.enter_fault(&mut out, msg);
            return Ok(out);
        }
        let image = match self.render_for(&record.sketch) {
            Ok(img) => img,
            Err(msg) => {
                self.enter_fault(&mut out, format!("render: {msg}"));
                return Ok(out);
            }
        };

        self.ctx.current_subtask = Some(record.subtask.clone());
        self.ctx.rationale = Some(record.rationale.clone());
        self.ctx.sketch = Some((record.sketch.clone(), image));
        self.ctx.last_error = None;

        out.tokens.push(ModeToken::Eor);
        let digest = self.current_digest();
        let subtask = record.subtask.clone();
        self.log(|r| {
            r.token = Some(ModeToken::Eor);
            r.subtask = Some(subtask);
            r.sketch_digest = digest;
        });
        self.state = if self.hitl_gate {
            LoopState::AwaitingApproval
        } else {
            LoopState::Executing
        };
        out.state = self.state;
        out.reasoning = Some(record);
        Ok(out)
    }

    fn act<P: ActionPolicy + ?Sized>(&mut self, policy: &mut P) -> StepOutput {
        let mut out = StepOutput::new(self.state);
        out.tokens.push(ModeToken::Boa);
        match policy.act(&self.ctx) {
            Ok(chunk) => {
                let digest = self.current_digest();
                let ad = hex_digest(chunk.digest());
                self.log(|r| {
                    r.token = Some(ModeToken::Boa);
                    r.sketch_digest = digest;
                    r.action_digest = Some(ad);
                });
                out.chunk = Some(chunk);
            }
            Err(e) => {
                self.log(|r| r.token = Some(ModeToken::Boa));
                self.enter_fault(&mut out, format!("policy: {e}"));
            }
        }
        out
    }

    /// Releases the approval gate after a deliberation.
    pub fn approve(&mut self) -> Result<(), LoopError> {
        if self.state != LoopState::AwaitingApproval {
            return Err(LoopError::NothingToApprove(self.state));
        }
        self.state = LoopState::Executing;
        self.log(|r| r.note = Some("approved".into()));
        Ok(())
    }

    /// Replaces the current sketch with an operator edit and re-renders it.
    /// Legal only while executing or awaiting approval.
    pub fn apply_intervention(
        &mut self,
        edited: VisualSketch,
        directive: Option<String>,
        editor: Option<&str>,
    ) -> Result<(), LoopError> {
        if !matches!(self.state, LoopState::Executing | LoopState::AwaitingApproval) {
            return Err(LoopError::NotEditable(self.state));
        }
        let report = validate_sketch(&edited);
        if !report.is_ok() {
            return Err(LoopError::Rejected(report));
        }
        if let Some(current) = self.ctx.current_sketch() {
            if current.frame != edited.frame {
                return Err(LoopError::FrameMismatch {
                    expected: format!("{:?}", current.frame),
                    got: format!("{:?}", edited.frame),
                });
            }
        }
        let image = self.render_for(&edited).map_err(LoopError::Render)?;
        let before = self.current_digest().unwrap_or_else(|| "none".into());
        let after = hex_digest(sketch_digest(&edited));
        self.ctx.sketch = Some((edited, image));
        let mut note = format!(
            "intervention by {}: sketch {before} -> {after}",
            editor.unwrap_or("operator")
        );
        if let Some(d) = &directive {
            note.push_str(&format!("; directive: {d}"));
        }
        let subtask = self.ctx.current_subtask.clone();
        self.log(|r| {
            r.subtask = subtask;
            r.sketch_digest = Some(after);
            r.note = Some(note);
        });
        Ok(())
    }
}

/// Tokens of an audit log, in order, with their timestamps.
pub fn token_trace(log: &[AuditRecord]) -> Vec<(u64, ModeToken)> {
    log.iter()
        .filter_map(|r| r.token.map(|t| (r.timestamp, t)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GrammarViolation {
    #[error("trace does not start with BOR")]
    FirstNotBor,
    #[error("token {index}: {token} not allowed after {prev}")]
    Unexpected {
        index: usize,
        token: ModeToken,
        prev: String,
    },
    #[error("trace ends inside a deliberation")]
    UnterminatedDeliberation,
    #[error("event at record {record} ({kind}) not answered by BOR before the next BOA")]
    UnansweredEvent { record: usize, kind: &'static str },
}

/// Checks that a token sequence belongs to `(BOR EOR BOA*)+`.
pub fn check_token_grammar(tokens: &[ModeToken]) -> Result<(), GrammarViolation> {
    #[derive(PartialEq)]
    enum S {
        Start,
        InReasoning,
        Acting,
    }
    let mut s = S::Start;
    for (index, &token) in tokens.iter().enumerate() {
        s = match (&s, token) {
            (S::Start, ModeToken::Bor) => S::InReasoning,
            (S::Start, _) => return Err(GrammarViolation::FirstNotBor),
            (S::InReasoning, ModeToken::Eor) => S::Acting,
            (S::Acting, ModeToken::Boa) => S::Acting,
            (S::Acting, ModeToken::Bor) => S::InReasoning,
            (prev, token) => {
                return Err(GrammarViolation::Unexpected {
                    index,
                    token,
                    prev: match prev {
                        S::Start => "start",
                        S::InReasoning => "BOR",
                        S::Acting => "EOR/BOA",
                    }
                    .into(),
                })
            }
        };
    }
    match s {
        S::InReasoning => Err(GrammarViolation::UnterminatedDeliberation),
        S::Start if !tokens.is_empty() => Err(GrammarViolation::FirstNotBor),
        _ => Ok(()),
    }
}

/// Checks that every reasoning-triggering event in the log is followed by a
/// BOR before any further BOA, and that no BOR appears without a cause
/// (boot or an event).
pub fn check_event_response(log: &[AuditRecord]) -> Result<(), GrammarViolation> {
    let mut waiting: Option<(usize, EventKind)> = None;
    let mut unanswered_events = 0usize;
    let mut bor_seen = 0usize;
    for (i, r) in log.iter().enumerate() {
        if let Some(kind) = r.event.filter(|k| k.triggers_reasoning()) {
            if waiting.is_none() {
                waiting = Some((i, kind));
            }
            unanswered_events += 1;
        }
        match r.token {
            Some(ModeToken::Bor) => {
                bor_seen += 1;
                if bor_seen > 1 {
                    if unanswered_events == 0 {
                        return Err(GrammarViolation::Unexpected {
                            index: i,
                            token: ModeToken::Bor,
                            prev: "no triggering event".into(),
                        });
                    }
                    unanswered_events -= 1;
                }
                if unanswered_events == 0 {
                    waiting = None;
                }
            }
            Some(ModeToken::Boa) => {
                if let Some((record, kind)) = waiting {
                    return Err(GrammarViolation::UnansweredEvent {
                        record,
                        kind: kind.as_str(),
                    });
                }
            }
            _ => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{BBox, FrameMeta, Keypoint, TranslationArrow};

    fn frame() -> FrameMeta {
        FrameMeta::new("ego", 64, 48)
    }

    fn sketch_at(x: f64) -> VisualSketch {
        let mut s = VisualSketch::empty(frame()).with_box(BBox::new(x, 5.0, x + 10.0, 15.0));
        let a = s.push_point(Keypoint::labeled(x + 5.0, 10.0, "grasp"));
        let b = s.push_point(Keypoint::labeled(50.0, 40.0, "goal"));
        s.translation_arrows.push(TranslationArrow { start: a, end: b });
        s
    }

    /// Numbers its subtasks; each subtask's sketch box shifts right.
    struct Counting(usize);

    impl Reasoner for Counting {
        fn reason(&mut self, ctx: &LoopContext) -> Result<ReasoningRecord, AgentError> {
            self.0 += 1;
            Ok(ReasoningRecord {
                rationale: format!("done so far: {}", ctx.completed_subtasks.len()),
                subtask: format!("subtask {}", self.0),
                sketch: sketch_at(self.0 as f64),
            })
        }
    }

    struct Failing;

    impl Reasoner for Failing {
        fn reason(&mut self, _: &LoopContext) -> Result<ReasoningRecord, AgentError> {
            Err(AgentError::new("model offline"))
        }
    }

    struct Zero;

    impl ActionPolicy for Zero {
        fn act(&mut self, ctx: &LoopContext) -> Result<ActionChunk, AgentError> {
            if ctx.current_sketch().is_none() {
                return Err(AgentError::new("no sketch"));
            }
            ActionChunk::new(vec![vec![0.0; 3]; 4], 3).map_err(|e| AgentError::new(e.to_string()))
        }
    }

    fn controller(gate: bool) -> Controller {
        Controller::new(LoopContext::new("tidy the table"), gate)
    }

    #[test]
    fn boot_begins_with_reasoning() {
        let mut c = controller(false);
        let out = c.step(LoopEvent::None, &mut Counting(0), &mut Zero).unwrap();
        assert_eq!(out.tokens, vec![ModeToken::Bor, ModeToken::Eor]);
        assert_eq!(out.state, LoopState::Executing);
        assert!(c.context().current_sketch().is_some());
        assert!(c.context().current_sketch_image().is_some());
        assert_eq!(c.context().current_subtask.as_deref(), Some("subtask 1"));
    }

    #[test]
    fn executing_without_event_acts() {
        let mut c = controller(false);
        let (mut r, mut p) = (Counting(0), Zero);
        c.step(LoopEvent::None, &mut r, &mut p).unwrap();
        let out = c.step(LoopEvent::None, &mut r, &mut p).unwrap();
        assert_eq!(out.tokens, vec![ModeToken::Boa]);
        assert_eq!(out.chunk.unwrap().horizon(), 4);
        assert_eq!(c.state(), LoopState::Executing);
    }

    #[test]
    fn subtask_complete_grows_history_and_replaces_sketch() {
        let mut c = controller(false);
        let (mut r, mut p) = (Counting(0), Zero);
        c.step(LoopEvent::None, &mut r, &mut p).unwrap();
        c.step(LoopEvent::None, &mut r, &mut p).unwrap();
        let before = c.context().current_sketch().cloned();
        let out = c.step(LoopEvent::SubtaskComplete, &mut r, &mut p).unwrap();
        assert_eq!(out.tokens, vec![ModeToken::Bor, ModeToken::Eor]);
        assert_eq!(c.context().completed_subtasks, vec!["subtask 1".to_string()]);
        assert_ne!(c.context().current_sketch().cloned(), before);
    }

    #[test]
    fn scene_change_does_not_complete_subtask() {
        let mut c = controller(false);
        let (mut r, mut p) = (Counting(0), Zero);
        c.step(LoopEvent::None, &mut r, &mut p).unwrap();
        c.step(LoopEvent::SceneChange, &mut r, &mut p).unwrap();
        assert!(c.context().completed_subtasks.is_empty());
        assert_eq!(c.context().current_subtask.as_deref(), Some("subtask 2"));
    }

    #[test]
    fn golden_token_trace() {
        let mut c = controller(false);
        let (mut r, mut p) = (Counting(0), Zero);
        let script = [
            LoopEvent::None,
            LoopEvent::None,
            LoopEvent::None,
            LoopEvent::SubtaskComplete,
            LoopEvent::None,
            LoopEvent::SceneChange,
            LoopEvent::None,
        ];
        for (t, e) in script.into_iter().enumerate() {
            c.set_clock(t as u64);
            c.step(e, &mut r, &mut p).unwrap();
        }
        use ModeToken::*;
        let trace = token_trace(c.audit_log());
        let expected = [
            (0, Bor),
            (0, Eor),
            (1, Boa),
            (2, Boa),
            (3, Bor),
            (3, Eor),
            (4, Boa),
            (5, Bor),
            (5, Eor),
            (6, Boa),
        ];
        assert_eq!(trace, expected);
        let tokens: Vec<_> = trace.iter().map(|(_, t)| *t).collect();
        check_token_grammar(&tokens).unwrap();
        check_event_response(c.audit_log()).unwrap();
    }

    #[test]
    fn sketch_constant_between_boas() {
        let mut c = controller(false);
        let (mut r, mut p) = (Counting(0), Zero);
        c.step(LoopEvent::None, &mut r, &mut p).unwrap();
        let digests: Vec<_> = (0..5)
            .map(|_| {
                c.step(LoopEvent::None, &mut r, &mut p).unwrap();
                c.audit_log().last().unwrap().sketch_digest.clone()
            })
            .collect();
        assert!(digests.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn reasoner_failure_faults() {
        let mut c = controller(false);
        let out = c.step(LoopEvent::None, &mut Failing, &mut Zero).unwrap();
        assert_eq!(out.state, LoopState::Faulted);
        assert!(out.fault.unwrap().contains("model offline"));
        assert!(matches!(
            c.step(LoopEvent::None, &mut Counting(0), &mut Zero),
            Err(LoopError::Faulted(_))
        ));
    }

    #[test]
    fn gate_blocks_actions_until_approved() {
        let mut c = controller(true);
        let (mut r, mut p) = (Counting(0), Zero);
        let out = c.step(LoopEvent::None, &mut r, &mut p).unwrap();
        assert_eq!(out.state, LoopState::AwaitingApproval);
        let blocked = c.step(LoopEvent::None, &mut r, &mut p).unwrap();
        assert!(blocked.tokens.is_empty() && blocked.chunk.is_none());
        c.approve().unwrap();
        let out = c.step(LoopEvent::None, &mut r, &mut p).unwrap();
        assert_eq!(out.tokens, vec![ModeToken::Boa]);
        assert!(c.approve().is_err());
    }

    #[test]
    fn identical_intervention_changes_only_audit() {
        let mut c = controller(false);
        let (mut r, mut p) = (Counting(0), Zero);
        c.step(LoopEvent::None, &mut r, &mut p).unwrap();
        let ctx_before = c.context().clone();
        let n = c.audit_log().len();
        let same = ctx_before.current_sketch().unwrap().clone();
        c.apply_intervention(same, None, Some("tester")).unwrap();
        assert_eq!(c.context(), &ctx_before);
        assert_eq!(c.audit_log().len(), n + 1);
    }

    #[test]
    fn moved_box_changes_rendered_digest() {
        use crate::render::image_digest;
        let mut c = controller(false);
        let (mut r, mut p) = (Counting(0), Zero);
        c.step(LoopEvent::None, &mut r, &mut p).unwrap();
        let before = image_digest(c.context().current_sketch_image().unwrap());
        let mut edited = c.context().current_sketch().unwrap().clone();
        edited.boxes[0] = BBox::new(31.0, 5.0, 41.0, 15.0);
        c.apply_intervention(edited, Some("grab the other one".into()), None)
            .unwrap();
        let after = image_digest(c.context().current_sketch_image().unwrap());
        assert_ne!(before, after);
    }

    #[test]
    fn intervention_rules() {
        let mut c = controller(false);
        // Boot: nothing to edit yet
        assert!(matches!(
            c.apply_intervention(sketch_at(1.0), None, None),
            Err(LoopError::NotEditable(LoopState::Boot))
        ));
        let (mut r, mut p) = (Counting(0), Zero);
        c.step(LoopEvent::None, &mut r, &mut p).unwrap();
        let mut bad = sketch_at(1.0);
        bad.points[0].x = 1000.0;
        assert!(matches!(
            c.apply_intervention(bad.clone(), None, None),
            Err(LoopError::Rejected(_))
        ));
        let other_frame = VisualSketch::empty(FrameMeta::new("ego", 32, 32));
        assert!(matches!(
            c.apply_intervention(other_frame, None, None),
            Err(LoopError::FrameMismatch { .. })
        ));
        // an invalid sketch in a human_intervention event leaves the state alone
        let state = c.state();
        let iv = Intervention {
            sketch: Some(bad),
            directive: None,
        };
        assert!(c
            .step(LoopEvent::HumanIntervention(iv), &mut r, &mut p)
            .is_err());
        assert_eq!(c.state(), state);
        assert!(Intervention::new(None, Some("  ".into())).is_err());
    }

    #[test]
    fn intervention_during_deliberation_is_rejected() {
        let mut c = controller(false);
        c.state = LoopState::Deliberating;
        assert!(matches!(
            c.apply_intervention(sketch_at(1.0), None, None),
            Err(LoopError::NotEditable(LoopState::Deliberating))
        ));
    }

    #[test]
    fn human_event_sketch_overrides_reasoner() {
        let mut c = controller(false);
        let (mut r, mut p) = (Counting(0), Zero);
        c.step(LoopEvent::None, &mut r, &mut p).unwrap();
        let edit = sketch_at(40.0);
        let iv = Intervention::new(Some(edit.clone()), Some("use the left cup".into())).unwrap();
        let out = c.step(LoopEvent::HumanIntervention(iv), &mut r, &mut p).unwrap();
        assert_eq!(out.tokens, vec![ModeToken::Bor, ModeToken::Eor]);
        assert_eq!(c.context().current_sketch(), Some(&edit));
        assert!(c.context().pending_intervention.is_none());
    }

    #[test]
    fn grammar_checker() {
        use ModeToken::*;
        assert!(check_token_grammar(&[]).is_ok());
        assert!(check_token_grammar(&[Bor, Eor, Boa, Boa, Bor, Eor, Bor, Eor, Boa]).is_ok());
        assert_eq!(check_token_grammar(&[Boa]), Err(GrammarViolation::FirstNotBor));
        assert!(check_token_grammar(&[Bor, Boa]).is_err());
        assert!(check_token_grammar(&[Bor, Eor, Eor]).is_err());
        assert_eq!(
            check_token_grammar(&[Bor, Eor, Bor]),
            Err(GrammarViolation::UnterminatedDeliberation)
        );
    }

    #[test]
    fn unanswered_event_is_detected() {
        let mut log = Vec::new();
        let mut rec = |token: Option<ModeToken>, event: Option<EventKind>| {
            let mut r = AuditRecord::new(0, LoopState::Executing);
            r.token = token;
            r.event = event;
            log.push(r);
        };
        rec(Some(ModeToken::Bor), None);
        rec(Some(ModeToken::Eor), None);
        rec(Some(ModeToken::Boa), None);
        rec(None, Some(EventKind::SubtaskComplete));
        rec(Some(ModeToken::Boa), None);
        assert!(matches!(
            check_event_response(&log),
            Err(GrammarViolation::UnansweredEvent { .. })
        ));
    }

    #[test]
    fn replay_components() {
        let rec = ReasoningRecord {
            rationale: "r".into(),
            subtask: "s".into(),
            sketch: sketch_at(2.0),
        };
        let mut r = ReplayReasoner::new([rec.clone()]);
        let ctx = LoopContext::new("x");
        assert_eq!(r.reason(&ctx).unwrap(), rec);
        assert!(r.reason(&ctx).is_err());
        let chunk = ActionChunk::new(vec![vec![1.0, 2.0]], 2).unwrap();
        let mut p = ReplayPolicy::new([chunk.clone()]);
        assert_eq!(p.act(&ctx).unwrap(), chunk);
        assert!(ActionChunk::new(vec![], 2).is_err());
        assert!(ActionChunk::new(vec![vec![1.0]], 2).is_err());
    }

    #[test]
    fn reasoning_record_serializes_canonical_sketch() {
        let rec = ReasoningRecord {
            rationale: "say \"hi\"".into(),
            subtask: "move".into(),
            sketch: VisualSketch::empty(frame()),
        };
        let line = rec.to_record();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["subtask"], "move");
        assert_eq!(v["sketch"]["frame"]["w"], 64);
    }
}
