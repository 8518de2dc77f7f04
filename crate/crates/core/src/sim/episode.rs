//! Closed-loop episodes: the token-gated controller driving the simulator.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{
    ActionPolicy, AgentError, AuditRecord, Controller, EventKind, Intervention, LoopContext,
    LoopError, LoopEvent, LoopState, Reasoner, ReasoningRecord, StepOutput,
};
use crate::dataset::{DemoEpisode, ObjectTrack, RotationMark};
use crate::seeded_rng;
use crate::sketch::{iou, Axis, Spin, VisualSketch};

use super::classify::{classify_failure, FailureClass};
use super::oracle::{max_point_error, oracle_reason, OracleReasoner, SceneReasoner};
use super::policy::ScriptedPolicy;
use super::task::{free_spot, setup, LayoutError, TaskKind, TaskSpec};
use super::world::{render_scene, step_physics, Camera, PhysicsParams, SceneState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Maximum number of physics steps.
    pub budget: u64,
    pub hitl_gate: bool,
    /// Gate fault: detected events are logged but never delivered to the loop.
    pub drop_events: bool,
    pub physics: PhysicsParams,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            budget: 600,
            hitl_gate: false,
            drop_events: false,
            physics: PhysicsParams::default(),
        }
    }
}

/// Externally scheduled disturbance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ScriptedEvent {
    /// Relocates the object the current subtask works on (unless it is held).
    SceneChange,
    HumanIntervention {
        #[serde(default, with = "crate::sketch::wire_opt")]
        sketch: Option<VisualSketch>,
        #[serde(default)]
        directive: Option<String>,
    },
    ErrorDetected { diagnostic: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    /// Physics step at which the event fires.
    pub t: u64,
    #[serde(flatten)]
    pub event: ScriptedEvent,
}

/// Reviews each deliberation while the approval gate is on. Returning a
/// sketch replaces the proposed one before approval.
pub trait Supervisor: Send {
    fn review(
        &mut self,
        scene: &SceneState,
        task: &TaskSpec,
        camera: &Camera,
        ctx: &LoopContext,
    ) -> Option<VisualSketch>;
}

/// Approves everything unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct AutoApprove;

impl Supervisor for AutoApprove {
    fn review(&mut self, _: &SceneState, _: &TaskSpec, _: &Camera, _: &LoopContext) -> Option<VisualSketch> {
        None
    }
}

/// Replaces sketches that stray from ground truth by more than `tolerance_px`.
#[derive(Debug, Clone, Copy)]
pub struct OracleCorrector {
    pub tolerance_px: f64,
}

impl Default for OracleCorrector {
    fn default() -> Self {
        Self { tolerance_px: 2.0 }
    }
}

impl Supervisor for OracleCorrector {
    fn review(
        &mut self,
        scene: &SceneState,
        task: &TaskSpec,
        camera: &Camera,
        ctx: &LoopContext,
    ) -> Option<VisualSketch> {
        let proposed = ctx.current_sketch()?;
        let truth = oracle_reason(scene, task, camera).ok()?.sketch;
        let boxes_ok = proposed.boxes.len() == truth.boxes.len()
            && proposed
                .boxes
                .iter()
                .zip(&truth.boxes)
                .all(|(a, b)| iou(a, b) >= 0.95);
        let points_ok = max_point_error(proposed, &truth).is_some_and(|e| e <= self.tolerance_px);
        (!(boxes_ok && points_ok)).then_some(truth)
    }
}

/// One deliberation as it happened.
#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningEntry {
    /// Physics step at which the deliberation ran.
    pub t: u64,
    pub trigger: EventKind,
    pub record: ReasoningRecord,
    /// Sketch actually handed to the policy (after any edits).
    pub executed: VisualSketch,
    pub scene: SceneState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub kind: TaskKind,
    pub seed: u64,
    pub spec: TaskSpec,
    pub camera: Camera,
    /// `scenes[0]` is the initial scene, `scenes[t + 1]` the scene after action `t`.
    pub scenes: Vec<SceneState>,
    pub actions: Vec<Vec<f64>>,
    pub reasonings: Vec<ReasoningEntry>,
    /// Steps whose action changed the gripper's open state.
    pub gripper_transitions: Vec<usize>,
    /// Steps at which a held object was twisted.
    pub rotations: Vec<(usize, Spin)>,
    pub log: Vec<AuditRecord>,
    pub success: bool,
    pub fault: Option<String>,
}

impl Episode {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn final_scene(&self) -> &SceneState {
        self.scenes.last().expect("an episode has an initial scene")
    }

    /// Audit log as line-delimited JSON.
    pub fn log_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.log {
            s.push_str(&r.to_line());
            s.push('\n');
        }
        s
    }

    /// Open/closed state after each action.
    pub fn gripper_open(&self) -> Vec<bool> {
        self.scenes[1..].iter().map(|s| s.gripper.open).collect()
    }

    pub fn to_demo(&self) -> DemoEpisode {
        let tracks = self.scenes[0]
            .objects
            .iter()
            .map(|o| ObjectTrack {
                id: o.id,
                name: o.name(),
                half_extent: self.camera.half_extent(o),
                centroids: self.scenes[1..]
                    .iter()
                    .map(|s| {
                        let p = s.object(o.id).map(|x| x.position).unwrap_or(o.position);
                        self.camera.world_to_pixel(p)
                    })
                    .collect(),
            })
            .collect();
        DemoEpisode {
            id: format!("{}-{}", self.kind, self.seed),
            instruction: self.spec.instruction.clone(),
            frame: self.camera.frame.clone(),
            gripper_open: self.gripper_open(),
            tracks,
            actions: self.actions.clone(),
            rotations: self
                .rotations
                .iter()
                .map(|&(t, dir)| RotationMark {
                    t,
                    axis: Axis::X,
                    dir,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub task: TaskKind,
    pub seed: u64,
    pub success: bool,
    pub steps: usize,
    pub subtasks_completed: usize,
    pub subtasks_total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_class: Option<FailureClass>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tick {
    /// The loop advanced; `output` is what the controller produced.
    Advanced(Box<StepOutput>),
    /// Waiting for approval.
    Blocked,
    Finished,
}

struct Grounded<'a> {
    inner: &'a mut dyn SceneReasoner,
    scene: &'a SceneState,
    task: &'a TaskSpec,
    camera: &'a Camera,
}

impl Reasoner for Grounded<'_> {
    fn reason(&mut self, ctx: &LoopContext) -> Result<ReasoningRecord, AgentError> {
        self.inner.reason(self.scene, self.task, self.camera, ctx)
    }
}

const EGO: &str = "ego";

/// Steppable episode. `tick` advances by one controller decision; a chunk of
/// actions is executed inside the tick that produced it.
pub struct EpisodeRunner {
    cfg: EpisodeConfig,
    scene: SceneState,
    controller: Controller,
    reasoner: Box<dyn SceneReasoner>,
    policy: Box<dyn ActionPolicy + Send>,
    supervisor: Option<Box<dyn Supervisor>>,
    script: VecDeque<ScheduledEvent>,
    pending: VecDeque<LoopEvent>,
    rng: ChaCha8Rng,
    episode: Episode,
    finished: bool,
}

impl EpisodeRunner {
    /// Oracle reasoner, scripted policy, no events.
    pub fn new(kind: TaskKind, seed: u64, cfg: EpisodeConfig) -> Result<Self, LayoutError> {
        let (spec, scene) = setup(kind, seed)?;
        let camera = Camera::tabletop(&scene.table);
        let mut policy = ScriptedPolicy::new(camera.clone());
        policy.max_step = cfg.physics.max_step;
        let ctx = LoopContext::new(spec.instruction.clone());
        let controller = Controller::new(ctx, cfg.hitl_gate);
        Ok(Self {
            scene: scene.clone(),
            controller,
            reasoner: Box::new(OracleReasoner),
            policy: Box::new(policy),
            supervisor: None,
            script: VecDeque::new(),
            pending: VecDeque::new(),
            rng: seeded_rng(seed ^ 0xe7e7_0000_0000_0001),
            episode: Episode {
                kind,
                seed,
                spec,
                camera,
                scenes: vec![scene],
                actions: Vec::new(),
                reasonings: Vec::new(),
                gripper_transitions: Vec::new(),
                rotations: Vec::new(),
                log: Vec::new(),
                success: false,
                fault: None,
            },
            cfg,
            finished: false,
        })
    }

    pub fn with_reasoner(mut self, r: impl SceneReasoner + 'static) -> Self {
        self.reasoner = Box::new(r);
        self
    }

    pub fn with_policy(mut self, p: impl ActionPolicy + Send + 'static) -> Self {
        self.policy = Box::new(p);
        self
    }

    pub fn with_supervisor(mut self, s: impl Supervisor + 'static) -> Self {
        self.supervisor = Some(Box::new(s));
        self
    }

    pub fn with_events(mut self, events: impl IntoIterator<Item = ScheduledEvent>) -> Self {
        let mut all: Vec<ScheduledEvent> = self.script.drain(..).chain(events).collect();
        all.sort_by_key(|e| e.t);
        self.script = all.into();
        self
    }

    pub fn scene(&self) -> &SceneState {
        &self.scene
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.episode.spec
    }

    pub fn camera(&self) -> &Camera {
        &self.episode.camera
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn episode(&self) -> &Episode {
        &self.episode
    }

    pub fn step_count(&self) -> u64 {
        self.episode.actions.len() as u64
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn render(&self) -> crate::render::RasterImage {
        render_scene(&self.scene, &self.episode.camera)
    }

    /// Queues an operator intervention event for the next tick.
    pub fn inject(&mut self, event: LoopEvent) {
        self.pending.push_back(event);
    }

    /// Schedules a disturbance to fire at the start of the next tick.
    pub fn schedule_now(&mut self, event: ScriptedEvent) {
        let t = self.step_count();
        let at = self.script.iter().position(|e| e.t > t).unwrap_or(self.script.len());
        self.script.insert(at, ScheduledEvent { t, event });
    }

    /// Whether an event will be delivered on the next tick.
    pub fn has_pending_events(&self) -> bool {
        !self.pending.is_empty() || self.script.front().is_some_and(|e| e.t <= self.step_count())
    }

    pub fn approve(&mut self) -> Result<(), LoopError> {
        self.controller.set_clock(self.step_count());
        self.controller.approve()?;
        self.sync_log();
        Ok(())
    }

    /// Direct sketch edit on the running loop.
    pub fn edit_sketch(
        &mut self,
        sketch: VisualSketch,
        directive: Option<String>,
        editor: Option<&str>,
    ) -> Result<(), LoopError> {
        if self.finished {
            return Err(LoopError::NotEditable(self.controller.state()));
        }
        self.controller.set_clock(self.step_count());
        self.controller
            .apply_intervention(sketch.clone(), directive, editor)?;
        if let Some(last) = self.episode.reasonings.last_mut() {
            last.executed = sketch;
        }
        self.sync_log();
        Ok(())
    }

    fn sync_log(&mut self) {
        self.episode.log = self.controller.audit_log().to_vec();
    }

    fn note(&mut self, text: String) {
        let mut r = AuditRecord::new(0, self.controller.state());
        r.note = Some(text);
        self.controller.append_audit(r);
    }

    fn finish(&mut self, success: bool, fault: Option<String>) {
        self.finished = true;
        self.episode.success = success;
        self.note(match (&fault, success) {
            (Some(f), _) => format!("episode ended: fault: {f}"),
            (None, true) => "episode ended: success".to_string(),
            (None, false) => "episode ended: step budget exhausted".to_string(),
        });
        self.episode.fault = fault;
        self.sync_log();
    }

    fn fire_due_events(&mut self) {
        let now = self.step_count();
        while self.script.front().is_some_and(|e| e.t <= now) {
            let Some(ev) = self.script.pop_front() else { break };
            match ev.event {
                ScriptedEvent::SceneChange => {
                    // the loop re-plans even when nothing could be moved
                    self.relocate_current_target();
                    self.pending.push_back(LoopEvent::SceneChange);
                }
                ScriptedEvent::HumanIntervention { sketch, directive } => {
                    match Intervention::new(sketch, directive) {
                        Ok(iv) => self.pending.push_back(LoopEvent::HumanIntervention(iv)),
                        Err(e) => self.note(format!("scripted intervention ignored: {e}")),
                    }
                }
                ScriptedEvent::ErrorDetected { diagnostic } => {
                    self.pending.push_back(LoopEvent::ErrorDetected { diagnostic })
                }
            }
        }
    }

    fn relocate_current_target(&mut self) -> bool {
        let spec = &self.episode.spec;
        let Some((_, sub)) = spec.next_subtask(&self.scene) else {
            return false;
        };
        let id = sub.relation.object();
        let movable = self.scene.gripper.held != Some(id)
            && !self.scene.is_supporting(id)
            && !self.scene.supports.contains_key(&id);
        if !movable {
            self.note(format!("scene change skipped: object #{id} is not free"));
            return false;
        }
        let Some(p) = free_spot(&self.scene, spec, id, &mut self.rng) else {
            self.note("scene change skipped: no free spot".into());
            return false;
        };
        if let Some(o) = self.scene.object_mut(id) {
            o.position = p;
        }
        // the relocation is visible in the recorded trajectory from the next step on
        if let Some(last) = self.episode.scenes.last_mut() {
            if self.episode.actions.is_empty() {
                *last = self.scene.clone();
            }
        }
        true
    }

    /// Advances the loop by one controller decision.
    pub fn tick(&mut self) -> Tick {
        if self.finished {
            return Tick::Finished;
        }
        if self.step_count() >= self.cfg.budget {
            self.finish(false, None);
            return Tick::Finished;
        }
        self.fire_due_events();
        // boot deliberation answers no event; anything queued waits for the next tick
        let mut event = if self.controller.state() == LoopState::Boot {
            LoopEvent::None
        } else {
            self.pending.pop_front().unwrap_or(LoopEvent::None)
        };
        let t = self.step_count();
        self.controller.set_clock(t);

        if self.cfg.drop_events
            && matches!(event.kind(), EventKind::SubtaskComplete | EventKind::ErrorDetected | EventKind::SceneChange)
        {
            let mut r = AuditRecord::new(0, self.controller.state());
            r.event = Some(event.kind());
            r.note = Some("detected".into());
            self.controller.append_audit(r);
            event = LoopEvent::None;
        }

        self.controller.set_proprio(self.scene.proprio());
        let trigger = event.kind();
        let deliberating = self.controller.state() == LoopState::Boot || trigger.triggers_reasoning();
        if deliberating {
            self.controller
                .observe(EGO, render_scene(&self.scene, &self.episode.camera));
        }

        let mut grounded = Grounded {
            inner: self.reasoner.as_mut(),
            scene: &self.scene,
            task: &self.episode.spec,
            camera: &self.episode.camera,
        };
        let result = self.controller.step(event, &mut grounded, self.policy.as_mut());
        let out = match result {
            Ok(out) => out,
            Err(LoopError::Rejected(report)) => {
                self.note(format!("intervention rejected: {report}"));
                self.sync_log();
                return Tick::Advanced(Box::new(StepOutput {
                    tokens: vec![],
                    reasoning: None,
                    chunk: None,
                    state: self.controller.state(),
                    fault: None,
                }));
            }
            Err(e) => {
                self.finish(false, Some(e.to_string()));
                return Tick::Finished;
            }
        };
        if let Some(f) = &out.fault {
            self.finish(false, Some(f.clone()));
            return Tick::Finished;
        }

        if let Some(record) = &out.reasoning {
            let executed = self
                .controller
                .context()
                .current_sketch()
                .cloned()
                .unwrap_or_else(|| record.sketch.clone());
            self.episode.reasonings.push(ReasoningEntry {
                t,
                trigger,
                record: record.clone(),
                executed,
                scene: self.scene.clone(),
            });
            if self.controller.state() == LoopState::AwaitingApproval {
                let review = self.supervisor.as_mut().map(|sup| {
                    sup.review(
                        &self.scene,
                        &self.episode.spec,
                        &self.episode.camera,
                        self.controller.context(),
                    )
                });
                if let Some(edit) = review {
                    if let Some(sketch) = edit {
                        if let Err(e) = self.edit_sketch(sketch, None, Some("supervisor")) {
                            self.note(format!("supervisor edit rejected: {e}"));
                        }
                    }
                    let _ = self.controller.approve();
                }
            }
        }

        if let Some(chunk) = &out.chunk {
            self.execute(chunk.actions());
        }
        self.sync_log();
        if self.finished {
            return Tick::Finished;
        }
        if out.tokens.is_empty() && self.controller.state() == LoopState::AwaitingApproval {
            return Tick::Blocked;
        }
        Tick::Advanced(Box::new(out))
    }

    fn execute(&mut self, actions: &[Vec<f64>]) {
        for a in actions {
            if self.step_count() >= self.cfg.budget {
                return;
            }
            let prev = self.scene.clone();
            self.scene = step_physics(&prev, a, &self.cfg.physics);
            let t = self.episode.actions.len();
            self.episode.actions.push(a.clone());
            self.episode.scenes.push(self.scene.clone());
            if prev.gripper.open != self.scene.gripper.open {
                self.episode.gripper_transitions.push(t);
            }
            let twist = a.get(3).copied().unwrap_or(0.0);
            if twist.abs() > 0.5 && prev.gripper.held.is_some() {
                let dir = if twist > 0.0 { Spin::Cw } else { Spin::Ccw };
                self.episode.rotations.push((t, dir));
            }
            if self.episode.spec.is_success(&self.scene) {
                self.controller.set_clock(self.step_count());
                self.finish(true, None);
                return;
            }
            let released = prev.gripper.held.is_some() && self.scene.gripper.held.is_none();
            let empty_grasp =
                prev.gripper.open && !self.scene.gripper.open && self.scene.gripper.held.is_none();
            if released {
                self.pending.push_back(LoopEvent::SubtaskComplete);
                return;
            }
            if empty_grasp {
                self.pending.push_back(LoopEvent::ErrorDetected {
                    diagnostic: "gripper closed on nothing".into(),
                });
                return;
            }
            if self.script.front().is_some_and(|e| e.t <= self.step_count()) {
                return;
            }
        }
    }

    /// Runs to completion. With the gate on and no supervisor, deliberations
    /// are approved unchanged.
    pub fn run(mut self) -> (Episode, EpisodeOutcome) {
        if self.cfg.hitl_gate && self.supervisor.is_none() {
            self.supervisor = Some(Box::new(AutoApprove));
        }
        // every tick either executes at least one action or deliberates, and
        // deliberations are bounded by events, so this terminates; the cap
        // is a guard against a stuck loop
        let cap = self.cfg.budget.saturating_mul(4) + 16;
        let mut ticks = 0;
        while !self.finished {
            if matches!(self.tick(), Tick::Blocked) || ticks > cap {
                self.finish(false, Some("loop stalled".into()));
            }
            ticks += 1;
        }
        self.into_result()
    }

    pub fn into_result(self) -> (Episode, EpisodeOutcome) {
        let ep = self.episode;
        let outcome = EpisodeOutcome {
            task: ep.kind,
            seed: ep.seed,
            success: ep.success,
            steps: ep.steps(),
            subtasks_completed: ep.spec.satisfied_count(ep.final_scene()),
            subtasks_total: ep.spec.plan.len(),
            fault: ep.fault.clone(),
            failure_class: classify_failure(&ep),
        };
        (ep, outcome)
    }
}

/// One closed-loop episode with the oracle reasoner and the scripted policy.
pub fn simulate_episode(
    kind: TaskKind,
    seed: u64,
    events: &[ScheduledEvent],
    cfg: &EpisodeConfig,
) -> Result<(Episode, EpisodeOutcome), LayoutError> {
    Ok(EpisodeRunner::new(kind, seed, cfg.clone())?
        .with_events(events.iter().cloned())
        .run())
}
