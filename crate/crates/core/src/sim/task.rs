//! Task suite: scene generation and declarative goals.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::world::{Color, Gripper, ObjectId, SceneState, Shape, SimObject, TableBounds};
use crate::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    StackBlocks,
    PlaceA2bLeft,
    PlaceA2bRight,
    TidyTable,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::StackBlocks,
        TaskKind::PlaceA2bLeft,
        TaskKind::PlaceA2bRight,
        TaskKind::TidyTable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::StackBlocks => "stack_blocks",
            TaskKind::PlaceA2bLeft => "place_a2b_left",
            TaskKind::PlaceA2bRight => "place_a2b_right",
            TaskKind::TidyTable => "tidy_table",
        }
    }

    /// Inclusive bounds on the number of subtasks an instance decomposes into.
    pub fn subtask_count_range(self) -> (usize, usize) {
        match self {
            TaskKind::StackBlocks | TaskKind::TidyTable => (3, 3),
            TaskKind::PlaceA2bLeft | TaskKind::PlaceA2bRight => (1, 1),
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            TaskKind::StackBlocks => "stack blocks in a given color order",
            TaskKind::PlaceA2bLeft => "place one object to the left of another",
            TaskKind::PlaceA2bRight => "place one object to the right of another",
            TaskKind::TidyTable => "put items on the plate, then pour the teapot into the cup",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown task {0:?} (expected one of stack_blocks, place_a2b_left, place_a2b_right, tidy_table)")]
pub struct UnknownTask(pub String);

impl FromStr for TaskKind {
    type Err = UnknownTask;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownTask(s.to_string()))
    }
}

/// Goal relation of one subtask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Relation {
    /// `object` rests on `support`; the goal spot is `support + offset`.
    On {
        object: ObjectId,
        support: ObjectId,
        offset: (f64, f64),
    },
    /// `object` sits at `reference + (dx, 0)` within `tolerance`.
    Beside {
        object: ObjectId,
        reference: ObjectId,
        dx: f64,
        tolerance: f64,
    },
    /// `source` is carried to `target + offset` and tipped over `target`.
    PourInto {
        source: ObjectId,
        target: ObjectId,
        offset: (f64, f64),
    },
}

impl Relation {
    /// The object the subtask moves.
    pub fn object(&self) -> ObjectId {
        match *self {
            Relation::On { object, .. } | Relation::Beside { object, .. } => object,
            Relation::PourInto { source, .. } => source,
        }
    }

    /// World-space goal spot in the current scene.
    pub fn goal(&self, scene: &SceneState) -> Option<(f64, f64)> {
        let (anchor, off) = match *self {
            Relation::On {
                support, offset, ..
            } => (support, offset),
            Relation::Beside { reference, dx, .. } => (reference, (dx, 0.0)),
            Relation::PourInto { target, offset, .. } => (target, offset),
        };
        let p = scene.object(anchor)?.position;
        Some((p.0 + off.0, p.1 + off.1))
    }

    pub fn is_satisfied(&self, scene: &SceneState) -> bool {
        let held = |id| scene.gripper.held == Some(id);
        match *self {
            Relation::On {
                object, support, ..
            } => !held(object) && scene.supports.get(&object) == Some(&support),
            Relation::Beside {
                object, tolerance, ..
            } => match (scene.object(object), self.goal(scene)) {
                (Some(o), Some(g)) => !held(object) && o.distance_to(g) <= tolerance,
                _ => false,
            },
            Relation::PourInto { target, .. } => scene.object(target).is_some_and(|c| c.filled),
        }
    }

    pub fn needs_rotation(&self) -> bool {
        matches!(self, Relation::PourInto { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subtask {
    pub text: String,
    pub relation: Relation,
}

/// A task instance: instruction plus an ordered, declarative plan. The task
/// succeeds when every relation of the plan holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub instruction: String,
    pub plan: Vec<Subtask>,
}

impl TaskSpec {
    pub fn is_success(&self, scene: &SceneState) -> bool {
        self.plan.iter().all(|s| s.relation.is_satisfied(scene))
    }

    pub fn satisfied_count(&self, scene: &SceneState) -> usize {
        self.plan
            .iter()
            .filter(|s| s.relation.is_satisfied(scene))
            .count()
    }

    /// First subtask of the plan that does not hold yet.
    pub fn next_subtask(&self, scene: &SceneState) -> Option<(usize, &Subtask)> {
        self.plan
            .iter()
            .enumerate()
            .find(|(_, s)| !s.relation.is_satisfied(scene))
    }

    pub fn index_of(&self, text: &str) -> Option<usize> {
        self.plan.iter().position(|s| s.text == text)
    }
}

pub const TABLE: TableBounds = TableBounds {
    min: (0.0, 0.0),
    max: (80.0, 60.0),
};
pub const GRIPPER_HOME: (f64, f64) = (40.0, 4.0);
const MARGIN: f64 = 7.0;
const MIN_SPACING: f64 = 11.0;
const HOME_CLEARANCE: f64 = 12.0;
const BESIDE_GAP: f64 = 12.0;
const BESIDE_TOLERANCE: f64 = 1.5;
const PLATE_SLOT: f64 = 3.5;
const POUR_OFFSET: f64 = 6.5;

fn object(id: ObjectId, shape: Shape, color: Color) -> SimObject {
    let size = match shape {
        Shape::Block => 4.0,
        Shape::Mug | Shape::Cup => 5.0,
        Shape::Teapot => 6.0,
        Shape::Plate => 14.0,
    };
    SimObject {
        id,
        shape,
        color,
        position: (0.0, 0.0),
        size,
        filled: false,
    }
}

fn uniform_spot<R: Rng>(rng: &mut R) -> (f64, f64) {
    (
        rng.random_range(TABLE.min.0 + MARGIN..=TABLE.max.0 - MARGIN),
        rng.random_range(TABLE.min.1 + MARGIN..=TABLE.max.1 - MARGIN),
    )
}

fn far(p: (f64, f64), q: (f64, f64), d: f64) -> bool {
    (p.0 - q.0).hypot(p.1 - q.1) >= d
}

fn inside_margin(p: (f64, f64)) -> bool {
    p.0 >= TABLE.min.0 + MARGIN
        && p.0 <= TABLE.max.0 - MARGIN
        && p.1 >= TABLE.min.1 + MARGIN
        && p.1 <= TABLE.max.1 - MARGIN
}

fn spacing(a: &SimObject, b: &SimObject) -> f64 {
    MIN_SPACING.max((a.size + b.size) * 0.5 + 4.0)
}

/// Places objects one by one, uniformly over the table, rejecting spots that
/// crowd earlier objects or the gripper's home position.
fn scatter<R: Rng>(objects: &mut [SimObject], rng: &mut R) -> bool {
    for i in 0..objects.len() {
        let mut placed = false;
        for _ in 0..2000 {
            let p = uniform_spot(rng);
            let ok = far(p, GRIPPER_HOME, HOME_CLEARANCE)
                && objects[..i]
                    .iter()
                    .all(|o| far(p, o.position, spacing(o, &objects[i])));
            if ok {
                objects[i].position = p;
                placed = true;
                break;
            }
        }
        if !placed {
            return false;
        }
    }
    true
}

fn scene_of(objects: Vec<SimObject>) -> SceneState {
    SceneState {
        objects,
        gripper: Gripper {
            position: GRIPPER_HOME,
            open: true,
            held: None,
        },
        table: TABLE,
        supports: BTreeMap::new(),
    }
}

/// Goal spots must be reachable and free of bystanders.
fn goals_clear(plan: &[Subtask], scene: &SceneState) -> bool {
    plan.iter().all(|s| {
        let Some(g) = s.relation.goal(scene) else {
            return false;
        };
        let anchor = match s.relation {
            Relation::On { support, .. } => Some(support),
            Relation::Beside { reference, .. } => Some(reference),
            Relation::PourInto { target, .. } => Some(target),
        };
        inside_margin(g)
            && scene
                .objects
                .iter()
                .filter(|o| Some(o.id) != anchor && o.id != s.relation.object())
                .all(|o| far(g, o.position, (o.size * 0.5 + 5.0).max(8.0)))
    })
}

const PALETTE: [Color; 5] = [Color::Red, Color::Green, Color::Blue, Color::Yellow, Color::Purple];

fn stack_blocks() -> (TaskSpec, Vec<SimObject>) {
    // base first, then the blocks in stacking order
    let colors = [Color::Green, Color::Red, Color::Blue, Color::Yellow];
    let objects: Vec<SimObject> = colors
        .iter()
        .enumerate()
        .map(|(i, &c)| object(i as ObjectId, Shape::Block, c))
        .collect();
    let plan = (1..objects.len())
        .map(|i| Subtask {
            text: format!(
                "place the {} on the {}",
                objects[i].name(),
                objects[i - 1].name()
            ),
            relation: Relation::On {
                object: i as ObjectId,
                support: (i - 1) as ObjectId,
                offset: (0.0, 0.0),
            },
        })
        .collect();
    let spec = TaskSpec {
        kind: TaskKind::StackBlocks,
        instruction: "stack the blocks: red on green, blue on red, yellow on blue".into(),
        plan,
    };
    (spec, objects)
}

fn place_beside<R: Rng>(rng: &mut R, left: bool) -> (TaskSpec, Vec<SimObject>) {
    let shapes = [Shape::Block, Shape::Mug, Shape::Cup];
    let sa = shapes[rng.random_range(0..shapes.len())];
    let sb = shapes[rng.random_range(0..shapes.len())];
    let ca = PALETTE[rng.random_range(0..PALETTE.len())];
    let mut cb = PALETTE[rng.random_range(0..PALETTE.len())];
    if cb == ca {
        cb = PALETTE[(PALETTE.iter().position(|&c| c == ca).unwrap_or(0) + 1) % PALETTE.len()];
    }
    let mut objects = vec![object(0, sa, ca), object(1, sb, cb)];
    // distractors
    for (i, shape) in [Shape::Block, Shape::Mug].into_iter().enumerate() {
        objects.push(object(2 + i as ObjectId, shape, Color::Gray));
    }
    let side = if left { "left" } else { "right" };
    let text = format!("place the {} to the {side} of the {}", objects[0].name(), objects[1].name());
    let kind = if left {
        TaskKind::PlaceA2bLeft
    } else {
        TaskKind::PlaceA2bRight
    };
    let spec = TaskSpec {
        kind,
        instruction: text.clone(),
        plan: vec![Subtask {
            text,
            relation: Relation::Beside {
                object: 0,
                reference: 1,
                dx: if left { -BESIDE_GAP } else { BESIDE_GAP },
                tolerance: BESIDE_TOLERANCE,
            },
        }],
    };
    (spec, objects)
}

fn tidy_table() -> (TaskSpec, Vec<SimObject>) {
    let objects = vec![
        object(0, Shape::Plate, Color::Gray),
        object(1, Shape::Block, Color::Yellow),
        object(2, Shape::Mug, Color::Blue),
        object(3, Shape::Teapot, Color::White),
        object(4, Shape::Cup, Color::Red),
    ];
    let on_plate = |o: &SimObject, dx: f64| Subtask {
        text: format!("place the {} on the {}", o.name(), objects[0].name()),
        relation: Relation::On {
            object: o.id,
            support: 0,
            offset: (dx, 0.0),
        },
    };
    let plan = vec![
        on_plate(&objects[1], -PLATE_SLOT),
        on_plate(&objects[2], PLATE_SLOT),
        Subtask {
            text: format!("pour the {} into the {}", objects[3].name(), objects[4].name()),
            relation: Relation::PourInto {
                source: 3,
                target: 4,
                offset: (-POUR_OFFSET, 0.0),
            },
        },
    ];
    let spec = TaskSpec {
        kind: TaskKind::TidyTable,
        instruction: "tidy the table: block and mug onto the plate, then pour the tea".into(),
        plan,
    };
    (spec, objects)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("could not lay out {kind} for seed {seed}")]
pub struct LayoutError {
    pub kind: TaskKind,
    pub seed: u64,
}

/// Deterministic task instance and initial scene for a world seed.
pub fn setup(kind: TaskKind, seed: u64) -> Result<(TaskSpec, SceneState), LayoutError> {
    let mut rng = seeded_rng(seed ^ 0x5eed_7a5c_0000_0000 ^ kind as u64);
    let (spec, template) = match kind {
        TaskKind::StackBlocks => stack_blocks(),
        TaskKind::PlaceA2bLeft => place_beside(&mut rng, true),
        TaskKind::PlaceA2bRight => place_beside(&mut rng, false),
        TaskKind::TidyTable => tidy_table(),
    };
    for _ in 0..200 {
        let mut objects = template.clone();
        if !scatter(&mut objects, &mut rng) {
            continue;
        }
        let scene = scene_of(objects);
        if goals_clear(&spec.plan, &scene) && !spec.is_success(&scene) {
            return Ok((spec, scene));
        }
    }
    Err(LayoutError { kind, seed })
}

/// A free spot for relocating `id`: clear of other objects, goal spots and
/// the gripper.
pub fn free_spot<R: Rng>(
    scene: &SceneState,
    spec: &TaskSpec,
    id: ObjectId,
    rng: &mut R,
) -> Option<(f64, f64)> {
    let goals: Vec<(f64, f64)> = spec
        .plan
        .iter()
        .filter_map(|s| s.relation.goal(scene))
        .collect();
    let me = scene.object(id)?;
    for _ in 0..2000 {
        let p = uniform_spot(rng);
        let ok = far(p, scene.gripper.position, HOME_CLEARANCE)
            && far(p, me.position, 8.0)
            && goals.iter().all(|&g| far(p, g, MIN_SPACING))
            && scene
                .objects
                .iter()
                .filter(|o| o.id != id)
                .all(|o| far(p, o.position, spacing(o, me)));
        if ok {
            return Some(p);
        }
    }
    None
}
