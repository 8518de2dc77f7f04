//! Scripted reasoners that read the simulator state directly.

use crate::control::{AgentError, LoopContext, ReasoningRecord};
use crate::sketch::{Axis, Keypoint, RotationArrow, Spin, TranslationArrow, VisualSketch};

use super::task::{Subtask, TaskSpec};
use super::world::{Camera, SceneState};

/// Reasoner with privileged access to the world.
pub trait SceneReasoner: Send {
    fn reason(
        &mut self,
        scene: &SceneState,
        task: &TaskSpec,
        camera: &Camera,
        ctx: &LoopContext,
    ) -> Result<ReasoningRecord, AgentError>;
}

/// Sketch for one subtask in the given scene: the target's box, a grasp
/// point on it, the goal spot and an arrow between them. Pouring adds a
/// clockwise tilt about the image x axis at the goal.
pub fn subtask_sketch(
    subtask: &Subtask,
    scene: &SceneState,
    camera: &Camera,
) -> Result<VisualSketch, AgentError> {
    let rel = &subtask.relation;
    let target = scene
        .object(rel.object())
        .ok_or_else(|| AgentError::new(format!("object #{} is not in the scene", rel.object())))?;
    let goal = rel
        .goal(scene)
        .ok_or_else(|| AgentError::new("goal anchor is not in the scene"))?;
    let mut s = VisualSketch::empty(camera.frame.clone()).with_box(camera.object_box(target));
    let grasp = s.push_point(camera.keypoint(target.position, "grasp"));
    let place = s.push_point(camera.keypoint(goal, "goal"));
    s.translation_arrows.push(TranslationArrow {
        start: grasp,
        end: place,
    });
    if rel.needs_rotation() {
        s.rotation_arrows.push(RotationArrow {
            center: place,
            axis: Axis::X,
            dir: Spin::Cw,
        });
    }
    Ok(s)
}

fn rationale(task: &TaskSpec, index: usize, scene: &SceneState, sketch: &VisualSketch) -> String {
    let subtask = &task.plan[index];
    let name = scene
        .object(subtask.relation.object())
        .map(|o| o.name())
        .unwrap_or_default();
    let done = task.satisfied_count(scene);
    let mut text = format!(
        "{done} of {} subtasks hold. Next: {}.",
        task.plan.len(),
        subtask.text
    );
    if let Some((g, p)) = sketch.primary_arrow() {
        text.push_str(&format!(
            " The {name} is at ({:.0}, {:.0}); move it to ({:.0}, {:.0}).",
            g.x, g.y, p.x, p.y
        ));
    }
    text
}

fn record_for(
    task: &TaskSpec,
    index: usize,
    scene: &SceneState,
    camera: &Camera,
) -> Result<ReasoningRecord, AgentError> {
    let subtask = &task.plan[index];
    let sketch = subtask_sketch(subtask, scene, camera)?;
    Ok(ReasoningRecord {
        rationale: rationale(task, index, scene, &sketch),
        subtask: subtask.text.clone(),
        sketch,
    })
}

/// Ground-truth reasoning for a scene: the first plan step that does not hold.
pub fn oracle_reason(
    scene: &SceneState,
    task: &TaskSpec,
    camera: &Camera,
) -> Result<ReasoningRecord, AgentError> {
    let (i, _) = task
        .next_subtask(scene)
        .ok_or_else(|| AgentError::new("no subtask remains"))?;
    record_for(task, i, scene, camera)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleReasoner;

impl SceneReasoner for OracleReasoner {
    fn reason(
        &mut self,
        scene: &SceneState,
        task: &TaskSpec,
        camera: &Camera,
        _ctx: &LoopContext,
    ) -> Result<ReasoningRecord, AgentError> {
        oracle_reason(scene, task, camera)
    }
}

/// Correct subtask, but the goal point is displaced by `offset_px` along x
/// (toward the image center, so it stays in frame).
#[derive(Debug, Clone, Copy)]
pub struct GoalOffsetReasoner {
    pub offset_px: f64,
}

impl Default for GoalOffsetReasoner {
    fn default() -> Self {
        Self { offset_px: 50.0 }
    }
}

impl SceneReasoner for GoalOffsetReasoner {
    fn reason(
        &mut self,
        scene: &SceneState,
        task: &TaskSpec,
        camera: &Camera,
        _ctx: &LoopContext,
    ) -> Result<ReasoningRecord, AgentError> {
        let mut r = oracle_reason(scene, task, camera)?;
        let half = camera.frame.width as f64 / 2.0;
        if let Some(goal) = r.sketch.translation_arrows.first().map(|a| a.end) {
            let p = &mut r.sketch.points[goal];
            p.x += if p.x < half { self.offset_px } else { -self.offset_px };
        }
        Ok(r)
    }
}

/// Skips ahead: works on the second unfinished plan step while one exists.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReorderReasoner;

impl SceneReasoner for ReorderReasoner {
    fn reason(
        &mut self,
        scene: &SceneState,
        task: &TaskSpec,
        camera: &Camera,
        _ctx: &LoopContext,
    ) -> Result<ReasoningRecord, AgentError> {
        let open: Vec<usize> = (0..task.plan.len())
            .filter(|&i| !task.plan[i].relation.is_satisfied(scene))
            .collect();
        let i = *open
            .get(1)
            .or(open.first())
            .ok_or_else(|| AgentError::new("no subtask remains"))?;
        record_for(task, i, scene, camera)
    }
}

/// Largest distance between corresponding keypoints, or `None` when the
/// point sets do not line up.
pub fn max_point_error(a: &VisualSketch, b: &VisualSketch) -> Option<f64> {
    if a.points.len() != b.points.len() {
        return None;
    }
    Some(
        a.points
            .iter()
            .zip(&b.points)
            .map(|(p, q): (&Keypoint, &Keypoint)| p.distance(q))
            .fold(0.0, f64::max),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::task::{setup, TaskKind};
    use crate::sketch::validate_sketch;

    #[test]
    fn oracle_sketches_are_valid_for_all_tasks() {
        for kind in TaskKind::ALL {
            for seed in 0..50 {
                let (spec, scene) = setup(kind, seed).unwrap();
                let cam = Camera::tabletop(&scene.table);
                let r = oracle_reason(&scene, &spec, &cam).unwrap();
                assert!(validate_sketch(&r.sketch).is_ok());
                assert_eq!(r.subtask, spec.plan[0].text);
            }
        }
    }

    #[test]
    fn left_goal_is_left_of_reference() {
        for seed in 0..50 {
            let (spec, scene) = setup(TaskKind::PlaceA2bLeft, seed).unwrap();
            let cam = Camera::tabletop(&scene.table);
            let r = oracle_reason(&scene, &spec, &cam).unwrap();
            let (_, goal) = r.sketch.primary_arrow().unwrap();
            let reference = cam.world_to_pixel(scene.object(1).unwrap().position);
            assert!(goal.x < reference.0);
        }
    }

    #[test]
    fn goal_offset_moves_goal_by_fifty_pixels() {
        let (spec, scene) = setup(TaskKind::StackBlocks, 3).unwrap();
        let cam = Camera::tabletop(&scene.table);
        let ctx = LoopContext::new(spec.instruction.clone());
        let good = oracle_reason(&scene, &spec, &cam).unwrap();
        let bad = GoalOffsetReasoner::default()
            .reason(&scene, &spec, &cam, &ctx)
            .unwrap();
        assert!((max_point_error(&good.sketch, &bad.sketch).unwrap() - 50.0).abs() < 1e-9);
        assert!(validate_sketch(&bad.sketch).is_ok());
    }

    #[test]
    fn reorder_skips_first_step() {
        let (spec, scene) = setup(TaskKind::TidyTable, 0).unwrap();
        let cam = Camera::tabletop(&scene.table);
        let ctx = LoopContext::new("");
        let r = ReorderReasoner.reason(&scene, &spec, &cam, &ctx).unwrap();
        assert_eq!(r.subtask, spec.plan[1].text);
    }
}
