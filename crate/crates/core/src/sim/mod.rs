//! Tabletop simulator, scripted agents and closed-loop episodes.

mod classify;
mod episode;
mod oracle;
mod policy;
mod task;
mod world;

pub use classify::{classify_failure, FailureClass, SPATIAL_IOU_MIN, SPATIAL_POINT_MAX_PX};
pub use episode::{
    simulate_episode, AutoApprove, Episode, EpisodeConfig, EpisodeOutcome, EpisodeRunner,
    OracleCorrector, ReasoningEntry, ScheduledEvent, ScriptedEvent, Supervisor, Tick,
};
pub use oracle::{
    max_point_error, oracle_reason, subtask_sketch, GoalOffsetReasoner, OracleReasoner,
    ReorderReasoner, SceneReasoner,
};
pub use policy::{NoisyPolicy, ScriptedPolicy};
pub use task::{
    free_spot, setup, LayoutError, Relation, Subtask, TaskKind, TaskSpec, UnknownTask,
    GRIPPER_HOME, TABLE,
};
pub use world::{
    render_scene, step_physics, Camera, Color, Gripper, ObjectId, PhysicsParams, SceneState,
    Shape, SimObject, TableBounds, ACTION_DIM,
};
