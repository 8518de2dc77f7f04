//! Post-hoc attribution of a failed episode to one failure class.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::control::{check_event_response, check_token_grammar, token_trace, GrammarViolation, ModeToken};
use crate::sketch::iou;

use super::episode::Episode;
use super::oracle::{max_point_error, oracle_reason};

/// Box overlap below which an executed sketch counts as spatially wrong.
pub const SPATIAL_IOU_MIN: f64 = 0.5;
/// Keypoint error above which an executed sketch counts as spatially wrong.
pub const SPATIAL_POINT_MAX_PX: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureClass {
    SpatialSketch,
    ActionExecution,
    TemporalReasoning,
    ModeSwitching,
}

impl FailureClass {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureClass::SpatialSketch => "spatial_sketch",
            FailureClass::ActionExecution => "action_execution",
            FailureClass::TemporalReasoning => "temporal_reasoning",
            FailureClass::ModeSwitching => "mode_switching",
        }
    }
}

impl fmt::Display for FailureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn mode_switching(ep: &Episode) -> bool {
    let tokens: Vec<ModeToken> = token_trace(&ep.log).into_iter().map(|(_, t)| t).collect();
    match check_token_grammar(&tokens) {
        Ok(()) => {}
        // a reasoner fault legitimately leaves a dangling BOR
        Err(GrammarViolation::UnterminatedDeliberation) if ep.fault.is_some() => {}
        Err(_) => return true,
    }
    check_event_response(&ep.log).is_err()
}

/// `None` for successful episodes. Checks run in a fixed order and the first
/// hit wins: mode switching, then subtask order, then sketch geometry;
/// anything left is an execution failure.
pub fn classify_failure(ep: &Episode) -> Option<FailureClass> {
    if ep.success {
        return None;
    }
    if mode_switching(ep) {
        return Some(FailureClass::ModeSwitching);
    }
    let mut truths = Vec::with_capacity(ep.reasonings.len());
    for r in &ep.reasonings {
        match oracle_reason(&r.scene, &ep.spec, &ep.camera) {
            Ok(truth) if truth.subtask == r.record.subtask => truths.push(truth),
            _ => return Some(FailureClass::TemporalReasoning),
        }
    }
    for (r, truth) in ep.reasonings.iter().zip(&truths) {
        let s = &r.executed;
        let boxes_off = s.boxes.len() != truth.sketch.boxes.len()
            || s
                .boxes
                .iter()
                .zip(&truth.sketch.boxes)
                .any(|(a, b)| iou(a, b) < SPATIAL_IOU_MIN);
        let points_off = max_point_error(s, &truth.sketch).is_none_or(|e| e > SPATIAL_POINT_MAX_PX);
        if boxes_off || points_off {
            return Some(FailureClass::SpatialSketch);
        }
    }
    Some(FailureClass::ActionExecution)
}
