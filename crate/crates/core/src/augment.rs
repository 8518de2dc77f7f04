//! Sketch perturbations used when building action-labeled training data.
//!
//! Boxes are jittered corner by corner and kept only while their IoU with the
//! original stays above `iou_min`; points are resampled uniformly (by area)
//! from a disc of radius `c` around the original. Arrows reference points by
//! index, so they follow their anchors without further work.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sketch::{iou, BBox, FrameMeta, Keypoint, VisualSketch};

/// Corner jitter is uniform in `[-JITTER_FRACTION, JITTER_FRACTION]` times the box side.
pub const JITTER_FRACTION: f64 = 0.1;
/// Default point radius as a fraction of the frame diagonal.
pub const DEFAULT_RADIUS_FRACTION: f64 = 0.02;
// After this many halvings the jitter is below f64 resolution for any
// realistic box; the identity is returned instead.
const MAX_HALVINGS: u32 = 48;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub iou_min: f64,
    /// Point jitter radius in pixels; `None` means 2% of the frame diagonal.
    pub point_radius: Option<f64>,
    pub max_rejection_iters: u32,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            iou_min: 0.8,
            point_radius: None,
            max_rejection_iters: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("iou_min must lie in (0, 1], got {0}")]
    IouMin(f64),
    #[error("point radius must be finite and >= 0, got {0}")]
    Radius(f64),
}

impl AugmentConfig {
    pub fn check(&self) -> Result<(), ConfigError> {
        if !(self.iou_min > 0.0 && self.iou_min <= 1.0) {
            return Err(ConfigError::IouMin(self.iou_min));
        }
        if let Some(c) = self.point_radius {
            if !(c.is_finite() && c >= 0.0) {
                return Err(ConfigError::Radius(c));
            }
        }
        Ok(())
    }

    pub fn radius_for(&self, frame: &FrameMeta) -> f64 {
        self.point_radius
            .unwrap_or_else(|| DEFAULT_RADIUS_FRACTION * frame.diagonal())
    }
}

fn acceptable(original: &BBox, candidate: &BBox, frame: &FrameMeta, iou_min: f64) -> bool {
    candidate.is_well_formed() && candidate.within(frame) && iou(original, candidate) >= iou_min
}

/// Returns a box inside `frame` whose IoU with `b` is at least `cfg.iou_min`.
pub fn perturb_box<R: Rng + ?Sized>(
    b: &BBox,
    frame: &FrameMeta,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> BBox {
    // the only axis-aligned box with IoU 1 is the box itself
    if cfg.iou_min >= 1.0 {
        return *b;
    }
    let mut scale = JITTER_FRACTION;
    for _ in 0..MAX_HALVINGS {
        let (mx, my) = (scale * b.width(), scale * b.height());
        for _ in 0..cfg.max_rejection_iters.max(1) {
            let candidate = BBox::new(
                b.x1 + rng.random_range(-1.0..=1.0) * mx,
                b.y1 + rng.random_range(-1.0..=1.0) * my,
                b.x2 + rng.random_range(-1.0..=1.0) * mx,
                b.y2 + rng.random_range(-1.0..=1.0) * my,
            );
            if acceptable(b, &candidate, frame, cfg.iou_min) {
                return candidate;
            }
        }
        scale *= 0.5;
    }
    *b
}

/// Uniform draw from the disc of radius `c` around `p`, restricted to the frame.
pub fn jitter_point<R: Rng + ?Sized>(
    p: &Keypoint,
    frame: &FrameMeta,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Keypoint {
    let c = cfg.radius_for(frame);
    if c <= 0.0 {
        return p.clone();
    }
    for _ in 0..cfg.max_rejection_iters.max(1) {
        let dx = rng.random_range(-c..=c);
        let dy = rng.random_range(-c..=c);
        if dx * dx + dy * dy > c * c {
            continue;
        }
        let (x, y) = (p.x + dx, p.y + dy);
        if frame.contains(x, y) {
            return Keypoint {
                x,
                y,
                label: p.label.clone(),
            };
        }
    }
    p.clone()
}

/// Perturbs every box and point of a sketch. Boxes are drawn first, in
/// order, then points, all from the same stream.
pub fn augment_sketch<R: Rng + ?Sized>(
    sketch: &VisualSketch,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> VisualSketch {
    let frame = &sketch.frame;
    VisualSketch {
        frame: frame.clone(),
        boxes: sketch
            .boxes
            .iter()
            .map(|b| perturb_box(b, frame, cfg, rng))
            .collect(),
        points: sketch
            .points
            .iter()
            .map(|p| jitter_point(p, frame, cfg, rng))
            .collect(),
        translation_arrows: sketch.translation_arrows.clone(),
        rotation_arrows: sketch.rotation_arrows.clone(),
    }
}
