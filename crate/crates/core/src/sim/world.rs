//! 2D tabletop world: objects, a point gripper, kinematic stepping and a
//! top-down camera.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::render::{RasterImage, Rgb};
use crate::sketch::{BBox, FrameMeta, Keypoint};

pub type ObjectId = u32;

/// Action vector layout: `[dx_cm, dy_cm, grip, twist]`.
///
/// `grip > 0.5` closes, `grip < -0.5` opens, anything else leaves the gripper
/// alone. `twist` is a signed rotation request (+1 clockwise, -1
/// counter-clockwise) applied to the held object.
pub const ACTION_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Block,
    Mug,
    Cup,
    Plate,
    Teapot,
}

impl Shape {
    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Block => "block",
            Shape::Mug => "mug",
            Shape::Cup => "cup",
            Shape::Plate => "plate",
            Shape::Teapot => "teapot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    White,
    Gray,
    Purple,
}

impl Color {
    pub fn as_str(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::White => "white",
            Color::Gray => "gray",
            Color::Purple => "purple",
        }
    }

    pub fn rgb(self) -> Rgb {
        Rgb(match self {
            Color::Red => [200, 40, 40],
            Color::Green => [40, 160, 60],
            Color::Blue => [40, 70, 200],
            Color::Yellow => [230, 200, 40],
            Color::White => [245, 245, 240],
            Color::Gray => [150, 150, 150],
            Color::Purple => [130, 60, 160],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    pub id: ObjectId,
    pub shape: Shape,
    pub color: Color,
    /// Center in world centimeters.
    pub position: (f64, f64),
    /// Footprint side (or diameter) in centimeters.
    pub size: f64,
    /// Set on a cup once something has been poured into it.
    pub filled: bool,
}

impl SimObject {
    pub fn name(&self) -> String {
        format!("{} {}", self.color.as_str(), self.shape.as_str())
    }

    pub fn distance_to(&self, p: (f64, f64)) -> f64 {
        (self.position.0 - p.0).hypot(self.position.1 - p.1)
    }
}

impl fmt::Display for SimObject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.name(), self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gripper {
    pub position: (f64, f64),
    pub open: bool,
    pub held: Option<ObjectId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableBounds {
    pub min: (f64, f64),
    pub max: (f64, f64),
}

impl TableBounds {
    pub fn contains(&self, p: (f64, f64)) -> bool {
        p.0 >= self.min.0 && p.0 <= self.max.0 && p.1 >= self.min.1 && p.1 <= self.max.1
    }

    pub fn clamp(&self, p: (f64, f64)) -> (f64, f64) {
        (
            p.0.clamp(self.min.0, self.max.0),
            p.1.clamp(self.min.1, self.max.1),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub objects: Vec<SimObject>,
    pub gripper: Gripper,
    pub table: TableBounds,
    /// Stacking registry: object -> what it rests on.
    pub supports: BTreeMap<ObjectId, ObjectId>,
}

impl SceneState {
    pub fn object(&self, id: ObjectId) -> Option<&SimObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_mut(&mut self, id: ObjectId) -> Option<&mut SimObject> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    pub fn is_supporting(&self, id: ObjectId) -> bool {
        self.supports.values().any(|&s| s == id)
    }

    /// Checks the scene invariants: holding implies closed, everything on the table.
    pub fn check(&self) -> Result<(), String> {
        if self.gripper.held.is_some() && self.gripper.open {
            return Err("gripper holds an object while open".into());
        }
        if !self.table.contains(self.gripper.position) {
            return Err("gripper off the table".into());
        }
        for o in &self.objects {
            if !self.table.contains(o.position) {
                return Err(format!("{o} off the table"));
            }
        }
        Ok(())
    }

    /// `[x_cm, y_cm, closed, loaded]`.
    pub fn proprio(&self) -> Vec<f64> {
        let g = &self.gripper;
        vec![
            g.position.0,
            g.position.1,
            if g.open { 0.0 } else { 1.0 },
            if g.held.is_some() { 1.0 } else { 0.0 },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    /// Largest gripper displacement per step, cm.
    pub max_step: f64,
    /// Closing attaches the nearest object whose center is within this distance, cm.
    pub grasp_radius: f64,
    /// A released block rests on another block within this distance, cm.
    pub stack_tolerance: f64,
    /// A twist with a teapot fills the nearest cup within this distance, cm.
    pub pour_radius: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            max_step: 2.5,
            grasp_radius: 1.0,
            stack_tolerance: 1.0,
            pour_radius: 8.0,
        }
    }
}

fn support_radius(o: &SimObject, params: &PhysicsParams) -> Option<f64> {
    match o.shape {
        Shape::Block => Some(params.stack_tolerance),
        Shape::Plate => Some(o.size / 2.0),
        _ => None,
    }
}

/// Kinematic update for one action vector. Missing trailing components are
/// read as zero.
pub fn step_physics(scene: &SceneState, action: &[f64], params: &PhysicsParams) -> SceneState {
    let a = |i: usize| action.get(i).copied().unwrap_or(0.0);
    let mut next = scene.clone();

    let (mut dx, mut dy) = (a(0), a(1));
    let norm = dx.hypot(dy);
    if norm > params.max_step {
        dx *= params.max_step / norm;
        dy *= params.max_step / norm;
    }
    if dx != 0.0 || dy != 0.0 {
        let g0 = next.gripper.position;
        let g1 = next.table.clamp((g0.0 + dx, g0.1 + dy));
        let moved = (g1.0 - g0.0, g1.1 - g0.1);
        next.gripper.position = g1;
        if let Some(id) = next.gripper.held {
            let table = next.table;
            if let Some(o) = next.object_mut(id) {
                o.position = table.clamp((o.position.0 + moved.0, o.position.1 + moved.1));
            }
        }
    }

    let twist = a(3);
    if twist.abs() > 0.5 {
        if let Some(held) = next.gripper.held.and_then(|id| next.object(id)).cloned() {
            if held.shape == Shape::Teapot {
                let cup = next
                    .objects
                    .iter()
                    .filter(|o| o.shape == Shape::Cup)
                    .map(|o| (o.distance_to(held.position), o.id))
                    .filter(|(d, _)| *d <= params.pour_radius)
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                if let Some((_, cup_id)) = cup {
                    if let Some(c) = next.object_mut(cup_id) {
                        c.filled = true;
                    }
                }
            }
        }
    }

    let grip = a(2);
    if grip > 0.5 && next.gripper.open {
        next.gripper.open = false;
        let g = next.gripper.position;
        let target = next
            .objects
            .iter()
            .filter(|o| !next.is_supporting(o.id))
            .map(|o| (o.distance_to(g), o.id))
            .filter(|(d, _)| *d <= params.grasp_radius)
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if let Some((_, id)) = target {
            next.gripper.held = Some(id);
            next.supports.remove(&id);
        }
    } else if grip < -0.5 && !next.gripper.open {
        next.gripper.open = true;
        if let Some(id) = next.gripper.held.take() {
            let pos = next.object(id).map(|o| o.position).unwrap_or_default();
            let support = next
                .objects
                .iter()
                .filter(|o| o.id != id)
                .filter_map(|o| {
                    let r = support_radius(o, params)?;
                    // a block only carries one thing; plates take several
                    if o.shape == Shape::Block && next.is_supporting(o.id) {
                        return None;
                    }
                    let d = o.distance_to(pos);
                    (d <= r).then_some((d, o.id))
                })
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if let Some((_, s)) = support {
                next.supports.insert(id, s);
            }
        }
    }
    next
}

/// Top-down camera: world centimeters to ego-view pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub frame: FrameMeta,
    /// Pixels per centimeter.
    pub scale: f64,
    /// World point that maps to pixel (0, 0).
    pub origin: (f64, f64),
}

impl Camera {
    /// 640x480 ego view over an 80x60 cm table (8 px/cm).
    pub fn tabletop(table: &TableBounds) -> Self {
        Self {
            frame: FrameMeta::new("ego", 640, 480),
            scale: 8.0,
            origin: (table.min.0, table.max.1),
        }
    }

    pub fn world_to_pixel(&self, p: (f64, f64)) -> (f64, f64) {
        (
            (p.0 - self.origin.0) * self.scale,
            (self.origin.1 - p.1) * self.scale,
        )
    }

    pub fn pixel_to_world(&self, p: (f64, f64)) -> (f64, f64) {
        (
            p.0 / self.scale + self.origin.0,
            self.origin.1 - p.1 / self.scale,
        )
    }

    pub fn keypoint(&self, p: (f64, f64), label: &str) -> Keypoint {
        let (u, v) = self.world_to_pixel(p);
        Keypoint::labeled(u, v, label)
    }

    /// Pixel-space half extent of an object footprint.
    pub fn half_extent(&self, o: &SimObject) -> (f64, f64) {
        let h = o.size * 0.5 * self.scale;
        (h, h)
    }

    pub fn object_box(&self, o: &SimObject) -> BBox {
        let (u, v) = self.world_to_pixel(o.position);
        let (hw, hh) = self.half_extent(o);
        BBox::from_center(u, v, hw, hh).clamped(&self.frame)
    }
}

const TABLE_COLOR: Rgb = Rgb([196, 176, 146]);
const GRIPPER_COLOR: Rgb = Rgb([30, 30, 30]);

/// Ego-view image of the scene. Supports are drawn before what rests on them.
pub fn render_scene(scene: &SceneState, camera: &Camera) -> RasterImage {
    let mut img = RasterImage::new(camera.frame.width, camera.frame.height, TABLE_COLOR);
    let depth = |id: ObjectId| {
        let mut d = 0;
        let mut cur = id;
        while let Some(&s) = scene.supports.get(&cur) {
            d += 1;
            cur = s;
            if d > scene.objects.len() {
                break;
            }
        }
        d
    };
    let mut order: Vec<&SimObject> = scene.objects.iter().collect();
    order.sort_by_key(|o| (depth(o.id), scene.gripper.held == Some(o.id), o.id));
    for o in order {
        let (u, v) = camera.world_to_pixel(o.position);
        let (cx, cy) = (u.round() as i64, v.round() as i64);
        let r = (o.size * 0.5 * camera.scale).round() as i64;
        let c = o.color.rgb();
        match o.shape {
            Shape::Block => img.fill_rect(cx - r, cy - r, cx + r - 1, cy + r - 1, c),
            Shape::Plate => {
                img.fill_disc(cx, cy, r, Rgb([225, 225, 225]));
                img.fill_disc(cx, cy, r * 3 / 4, c);
            }
            Shape::Cup | Shape::Mug => {
                img.fill_disc(cx, cy, r, c);
                let inner = if o.filled { Rgb([120, 70, 20]) } else { Rgb([60, 60, 60]) };
                img.fill_disc(cx, cy, r / 2, inner);
                if o.shape == Shape::Mug {
                    img.fill_rect(cx + r, cy - 3, cx + r + 5, cy + 3, c);
                }
            }
            Shape::Teapot => {
                img.fill_disc(cx, cy, r, c);
                img.line(cx - r, cy, cx - r - 10, cy - 8, 4, c);
            }
        }
    }
    let (u, v) = camera.world_to_pixel(scene.gripper.position);
    let (gx, gy) = (u.round() as i64, v.round() as i64);
    let arm = if scene.gripper.open { 9 } else { 5 };
    img.line(gx - arm, gy - 8, gx - arm, gy + 8, 3, GRIPPER_COLOR);
    img.line(gx + arm, gy - 8, gx + arm, gy + 8, 3, GRIPPER_COLOR);
    img.line(gx - arm, gy, gx + arm, gy, 1, GRIPPER_COLOR);
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> SceneState {
        SceneState {
            objects: vec![
                SimObject {
                    id: 0,
                    shape: Shape::Block,
                    color: Color::Green,
                    position: (20.0, 20.0),
                    size: 4.0,
                    filled: false,
                },
                SimObject {
                    id: 1,
                    shape: Shape::Block,
                    color: Color::Red,
                    position: (40.5, 30.0),
                    size: 4.0,
                    filled: false,
                },
            ],
            gripper: Gripper {
                position: (40.0, 30.0),
                open: true,
                held: None,
            },
            table: TableBounds {
                min: (0.0, 0.0),
                max: (80.0, 60.0),
            },
            supports: BTreeMap::new(),
        }
    }

    #[test]
    fn zero_action_is_identity() {
        let s = scene();
        assert_eq!(step_physics(&s, &[0.0; ACTION_DIM], &PhysicsParams::default()), s);
    }

    #[test]
    fn close_attaches_within_radius() {
        let s = step_physics(&scene(), &[0.0, 0.0, 1.0, 0.0], &PhysicsParams::default());
        assert_eq!(s.gripper.held, Some(1));
        assert!(!s.gripper.open);
        s.check().unwrap();
    }

    #[test]
    fn close_out_of_reach_grabs_nothing() {
        let mut s = scene();
        s.gripper.position = (60.0, 30.0);
        let s = step_physics(&s, &[0.0, 0.0, 1.0, 0.0], &PhysicsParams::default());
        assert_eq!(s.gripper.held, None);
        assert!(!s.gripper.open);
    }

    #[test]
    fn moves_are_clamped() {
        let p = PhysicsParams::default();
        let s = step_physics(&scene(), &[30.0, 40.0, 0.0, 0.0], &p);
        let (x, y) = s.gripper.position;
        assert!(((x - 40.0).hypot(y - 30.0) - p.max_step).abs() < 1e-12);
        assert!((x - 40.0 - 1.5).abs() < 1e-12 && (y - 30.0 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn held_object_follows_and_stacks() {
        let p = PhysicsParams::default();
        let mut s = step_physics(&scene(), &[0.0, 0.0, 1.0, 0.0], &p);
        // carry the red block onto the green one
        for _ in 0..20 {
            let g = s.gripper.position;
            let target = (19.5, 20.0);
            s = step_physics(&s, &[target.0 - g.0, target.1 - g.1, 0.0, 0.0], &p);
        }
        assert!((s.object(1).unwrap().position.0 - 20.0).abs() < 1e-9);
        s = step_physics(&s, &[0.0, 0.0, -1.0, 0.0], &p);
        assert!(s.gripper.open && s.gripper.held.is_none());
        assert_eq!(s.supports.get(&1), Some(&0));
        // the green block now supports something and cannot be picked
        s.gripper.position = (20.0, 20.0);
        let s = step_physics(&s, &[0.0, 0.0, 1.0, 0.0], &p);
        assert_eq!(s.gripper.held, Some(1));
    }

    #[test]
    fn camera_round_trip() {
        let cam = Camera::tabletop(&scene().table);
        let px = cam.world_to_pixel((10.0, 50.0));
        assert_eq!(px, (80.0, 80.0));
        assert_eq!(cam.pixel_to_world(px), (10.0, 50.0));
    }

    #[test]
    fn scene_render_is_deterministic() {
        let s = scene();
        let cam = Camera::tabletop(&s.table);
        assert_eq!(render_scene(&s, &cam), render_scene(&s, &cam));
    }
}
