//! Visual sketch primitives: boxes, keypoints and arrows anchored on a
//! reference image plane.
//!
//! Coordinates are absolute pixels of the reference view, origin at the
//! top-left corner, x to the right and y downward. The frame metadata travels
//! with the sketch so a record can be rendered without outside context.
//!
//! The wire format is a single-line JSON object with a fixed key order:
//!
//! ```text
//! {"frame":{"view":"ego","w":640,"h":480},"bbox":[[x1,y1,x2,y2]],
//!  "points":[{"x":..,"y":..,"label":..}],"arrows_t":[[s,e]],
//!  "arrows_r":[{"p":i,"axis":"x","dir":"cw"}]}
//! ```
//!
//! Coordinates are written with one decimal place.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

/// Image-plane context shared by every primitive of a sketch.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameMeta {
    pub view: String,
    pub width: u32,
    pub height: u32,
}

impl FrameMeta {
    pub fn new(view: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            view: view.into(),
            width,
            height,
        }
    }

    /// Closed-rectangle containment: `[0, width] x [0, height]`.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= self.width as f64 && y <= self.height as f64
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }
}

/// Axis-aligned box given by its top-left and bottom-right corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: f64, cy: f64, half_w: f64, half_h: f64) -> Self {
        Self::new(cx - half_w, cy - half_h, cx + half_w, cy + half_h)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    pub fn is_well_formed(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
            && self.x1 < self.x2
            && self.y1 < self.y2
    }

    pub fn within(&self, frame: &FrameMeta) -> bool {
        frame.contains(self.x1, self.y1) && frame.contains(self.x2, self.y2)
    }

    /// Clamps the box to the frame rectangle.
    pub fn clamped(&self, frame: &FrameMeta) -> Self {
        let (w, h) = (frame.width as f64, frame.height as f64);
        Self::new(
            self.x1.clamp(0.0, w),
            self.y1.clamp(0.0, h),
            self.x2.clamp(0.0, w),
            self.y2.clamp(0.0, h),
        )
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }
}

/// Intersection over union with continuous areas. Disjoint boxes give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub label: Option<String>,
}

impl Keypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y, label: None }
    }

    pub fn labeled(x: f64, y: f64, label: impl Into<String>) -> Self {
        Self {
            x,
            y,
            label: Some(label.into()),
        }
    }

    pub fn distance(&self, other: &Keypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Ordered pair of keypoint indices: the end-effector should travel from
/// `start` to `end`. Longer paths are chains of arrows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TranslationArrow {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl FromStr for Axis {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(()),
        }
    }
}

/// Rotation sense as seen in the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Spin {
    Cw,
    Ccw,
}

impl Spin {
    pub fn as_str(self) -> &'static str {
        match self {
            Spin::Cw => "cw",
            Spin::Ccw => "ccw",
        }
    }

    /// +1 for clockwise, -1 for counter-clockwise.
    pub fn signum(self) -> f64 {
        match self {
            Spin::Cw => 1.0,
            Spin::Ccw => -1.0,
        }
    }
}

impl FromStr for Spin {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cw" => Ok(Spin::Cw),
            "ccw" => Ok(Spin::Ccw),
            _ => Err(()),
        }
    }
}

/// Rotation about a canonical axis, centered on a keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RotationArrow {
    pub center: usize,
    pub axis: Axis,
    pub dir: Spin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualSketch {
    pub frame: FrameMeta,
    pub boxes: Vec<BBox>,
    pub points: Vec<Keypoint>,
    pub translation_arrows: Vec<TranslationArrow>,
    pub rotation_arrows: Vec<RotationArrow>,
}

impl VisualSketch {
    pub fn empty(frame: FrameMeta) -> Self {
        Self {
            frame,
            boxes: Vec::new(),
            points: Vec::new(),
            translation_arrows: Vec::new(),
            rotation_arrows: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
            && self.points.is_empty()
            && self.translation_arrows.is_empty()
            && self.rotation_arrows.is_empty()
    }

    pub fn with_box(mut self, b: BBox) -> Self {
        self.boxes.push(b);
        self
    }

    /// Appends a point and returns its index.
    pub fn push_point(&mut self, p: Keypoint) -> usize {
        self.points.push(p);
        self.points.len() - 1
    }

    pub fn validate(&self) -> ValidationReport {
        validate_sketch(self)
    }

    /// Snaps every coordinate to the wire precision, i.e. the sketch that a
    /// serialize/parse round trip would produce.
    pub fn quantized(&self) -> Self {
        let q = |v: f64| fmt_coord(v).parse::<f64>().unwrap_or(v);
        let mut out = self.clone();
        for b in &mut out.boxes {
            *b = BBox::new(q(b.x1), q(b.y1), q(b.x2), q(b.y2));
        }
        for p in &mut out.points {
            p.x = q(p.x);
            p.y = q(p.y);
        }
        out
    }

    /// Start and end keypoints of the first translation arrow.
    pub fn primary_arrow(&self) -> Option<(&Keypoint, &Keypoint)> {
        let a = self.translation_arrows.first()?;
        Some((self.points.get(a.start)?, self.points.get(a.end)?))
    }
}

/// Which primitive a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Frame,
    Box(usize),
    Point(usize),
    TranslationArrow(usize),
    RotationArrow(usize),
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Primitive::Frame => write!(f, "frame"),
            Primitive::Box(i) => write!(f, "bbox[{i}]"),
            Primitive::Point(i) => write!(f, "points[{i}]"),
            Primitive::TranslationArrow(i) => write!(f, "arrows_t[{i}]"),
            Primitive::RotationArrow(i) => write!(f, "arrows_r[{i}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    EmptyFrame,
    NonFinite,
    InvertedBox,
    BoxOutsideFrame,
    PointOutsideFrame,
    DanglingAnchor { index: usize },
    DegenerateArrow,
    UnknownAxis(String),
    UnknownDirection(String),
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::EmptyFrame => write!(f, "frame has zero width or height"),
            Rule::NonFinite => write!(f, "non-finite coordinate"),
            Rule::InvertedBox => write!(f, "box corners not ordered (need x1 < x2, y1 < y2)"),
            Rule::BoxOutsideFrame => write!(f, "box outside frame"),
            Rule::PointOutsideFrame => write!(f, "point outside frame"),
            Rule::DanglingAnchor { index } => write!(f, "anchor {index} does not name a point"),
            Rule::DegenerateArrow => write!(f, "degenerate arrow"),
            Rule::UnknownAxis(a) => write!(f, "axis not in {{x,y,z}} (got {a:?})"),
            Rule::UnknownDirection(d) => write!(f, "dir not in {{cw,ccw}} (got {d:?})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub primitive: Primitive,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.primitive, self.rule)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, primitive: Primitive, rule: Rule) {
        self.violations.push(Violation { primitive, rule });
    }

    pub fn into_result(self) -> Result<(), SketchError> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(SketchError::Invalid(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn validate_sketch(sketch: &VisualSketch) -> ValidationReport {
    let mut report = ValidationReport::default();
    let frame = &sketch.frame;
    if frame.width == 0 || frame.height == 0 {
        report.push(Primitive::Frame, Rule::EmptyFrame);
    }
    for (i, b) in sketch.boxes.iter().enumerate() {
        if ![b.x1, b.y1, b.x2, b.y2].iter().all(|v| v.is_finite()) {
            report.push(Primitive::Box(i), Rule::NonFinite);
            continue;
        }
        if !(b.x1 < b.x2 && b.y1 < b.y2) {
            report.push(Primitive::Box(i), Rule::InvertedBox);
        }
        if !b.within(frame) {
            report.push(Primitive::Box(i), Rule::BoxOutsideFrame);
        }
    }
    for (i, p) in sketch.points.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite()) {
            report.push(Primitive::Point(i), Rule::NonFinite);
        } else if !frame.contains(p.x, p.y) {
            report.push(Primitive::Point(i), Rule::PointOutsideFrame);
        }
    }
    let n = sketch.points.len();
    for (i, a) in sketch.translation_arrows.iter().enumerate() {
        for index in [a.start, a.end] {
            if index >= n {
                report.push(Primitive::TranslationArrow(i), Rule::DanglingAnchor { index });
            }
        }
        if a.start == a.end {
            report.push(Primitive::TranslationArrow(i), Rule::DegenerateArrow);
        }
    }
    for (i, a) in sketch.rotation_arrows.iter().enumerate() {
        if a.center >= n {
            report.push(
                Primitive::RotationArrow(i),
                Rule::DanglingAnchor { index: a.center },
            );
        }
    }
    report
}

#[derive(Debug, thiserror::Error)]
pub enum SketchError {
    #[error("malformed record at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid sketch: {0}")]
    Invalid(ValidationReport),
}

impl SketchError {
    pub fn report(&self) -> Option<&ValidationReport> {
        match self {
            SketchError::Invalid(r) => Some(r),
            _ => None,
        }
    }
}

pub(crate) fn fmt_coord(v: f64) -> String {
    // `+ 0.0` folds -0.0 into 0.0.
    format!("{:.1}", v + 0.0)
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

/// Writes the canonical record without validating. Used for digests of
/// arbitrary sketches; public serialization goes through [`serialize_sketch`].
pub fn write_record(sketch: &VisualSketch) -> String {
    let mut out = String::with_capacity(128);
    out.push_str("{\"frame\":{\"view\":");
    out.push_str(&json_str(&sketch.frame.view));
    out.push_str(&format!(
        ",\"w\":{},\"h\":{}}},\"bbox\":[",
        sketch.frame.width, sketch.frame.height
    ));
    for (i, b) in sketch.boxes.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!(
            "[{},{},{},{}]",
            fmt_coord(b.x1),
            fmt_coord(b.y1),
            fmt_coord(b.x2),
            fmt_coord(b.y2)
        ));
    }
    out.push_str("],\"points\":[");
    for (i, p) in sketch.points.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let label = p.label.as_deref().map_or_else(|| "null".to_string(), json_str);
        out.push_str(&format!(
            "{{\"x\":{},\"y\":{},\"label\":{}}}",
            fmt_coord(p.x),
            fmt_coord(p.y),
            label
        ));
    }
    out.push_str("],\"arrows_t\":[");
    for (i, a) in sketch.translation_arrows.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!("[{},{}]", a.start, a.end));
    }
    out.push_str("],\"arrows_r\":[");
    for (i, a) in sketch.rotation_arrows.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!(
            "{{\"p\":{},\"axis\":\"{}\",\"dir\":\"{}\"}}",
            a.center,
            a.axis.as_str(),
            a.dir.as_str()
        ));
    }
    out.push_str("]}");
    out
}

/// Canonical single-line record. Refuses invalid sketches.
pub fn serialize_sketch(sketch: &VisualSketch) -> Result<String, SketchError> {
    validate_sketch(sketch).into_result()?;
    Ok(write_record(sketch))
}

/// Stable 64-bit digest of the canonical record.
pub fn sketch_digest(sketch: &VisualSketch) -> u64 {
    let hash = Sha256::digest(write_record(sketch).as_bytes());
    u64::from_be_bytes(hash[..8].try_into().expect("sha256 is 32 bytes"))
}

/// Serde adapter that embeds an optional sketch as its canonical record,
/// for use with `#[serde(with = "crate::sketch::wire_opt")]`.
pub mod wire_opt {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use serde_json::value::RawValue;
    use serde_json::Value;

    use super::{parse_sketch_value, write_record, VisualSketch};

    pub fn serialize<S: Serializer>(v: &Option<VisualSketch>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(sketch) => RawValue::from_string(write_record(sketch))
                .map_err(serde::ser::Error::custom)?
                .serialize(s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<VisualSketch>, D::Error> {
        match Option::<Value>::deserialize(d)? {
            None | Some(Value::Null) => Ok(None),
            Some(v) => parse_sketch_value(&v)
                .map(|p| Some(p.sketch))
                .map_err(D::Error::custom),
        }
    }
}

/// A parsed sketch plus notes about tolerated irregularities (unknown keys,
/// missing primitive arrays).
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSketch {
    pub sketch: VisualSketch,
    pub warnings: Vec<String>,
}

/// Parses a sketch record and validates it. Warnings are logged and dropped.
pub fn parse_sketch(text: &str) -> Result<VisualSketch, SketchError> {
    let parsed = parse_sketch_with_warnings(text)?;
    for w in &parsed.warnings {
        log::warn!("sketch record: {w}");
    }
    Ok(parsed.sketch)
}

pub fn parse_sketch_with_warnings(text: &str) -> Result<ParsedSketch, SketchError> {
    let value: Value = serde_json::from_str(text).map_err(|e| SketchError::Syntax {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    parse_sketch_value(&value)
}

/// Same as [`parse_sketch_with_warnings`] for an already decoded JSON value,
/// e.g. a sketch nested inside a larger message.
pub fn parse_sketch_value(value: &Value) -> Result<ParsedSketch, SketchError> {
    let mut warnings = Vec::new();
    let root = as_object(value, "$")?;
    warn_unknown(
        root,
        &["frame", "bbox", "points", "arrows_t", "arrows_r"],
        "$",
        &mut warnings,
    );

    let frame_v = root.get("frame").ok_or_else(|| schema("$", "missing `frame`"))?;
    let frame_o = as_object(frame_v, "$.frame")?;
    warn_unknown(frame_o, &["view", "w", "h"], "$.frame", &mut warnings);
    let view = frame_o
        .get("view")
        .and_then(Value::as_str)
        .ok_or_else(|| schema("$.frame.view", "expected string"))?;
    let width = as_u32(frame_o.get("w"), "$.frame.w")?;
    let height = as_u32(frame_o.get("h"), "$.frame.h")?;
    let mut sketch = VisualSketch::empty(FrameMeta::new(view, width, height));

    for (i, b) in array_field(root, "bbox", &mut warnings)?.iter().enumerate() {
        let path = format!("$.bbox[{i}]");
        let items = b
            .as_array()
            .filter(|a| a.len() == 4)
            .ok_or_else(|| schema(&path, "expected [x1,y1,x2,y2]"))?;
        let c: Vec<f64> = items
            .iter()
            .enumerate()
            .map(|(k, v)| as_f64(Some(v), &format!("{path}[{k}]")))
            .collect::<Result<_, _>>()?;
        sketch.boxes.push(BBox::new(c[0], c[1], c[2], c[3]));
    }

    for (i, p) in array_field(root, "points", &mut warnings)?.iter().enumerate() {
        let path = format!("$.points[{i}]");
        let o = as_object(p, &path)?;
        warn_unknown(o, &["x", "y", "label"], &path, &mut warnings);
        let x = as_f64(o.get("x"), &format!("{path}.x"))?;
        let y = as_f64(o.get("y"), &format!("{path}.y"))?;
        let label = match o.get("label") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => return Err(schema(&format!("{path}.label"), "expected string or null")),
        };
        sketch.points.push(Keypoint { x, y, label });
    }

    for (i, a) in array_field(root, "arrows_t", &mut warnings)?.iter().enumerate() {
        let path = format!("$.arrows_t[{i}]");
        let items = a
            .as_array()
            .filter(|a| a.len() == 2)
            .ok_or_else(|| schema(&path, "expected [start_idx,end_idx]"))?;
        sketch.translation_arrows.push(TranslationArrow {
            start: as_index(&items[0], &format!("{path}[0]"))?,
            end: as_index(&items[1], &format!("{path}[1]"))?,
        });
    }

    let mut enum_report = ValidationReport::default();
    for (i, a) in array_field(root, "arrows_r", &mut warnings)?.iter().enumerate() {
        let path = format!("$.arrows_r[{i}]");
        let o = as_object(a, &path)?;
        warn_unknown(o, &["p", "axis", "dir"], &path, &mut warnings);
        let center = as_index(
            o.get("p").ok_or_else(|| schema(&path, "missing `p`"))?,
            &format!("{path}.p"),
        )?;
        let axis_s = o
            .get("axis")
            .and_then(Value::as_str)
            .ok_or_else(|| schema(&format!("{path}.axis"), "expected string"))?;
        let dir_s = o
            .get("dir")
            .and_then(Value::as_str)
            .ok_or_else(|| schema(&format!("{path}.dir"), "expected string"))?;
        let axis = axis_s.parse::<Axis>();
        let dir = dir_s.parse::<Spin>();
        if axis.is_err() {
            enum_report.push(Primitive::RotationArrow(i), Rule::UnknownAxis(axis_s.into()));
        }
        if dir.is_err() {
            enum_report.push(Primitive::RotationArrow(i), Rule::UnknownDirection(dir_s.into()));
        }
        if let (Ok(axis), Ok(dir)) = (axis, dir) {
            sketch.rotation_arrows.push(RotationArrow { center, axis, dir });
        }
    }

    let mut report = validate_sketch(&sketch);
    report.violations.extend(enum_report.violations);
    report.into_result()?;
    Ok(ParsedSketch { sketch, warnings })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(text.len());
        }
        offset += l.len();
    }
    text.len()
}

fn schema(path: &str, message: &str) -> SketchError {
    SketchError::Schema {
        path: path.to_string(),
        message: message.to_string(),
    }
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, SketchError> {
    v.as_object().ok_or_else(|| schema(path, "expected object"))
}

fn as_f64(v: Option<&Value>, path: &str) -> Result<f64, SketchError> {
    v.and_then(Value::as_f64)
        .ok_or_else(|| schema(path, "expected number"))
}

fn as_u32(v: Option<&Value>, path: &str) -> Result<u32, SketchError> {
    v.and_then(Value::as_u64)
        .and_then(|n| u32::try_from(n).ok())
        .ok_or_else(|| schema(path, "expected non-negative integer"))
}

fn as_index(v: &Value, path: &str) -> Result<usize, SketchError> {
    v.as_u64()
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| schema(path, "expected point index"))
}

fn array_field<'a>(
    root: &'a Map<String, Value>,
    key: &str,
    warnings: &mut Vec<String>,
) -> Result<&'a [Value], SketchError> {
    match root.get(key) {
        None => {
            warnings.push(format!("missing `{key}`, treated as empty"));
            Ok(&[])
        }
        Some(v) => v
            .as_array()
            .map(Vec::as_slice)
            .ok_or_else(|| schema(&format!("$.{key}"), "expected array")),
    }
}

fn warn_unknown(o: &Map<String, Value>, known: &[&str], path: &str, warnings: &mut Vec<String>) {
    for k in o.keys() {
        if !known.contains(&k.as_str()) {
            warnings.push(format!("unknown field `{k}` at {path} ignored"));
        }
    }
}
