//! Deterministic rasterization of visual sketches onto RGB frames.
//!
//! Everything is integer midpoint/Bresenham rasterization without
//! anti-aliasing, so the same inputs give the same bytes on every platform.
//! Paint order is boxes, translation arrows, rotation arrows, then points.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::sketch::{validate_sketch, Axis, BBox, Spin, ValidationReport, VisualSketch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const BLACK: Rgb = Rgb([0, 0, 0]);
    pub const WHITE: Rgb = Rgb([255, 255, 255]);
    pub const GREEN: Rgb = Rgb([0, 200, 0]);
    pub const RED: Rgb = Rgb([230, 20, 20]);
    pub const BLUE: Rgb = Rgb([30, 90, 255]);
    pub const ORANGE: Rgb = Rgb([255, 140, 0]);
}

/// Row-major RGB8 image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, fill: Rgb) -> Self {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&fill.0);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RenderError> {
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(RenderError::BufferSize {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        Rgb([self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]])
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, c: Rgb) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&c.0);
    }

    /// Writes a pixel, silently clipping anything outside the frame.
    pub fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64 {
            self.set_pixel(x as u32, y as u32, c);
        }
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb) {
        for y in y0.max(0)..=y1.min(self.height as i64 - 1) {
            for x in x0.max(0)..=x1.min(self.width as i64 - 1) {
                self.set_pixel(x as u32, y as u32, c);
            }
        }
    }

    pub fn fill_disc(&mut self, cx: i64, cy: i64, r: i64, c: Rgb) {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.put(cx + dx, cy + dy, c);
                }
            }
        }
    }

    /// Square brush of side `t` centered on (x, y).
    fn stamp(&mut self, x: i64, y: i64, t: i64, c: Rgb) {
        let lo = -(t - 1) / 2;
        let hi = t / 2;
        for dy in lo..=hi {
            for dx in lo..=hi {
                self.put(x + dx, y + dy, c);
            }
        }
    }

    /// Bresenham line with a square brush.
    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, t: i64, c: Rgb) {
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.stamp(x, y, t, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&self.to_ppm())
    }

    pub fn read_ppm<R: Read>(mut r: R) -> Result<Self, RenderError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_ppm(&bytes)
    }

    /// Binary PPM (P6, maxval 255) decoder. Header comments are skipped.
    pub fn from_ppm(bytes: &[u8]) -> Result<Self, RenderError> {
        let mut pos = 0usize;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else if bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(RenderError::Ppm("truncated header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(RenderError::Ppm(format!("unsupported magic {:?}", fields[0])));
        }
        let num = |s: &str| {
            s.parse::<u32>()
                .map_err(|_| RenderError::Ppm(format!("bad header field {s:?}")))
        };
        let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(RenderError::Ppm(format!("maxval {maxval} unsupported")));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let data = bytes
            .get(pos..)
            .ok_or_else(|| RenderError::Ppm("missing raster".into()))?;
        Self::from_raw(w, h, data.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Marker {
    Disc,
    /// Five spokes of radius `2 * point_radius` around a small center disc.
    Star,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchStyle {
    pub box_color: Rgb,
    pub point_color: Rgb,
    pub arrow_color: Rgb,
    pub rotation_color: Rgb,
    pub line_thickness: u32,
    pub point_radius: u32,
    /// Glyph for points labeled `goal`.
    pub goal_point_marker: Marker,
}

impl Default for SketchStyle {
    fn default() -> Self {
        Self {
            box_color: Rgb::GREEN,
            point_color: Rgb::RED,
            arrow_color: Rgb::BLUE,
            rotation_color: Rgb::ORANGE,
            line_thickness: 2,
            point_radius: 4,
            goal_point_marker: Marker::Star,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("sketch frame is {sketch_w}x{sketch_h} but image is {image_w}x{image_h}")]
    DimensionMismatch {
        sketch_w: u32,
        sketch_h: u32,
        image_w: u32,
        image_h: u32,
    },
    #[error("invalid sketch: {0}")]
    InvalidSketch(ValidationReport),
    #[error("invalid style: {0}")]
    InvalidStyle(&'static str),
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("ppm: {0}")]
    Ppm(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

// cos/sin of the spoke angles -90 + 72k degrees, fixed so no libm call is involved.
const STAR_SPOKES: [(f64, f64); 5] = [
    (0.0, -1.0),
    (0.951_056_516_295_153_6, -0.309_016_994_374_947_4),
    (0.587_785_252_292_473_1, 0.809_016_994_374_947_5),
    (-0.587_785_252_292_473_1, 0.809_016_994_374_947_5),
    (-0.951_056_516_295_153_6, -0.309_016_994_374_947_4),
];
const HEAD_COS: f64 = 0.906_307_787_036_649_9; // 25 degrees
const HEAD_SIN: f64 = 0.422_618_261_740_699_4;

// 3x5 bitmaps, one row per entry, MSB on the left.
const GLYPH_X: [u8; 5] = [0b101, 0b101, 0b010, 0b101, 0b101];
const GLYPH_Y: [u8; 5] = [0b101, 0b101, 0b010, 0b010, 0b010];
const GLYPH_Z: [u8; 5] = [0b111, 0b001, 0b010, 0b100, 0b111];

fn px(v: f64) -> i64 {
    v.round() as i64
}

/// Draws `sketch` over a copy of `frame`.
pub fn render_sketch(
    frame: &RasterImage,
    sketch: &VisualSketch,
    style: &SketchStyle,
) -> Result<RasterImage, RenderError> {
    if sketch.frame.width != frame.width || sketch.frame.height != frame.height {
        return Err(RenderError::DimensionMismatch {
            sketch_w: sketch.frame.width,
            sketch_h: sketch.frame.height,
            image_w: frame.width,
            image_h: frame.height,
        });
    }
    if style.line_thickness == 0 {
        return Err(RenderError::InvalidStyle("line_thickness must be >= 1"));
    }
    if style.point_radius == 0 {
        return Err(RenderError::InvalidStyle("point_radius must be >= 1"));
    }
    let report = validate_sketch(sketch);
    if !report.is_ok() {
        return Err(RenderError::InvalidSketch(report));
    }

    let mut img = frame.clone();
    let t = style.line_thickness as i64;
    for b in &sketch.boxes {
        draw_box(&mut img, b, t, style.box_color);
    }
    for a in &sketch.translation_arrows {
        let (s, e) = (&sketch.points[a.start], &sketch.points[a.end]);
        draw_arrow(&mut img, (s.x, s.y), (e.x, e.y), t, style.arrow_color);
    }
    for a in &sketch.rotation_arrows {
        let c = &sketch.points[a.center];
        draw_rotation(&mut img, (px(c.x), px(c.y)), a.axis, a.dir, style);
    }
    let r = style.point_radius as i64;
    for p in &sketch.points {
        let (cx, cy) = (px(p.x), px(p.y));
        let is_goal = p.label.as_deref().is_some_and(|l| l.starts_with("goal"));
        if is_goal && style.goal_point_marker == Marker::Star {
            for (ux, uy) in STAR_SPOKES {
                let tip = (cx + px(ux * 2.0 * r as f64), cy + px(uy * 2.0 * r as f64));
                img.line(cx, cy, tip.0, tip.1, t, style.point_color);
            }
            img.fill_disc(cx, cy, (r / 2).max(1), style.point_color);
        } else {
            img.fill_disc(cx, cy, r, style.point_color);
        }
    }
    Ok(img)
}

fn draw_box(img: &mut RasterImage, b: &BBox, t: i64, c: Rgb) {
    let (x1, y1, x2, y2) = (px(b.x1), px(b.y1), px(b.x2), px(b.y2));
    // thickness grows inward so the outer edge stays on the box boundary
    for k in 0..t {
        let (l, tp, r, bt) = (x1 + k, y1 + k, x2 - k, y2 - k);
        if l > r || tp > bt {
            break;
        }
        img.line(l, tp, r, tp, 1, c);
        img.line(l, bt, r, bt, 1, c);
        img.line(l, tp, l, bt, 1, c);
        img.line(r, tp, r, bt, 1, c);
    }
}

fn draw_head(img: &mut RasterImage, tip: (i64, i64), dir: (f64, f64), t: i64, c: Rgb) {
    let len = (dir.0 * dir.0 + dir.1 * dir.1).sqrt();
    if len == 0.0 {
        return;
    }
    let (ux, uy) = (dir.0 / len, dir.1 / len);
    let head = (6 + 2 * t) as f64;
    for sign in [1.0, -1.0] {
        // rotate the reversed direction by +-25 degrees
        let bx = -(ux * HEAD_COS - sign * uy * HEAD_SIN);
        let by = -(sign * ux * HEAD_SIN + uy * HEAD_COS);
        img.line(tip.0, tip.1, tip.0 + px(bx * head), tip.1 + px(by * head), t, c);
    }
}

fn draw_arrow(img: &mut RasterImage, from: (f64, f64), to: (f64, f64), t: i64, c: Rgb) {
    let (x0, y0, x1, y1) = (px(from.0), px(from.1), px(to.0), px(to.1));
    img.line(x0, y0, x1, y1, t, c);
    draw_head(img, (x1, y1), ((x1 - x0) as f64, (y1 - y0) as f64), t, c);
}

/// First-quadrant points of an axis-aligned ellipse (midpoint algorithm).
fn ellipse_quadrant(rx: i64, ry: i64) -> Vec<(i64, i64)> {
    let mut pts = Vec::new();
    if rx == 0 || ry == 0 {
        return pts;
    }
    let (rx2, ry2) = (rx * rx, ry * ry);
    let (mut x, mut y) = (0i64, ry);
    let mut d1 = 4 * ry2 - 4 * rx2 * ry + rx2;
    while ry2 * x < rx2 * y {
        pts.push((x, y));
        if d1 < 0 {
            d1 += 4 * ry2 * (2 * x + 3);
        } else {
            d1 += 4 * ry2 * (2 * x + 3) + 8 * rx2 * (1 - y);
            y -= 1;
        }
        x += 1;
    }
    let mut d2 = ry2 * (2 * x + 1) * (2 * x + 1) + 4 * rx2 * (y - 1) * (y - 1) - 4 * rx2 * ry2;
    while y >= 0 {
        pts.push((x, y));
        if d2 > 0 {
            d2 += 4 * rx2 * (3 - 2 * y);
        } else {
            d2 += 4 * ry2 * (2 * x + 2) + 4 * rx2 * (3 - 2 * y);
            x += 1;
        }
        y -= 1;
    }
    pts
}

/// 270-degree arc leaving the upper-right quadrant open, a head at the arc's
/// leading end, and the axis letter inside the gap. Axis z is drawn as a
/// circle; x and y are foreshortened to a 2:1 ellipse.
fn draw_rotation(
    img: &mut RasterImage,
    center: (i64, i64),
    axis: Axis,
    dir: Spin,
    style: &SketchStyle,
) {
    let t = style.line_thickness as i64;
    let c = style.rotation_color;
    let r = (4 * style.point_radius as i64).max(8);
    let (rx, ry) = match axis {
        Axis::Z => (r, r),
        Axis::X => (r, r / 2),
        Axis::Y => (r / 2, r),
    };
    let (cx, cy) = center;
    for (dx, dy) in ellipse_quadrant(rx, ry) {
        for (sx, sy) in [(1, 1), (-1, 1), (-1, -1), (1, -1)] {
            let (ex, ey) = (sx * dx, sy * dy);
            // image up is -y; skip the open quadrant, keep its bounding rays
            if ex > 0 && ey < 0 {
                continue;
            }
            img.stamp(cx + ex, cy + ey, t, c);
        }
    }
    // Clockwise on screen runs right -> bottom -> left -> top, so its head
    // sits on top pointing right. Counter-clockwise ends on the right, pointing up.
    match dir {
        Spin::Cw => draw_head(img, (cx, cy - ry), (1.0, 0.0), t, c),
        Spin::Ccw => draw_head(img, (cx + rx, cy), (0.0, -1.0), t, c),
    }
    let glyph = match axis {
        Axis::X => &GLYPH_X,
        Axis::Y => &GLYPH_Y,
        Axis::Z => &GLYPH_Z,
    };
    let scale = t.max(1);
    let (gx, gy) = (cx + rx / 3 + 1, cy - ry / 3 - 5 * scale);
    for (row, bits) in glyph.iter().enumerate() {
        for col in 0..3 {
            if bits & (0b100 >> col) != 0 {
                let x = gx + col * scale;
                let y = gy + row as i64 * scale;
                img.fill_rect(x, y, x + scale - 1, y + scale - 1, c);
            }
        }
    }
}

/// Stable 64-bit content hash over dimensions and pixels (SHA-256 prefix).
pub fn image_digest(img: &RasterImage) -> u64 {
    let mut h = Sha256::new();
    h.update(img.width.to_le_bytes());
    h.update(img.height.to_le_bytes());
    h.update(&img.pixels);
    let out = h.finalize();
    u64::from_be_bytes(out[..8].try_into().expect("sha256 is 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{FrameMeta, Keypoint, RotationArrow, TranslationArrow};

    fn blank(w: u32, h: u32) -> RasterImage {
        RasterImage::new(w, h, Rgb([10, 10, 10]))
    }

    fn thin() -> SketchStyle {
        SketchStyle {
            line_thickness: 1,
            ..SketchStyle::default()
        }
    }

    #[test]
    fn empty_sketch_leaves_frame_untouched() {
        let img = blank(64, 48);
        let out = render_sketch(&img, &VisualSketch::empty(FrameMeta::new("ego", 64, 48)), &thin())
            .unwrap();
        assert_eq!(out, img);
        assert_eq!(image_digest(&out), image_digest(&img));
    }

    #[test]
    fn box_outline_pixels() {
        let img = blank(64, 48);
        let sketch = VisualSketch::empty(FrameMeta::new("ego", 64, 48))
            .with_box(BBox::new(10.0, 10.0, 20.0, 20.0));
        let style = thin();
        let out = render_sketch(&img, &sketch, &style).unwrap();
        assert_eq!(out.pixel(10, 15), style.box_color);
        assert_eq!(out.pixel(20, 15), style.box_color);
        assert_eq!(out.pixel(15, 10), style.box_color);
        assert_eq!(out.pixel(15, 15), img.pixel(15, 15));
        assert_eq!(out.pixel(9, 15), img.pixel(9, 15));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let img = blank(64, 48);
        let sketch = VisualSketch::empty(FrameMeta::new("ego", 640, 480));
        assert!(matches!(
            render_sketch(&img, &sketch, &thin()),
            Err(RenderError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn primitives_near_edges_are_clipped() {
        let img = blank(32, 32);
        let mut s = VisualSketch::empty(FrameMeta::new("ego", 32, 32))
            .with_box(BBox::new(0.0, 0.0, 32.0, 32.0));
        let a = s.push_point(Keypoint::labeled(0.0, 0.0, "goal"));
        let b = s.push_point(Keypoint::new(32.0, 32.0));
        s.translation_arrows.push(TranslationArrow { start: b, end: a });
        s.rotation_arrows.push(RotationArrow {
            center: b,
            axis: Axis::Y,
            dir: Spin::Cw,
        });
        let out = render_sketch(&img, &s, &SketchStyle::default()).unwrap();
        assert_eq!(out.as_bytes().len(), 32 * 32 * 3);
    }

    #[test]
    fn rotation_glyph_differs_by_axis_and_direction() {
        let img = blank(80, 80);
        let mut digests = Vec::new();
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            for dir in [Spin::Cw, Spin::Ccw] {
                let mut s = VisualSketch::empty(FrameMeta::new("ego", 80, 80));
                s.push_point(Keypoint::new(40.0, 40.0));
                s.rotation_arrows.push(RotationArrow { center: 0, axis, dir });
                digests.push(image_digest(&render_sketch(&img, &s, &thin()).unwrap()));
            }
        }
        let mut unique = digests.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), digests.len());
    }

    #[test]
    fn z_rotation_leaves_upper_right_open() {
        let img = blank(80, 80);
        let mut s = VisualSketch::empty(FrameMeta::new("ego", 80, 80));
        s.push_point(Keypoint::new(40.0, 40.0));
        s.rotation_arrows.push(RotationArrow {
            center: 0,
            axis: Axis::Z,
            dir: Spin::Ccw,
        });
        let style = thin();
        let out = render_sketch(&img, &s, &style).unwrap();
        let r = 4 * style.point_radius as i64; // 16
        // lower-left arc sample: 45 degrees down-left
        let d = (r as f64 / 2f64.sqrt()).round() as u32;
        let near = |x: u32, y: u32| {
            (x - 1..=x + 1).flat_map(move |i| (y - 1..=y + 1).map(move |j| (i, j)))
        };
        assert!(near(40 - d, 40 + d).any(|(x, y)| out.pixel(x, y) == style.rotation_color));
        // open quadrant at 45 degrees up-right (head is at the right end, not here)
        assert!(near(40 + d, 40 - d).all(|(x, y)| out.pixel(x, y) == img.pixel(x, y)));
    }

    #[test]
    fn ellipse_quadrant_reaches_both_axes() {
        let q = ellipse_quadrant(10, 5);
        assert_eq!(q.first(), Some(&(0, 5)));
        assert!(q.contains(&(10, 0)));
    }

    #[test]
    fn black_2x2_digest_is_pinned() {
        let img = RasterImage::new(2, 2, Rgb::BLACK);
        assert_eq!(image_digest(&img), BLACK_2X2_DIGEST);
    }

    // first 8 bytes (big-endian) of SHA-256 over 02000000 02000000 and 12 zero bytes
    const BLACK_2X2_DIGEST: u64 = 3618549977008410022;

    #[test]
    fn single_pixel_changes_digest() {
        let base = RasterImage::new(16, 16, Rgb::BLACK);
        let d0 = image_digest(&base);
        for (x, y) in [(0, 0), (15, 15), (7, 3), (3, 7)] {
            let mut m = base.clone();
            m.set_pixel(x, y, Rgb([0, 0, 1]));
            assert_ne!(image_digest(&m), d0);
        }
    }

    #[test]
    fn ppm_round_trip() {
        let mut img = blank(5, 3);
        img.set_pixel(4, 2, Rgb([1, 2, 3]));
        let bytes = img.to_ppm();
        assert_eq!(RasterImage::from_ppm(&bytes).unwrap(), img);
        let commented = [b"P6\n# comment\n5 3\n255\n".as_slice(), img.as_bytes()].concat();
        assert_eq!(RasterImage::from_ppm(&commented).unwrap(), img);
        assert!(RasterImage::from_ppm(b"P3\n1 1\n255\n").is_err());
    }
}
