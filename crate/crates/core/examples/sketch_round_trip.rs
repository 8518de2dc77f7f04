//! Builds a sketch, validates it, and round-trips it through the canonical
//! single-line record.

use anyhow::Result;
use sketchloop::sketch::{
    parse_sketch, serialize_sketch, sketch_digest, Axis, BBox, FrameMeta, Keypoint, RotationArrow,
    Spin, TranslationArrow, VisualSketch,
};

fn main() -> Result<()> {
    let mut sketch = VisualSketch::empty(FrameMeta::new("ego", 640, 480))
        .with_box(BBox::new(120.0, 200.0, 180.0, 260.0));
    let grasp = sketch.push_point(Keypoint::labeled(150.0, 230.0, "grasp"));
    let goal = sketch.push_point(Keypoint::labeled(420.0, 180.0, "goal"));
    sketch.translation_arrows.push(TranslationArrow { start: grasp, end: goal });
    sketch.rotation_arrows.push(RotationArrow { center: goal, axis: Axis::X, dir: Spin::Cw });

    let record = serialize_sketch(&sketch)?;
    println!("{record}");
    println!("digest {:016x}", sketch_digest(&sketch));

    let back = parse_sketch(&record)?;
    assert_eq!(back, sketch.quantized());

    // invalid sketches are refused with a report
    let mut broken = sketch.clone();
    broken.points[goal].x = 700.0;
    broken.translation_arrows.push(TranslationArrow { start: 0, end: 9 });
    for v in &broken.validate().violations {
        println!("violation: {v}");
    }
    Ok(())
}
