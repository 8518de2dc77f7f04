//! Perturbs one sketch a few times and reports how far each copy moved.

use anyhow::Result;
use sketchloop::augment::{augment_sketch, AugmentConfig};
use sketchloop::seeded_rng;
use sketchloop::sketch::{iou, BBox, FrameMeta, Keypoint, TranslationArrow, VisualSketch};

fn main() -> Result<()> {
    let frame = FrameMeta::new("ego", 640, 480);
    let mut sketch = VisualSketch::empty(frame.clone()).with_box(BBox::new(100.0, 120.0, 190.0, 200.0));
    let a = sketch.push_point(Keypoint::labeled(145.0, 160.0, "start"));
    let b = sketch.push_point(Keypoint::labeled(400.0, 300.0, "goal"));
    sketch.translation_arrows.push(TranslationArrow { start: a, end: b });

    let cfg = AugmentConfig { seed: 42, ..AugmentConfig::default() };
    println!("point radius c = {:.1} px", cfg.radius_for(&frame));
    let mut rng = seeded_rng(cfg.seed);
    for i in 0..5 {
        let out = augment_sketch(&sketch, &cfg, &mut rng);
        let moved: Vec<String> = sketch
            .points
            .iter()
            .zip(&out.points)
            .map(|(p, q)| format!("{:.1}", p.distance(q)))
            .collect();
        println!(
            "copy {i}: box iou {:.3}, point shifts [{}] px",
            iou(&sketch.boxes[0], &out.boxes[0]),
            moved.join(", ")
        );
    }
    Ok(())
}
