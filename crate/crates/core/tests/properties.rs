//! Property tests for the geometric and pipeline invariants.

use proptest::prelude::*;

use sketchloop::augment::{augment_sketch, jitter_point, perturb_box, AugmentConfig};
use sketchloop::dataset::{segment_subtasks, select_target, ObjectTrack, Segment};
use sketchloop::seeded_rng;
use sketchloop::sketch::{
    iou, parse_sketch, serialize_sketch, Axis, BBox, FrameMeta, Keypoint, RotationArrow, Spin,
    TranslationArrow, VisualSketch,
};

const W: f64 = 640.0;
const H: f64 = 480.0;

fn frame() -> FrameMeta {
    FrameMeta::new("ego", W as u32, H as u32)
}

prop_compose! {
    fn valid_box()(x1 in 0.0..W - 2.0, y1 in 0.0..H - 2.0)
                  (x1 in Just(x1), y1 in Just(y1), x2 in x1 + 1.0..W, y2 in y1 + 1.0..H) -> BBox {
        BBox::new(x1, y1, x2, y2)
    }
}

fn point() -> impl Strategy<Value = Keypoint> {
    (0.0..=W, 0.0..=H, prop::option::of("[a-z]{1,6}"))
        .prop_map(|(x, y, label)| Keypoint { x, y, label })
}

fn sketch() -> impl Strategy<Value = VisualSketch> {
    (
        prop::collection::vec(valid_box(), 0..4),
        prop::collection::vec(point(), 0..6),
    )
        .prop_flat_map(|(boxes, points)| {
            let n = points.len();
            let arrows = if n < 2 {
                Just(Vec::new()).boxed()
            } else {
                // end = start + k (mod n) with k > 0 keeps the endpoints distinct
                prop::collection::vec((0..n, 1..n).prop_map(move |(a, k)| (a, (a + k) % n)), 0..4).boxed()
            };
            let rotations = if n == 0 {
                Just(Vec::new()).boxed()
            } else {
                prop::collection::vec((0..n, 0..3usize, any::<bool>()), 0..3).boxed()
            };
            (Just(boxes), Just(points), arrows, rotations)
        })
        .prop_map(|(boxes, points, arrows, rotations)| VisualSketch {
            frame: frame(),
            boxes,
            points,
            translation_arrows: arrows
                .into_iter()
                .map(|(start, end)| TranslationArrow { start, end })
                .collect(),
            rotation_arrows: rotations
                .into_iter()
                .map(|(center, a, cw)| RotationArrow {
                    center,
                    axis: [Axis::X, Axis::Y, Axis::Z][a],
                    dir: if cw { Spin::Cw } else { Spin::Ccw },
                })
                .collect(),
        })
}

fn area(b: &BBox) -> f64 {
    (b.x2 - b.x1) * (b.y2 - b.y1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in valid_box(), b in valid_box()) {
        let (ab, ba) = (iou(&a, &b), iou(&b, &a));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iou_matches_clipped_area(a in valid_box(), b in valid_box()) {
        let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
        let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
        let inter = iw * ih;
        let expected = inter / (area(&a) + area(&b) - inter);
        prop_assert!((iou(&a, &b) - expected).abs() < 1e-9);
    }

    #[test]
    fn quantized_sketches_round_trip(s in sketch()) {
        let q = s.quantized();
        let text = serialize_sketch(&q).unwrap();
        prop_assert!(!text.contains('\n'));
        prop_assert_eq!(parse_sketch(&text).unwrap(), q.clone());
        prop_assert_eq!(serialize_sketch(&parse_sketch(&text).unwrap()).unwrap(), text);
    }

    #[test]
    fn augmented_boxes_keep_overlap(b in valid_box(), seed in any::<u64>(), iou_min in 0.5..0.95f64) {
        let cfg = AugmentConfig { iou_min, ..AugmentConfig::default() };
        let out = perturb_box(&b, &frame(), &cfg, &mut seeded_rng(seed));
        prop_assert!(out.x1 < out.x2 && out.y1 < out.y2);
        prop_assert!(out.x1 >= 0.0 && out.y1 >= 0.0 && out.x2 <= W && out.y2 <= H);
        prop_assert!(iou(&b, &out) >= iou_min);
    }

    #[test]
    fn jittered_points_stay_in_disc_and_frame(p in point(), seed in any::<u64>(), c in 0.0..40.0f64) {
        let cfg = AugmentConfig { point_radius: Some(c), ..AugmentConfig::default() };
        let q = jitter_point(&p, &frame(), &cfg, &mut seeded_rng(seed));
        prop_assert!((q.x - p.x).hypot(q.y - p.y) <= c + 1e-9);
        prop_assert!((0.0..=W).contains(&q.x) && (0.0..=H).contains(&q.y));
        prop_assert_eq!(q.label, p.label);
    }

    #[test]
    fn augmentation_is_closed_over_valid_sketches(s in sketch(), seed in any::<u64>()) {
        let out = augment_sketch(&s, &AugmentConfig::default(), &mut seeded_rng(seed));
        prop_assert!(out.validate().is_ok());
        prop_assert_eq!(out.boxes.len(), s.boxes.len());
        prop_assert_eq!(out.points.len(), s.points.len());
        prop_assert_eq!(&out.translation_arrows, &s.translation_arrows);
        prop_assert_eq!(&out.rotation_arrows, &s.rotation_arrows);
    }

    #[test]
    fn segments_tile_the_trace(open in prop::collection::vec(any::<bool>(), 1..200)) {
        let segs = segment_subtasks(&open);
        prop_assert_eq!(segs.first().unwrap().start, 0);
        prop_assert_eq!(segs.last().unwrap().end, open.len());
        for w in segs.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
            // every cut is a gripper transition
            prop_assert_ne!(open[w[1].start], open[w[1].start - 1]);
        }
        for s in &segs {
            prop_assert!(s.start < s.end);
            prop_assert!(open[s.start..s.end].iter().all(|&o| o == open[s.start]));
        }
    }

    #[test]
    fn target_choice_ignores_track_order(
        moves in prop::collection::vec((0.0..100.0f64, 0.0..100.0f64), 1..6),
        rot in 0usize..6,
    ) {
        let seg = Segment { start: 0, end: 5 };
        let tracks: Vec<ObjectTrack> = moves
            .iter()
            .enumerate()
            .map(|(i, &(dx, dy))| ObjectTrack {
                id: i as u32,
                name: format!("o{i}"),
                half_extent: (5.0, 5.0),
                centroids: (0..5).map(|t| (100.0 + dx * t as f64 / 4.0, 100.0 + dy * t as f64 / 4.0)).collect(),
            })
            .collect();
        let mut shuffled = tracks.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        prop_assert_eq!(select_target(&tracks, &seg).unwrap(), select_target(&shuffled, &seg).unwrap());
    }
}
