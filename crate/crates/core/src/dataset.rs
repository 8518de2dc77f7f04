//! Auto-annotation: turns demonstration episodes into a mode-labeled corpus.
//!
//! Episodes are cut into subtasks at gripper open/close transitions, the
//! object with the largest centroid displacement in each segment is taken
//! as its target, and a sketch (box, start point, goal point, arrow) is
//! derived from the target's track. Each segment yields one reasoning record;
//! every step yields one action record carrying the segment's sketch.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::augment::{augment_sketch, AugmentConfig, ConfigError};
use crate::sampler::{CorpusIndex, Mode, SamplerError};
use crate::seeded_rng;
use crate::sketch::{
    sketch_digest, write_record, Axis, BBox, FrameMeta, Keypoint, RotationArrow, Spin,
    TranslationArrow, VisualSketch,
};

/// Half-open step interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, t: usize) -> bool {
        t >= self.start && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTrack {
    pub id: u32,
    pub name: String,
    /// Pixel half width and half height of the object's footprint.
    pub half_extent: (f64, f64),
    /// Ego-view centroid after each step.
    pub centroids: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationMark {
    pub t: usize,
    pub axis: Axis,
    pub dir: Spin,
}

/// A recorded demonstration: gripper state, object tracks and actions, all
/// indexed by step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoEpisode {
    pub id: String,
    pub instruction: String,
    pub frame: FrameMeta,
    pub gripper_open: Vec<bool>,
    pub tracks: Vec<ObjectTrack>,
    pub actions: Vec<Vec<f64>>,
    #[serde(default)]
    pub rotations: Vec<RotationMark>,
}

impl DemoEpisode {
    pub fn steps(&self) -> usize {
        self.gripper_open.len()
    }

    pub fn check(&self) -> Result<(), DatasetError> {
        let t = self.steps();
        if t == 0 {
            return Err(DatasetError::Malformed(format!("{}: empty gripper trace", self.id)));
        }
        if self.actions.len() != t {
            return Err(DatasetError::Malformed(format!(
                "{}: {} actions for {t} steps",
                self.id,
                self.actions.len()
            )));
        }
        if let Some(tr) = self.tracks.iter().find(|tr| tr.centroids.len() != t) {
            return Err(DatasetError::Malformed(format!(
                "{}: track {} has {} centroids for {t} steps",
                self.id,
                tr.id,
                tr.centroids.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("no object tracks")]
    NoTracks,
    #[error("degenerate segment [{0}, {1}): start and end frame coincide")]
    Degenerate(usize, usize),
    #[error("malformed episode: {0}")]
    Malformed(String),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error(transparent)]
    Augment(#[from] ConfigError),
    #[error(transparent)]
    Index(#[from] SamplerError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Cuts a gripper trace at every step whose state differs from the previous one.
pub fn segment_subtasks(open: &[bool]) -> Vec<Segment> {
    if open.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut start = 0;
    for t in 1..open.len() {
        if open[t] != open[t - 1] {
            out.push(Segment { start, end: t });
            start = t;
        }
    }
    out.push(Segment {
        start,
        end: open.len(),
    });
    out
}

fn end_frame(seg: &Segment) -> usize {
    seg.end - 1
}

fn displacement(track: &ObjectTrack, seg: &Segment) -> f64 {
    let a = track.centroids[seg.start];
    let b = track.centroids[end_frame(seg)];
    (b.0 - a.0).hypot(b.1 - a.1)
}

/// Track with the largest centroid displacement between the first and last
/// frame of the segment; ties go to the smallest id.
pub fn select_target(tracks: &[ObjectTrack], seg: &Segment) -> Result<u32, DatasetError> {
    tracks
        .iter()
        .map(|tr| (displacement(tr, seg), tr.id))
        .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
        .map(|(_, id)| id)
        .ok_or(DatasetError::NoTracks)
}

/// Target box at the segment's first frame, clamped to the view.
pub fn start_box(track: &ObjectTrack, seg: &Segment, frame: &FrameMeta) -> BBox {
    let (cx, cy) = track.centroids[seg.start];
    BBox::from_center(cx, cy, track.half_extent.0, track.half_extent.1).clamped(frame)
}

pub fn derive_sketch(
    seg: &Segment,
    track: &ObjectTrack,
    target_box: BBox,
    frame: &FrameMeta,
    rotations: &[RotationMark],
) -> Result<VisualSketch, DatasetError> {
    if seg.is_empty() || end_frame(seg) == seg.start {
        return Err(DatasetError::Degenerate(seg.start, seg.end));
    }
    let (sx, sy) = track.centroids[seg.start];
    let (gx, gy) = track.centroids[end_frame(seg)];
    let mut s = VisualSketch::empty(frame.clone()).with_box(target_box);
    let a = s.push_point(Keypoint::labeled(sx, sy, "start"));
    let b = s.push_point(Keypoint::labeled(gx, gy, "goal"));
    s.translation_arrows.push(TranslationArrow { start: a, end: b });
    if let Some(r) = rotations.iter().find(|r| seg.contains(r.t)) {
        s.rotation_arrows.push(RotationArrow {
            center: b,
            axis: r.axis,
            dir: r.dir,
        });
    }
    Ok(s)
}

/// Corpus pipeline settings, read from a plain `key=value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub augment: bool,
    pub augment_cfg: AugmentConfig,
    /// Action chunk length stored with each action record.
    pub horizon: usize,
    /// Observation frames are kept every `frame_stride` steps and at every segment start.
    pub frame_stride: usize,
    pub out_dir: Option<String>,
    /// Episode source: a JSONL file of demonstrations. When absent the
    /// simulator generates `episodes` rollouts of `tasks`.
    pub input: Option<String>,
    pub episodes: usize,
    pub tasks: Vec<String>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            augment: true,
            augment_cfg: AugmentConfig::default(),
            horizon: 8,
            frame_stride: 10,
            out_dir: None,
            input: None,
            episodes: 10,
            tasks: vec!["stack_blocks".into()],
        }
    }
}

impl CorpusConfig {
    /// Parses `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| DatasetError::Config {
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| err(format!("{key}: not a number: {v:?}")))
            };
            let int = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| err(format!("{key}: not an integer: {v:?}")))
            };
            match key {
                "augment" => {
                    cfg.augment = value
                        .parse()
                        .map_err(|_| err(format!("augment: expected true/false, got {value:?}")))?
                }
                "iou_min" => cfg.augment_cfg.iou_min = num(value)?,
                "point_radius" => cfg.augment_cfg.point_radius = Some(num(value)?),
                "max_rejection_iters" => cfg.augment_cfg.max_rejection_iters = int(value)? as u32,
                "seed" => cfg.augment_cfg.seed = int(value)?,
                "horizon" => cfg.horizon = (int(value)? as usize).max(1),
                "frame_stride" => cfg.frame_stride = (int(value)? as usize).max(1),
                "out" => cfg.out_dir = Some(value.to_string()),
                "input" => cfg.input = Some(value.to_string()),
                "episodes" => cfg.episodes = int(value)? as usize,
                "tasks" => {
                    cfg.tasks = value
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect()
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        cfg.augment_cfg.check()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordContext {
    /// Relative path of the observation frame in the frames directory.
    pub observation: String,
    pub instruction: String,
    pub history: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sketch: Option<Box<RawValue>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecordTarget {
    Reasoning {
        rationale: String,
        subtask: String,
        sketch: Box<RawValue>,
    },
    Action {
        actions: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub mode: Mode,
    pub context: RecordContext,
    pub target: RecordTarget,
}

impl CorpusRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("corpus record serialization is infallible")
    }
}

/// Everything derived from one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAnnotation {
    pub episode: String,
    pub segment: Segment,
    pub target: u32,
    pub subtask: String,
    /// `None` when the segment is degenerate.
    #[serde(with = "crate::sketch::wire_opt")]
    pub sketch: Option<VisualSketch>,
    /// Sketch carried by the segment's action records.
    #[serde(with = "crate::sketch::wire_opt")]
    pub action_sketch: Option<VisualSketch>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub records: Vec<CorpusRecord>,
    pub index: CorpusIndex,
    pub annotations: Vec<SegmentAnnotation>,
    /// Observation frames the records refer to: `(episode id, step)`.
    pub frames: Vec<(String, usize)>,
    pub warnings: Vec<String>,
}

fn raw(sketch: &VisualSketch) -> Box<RawValue> {
    RawValue::from_string(write_record(sketch)).expect("canonical record is valid JSON")
}

pub fn frame_ref(episode: &str, t: usize) -> String {
    format!("{episode}/{t:05}.ppm")
}

fn episode_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Annotates the episodes and assembles reasoning and action records.
///
/// A degenerate segment (a single step) yields no reasoning record; its
/// steps carry the preceding segment's sketch, or are skipped when there is
/// none.
pub fn build_corpus(episodes: &[DemoEpisode], cfg: &CorpusConfig) -> Result<Corpus, DatasetError> {
    let mut records = Vec::new();
    let mut reasoning_ids = Vec::new();
    let mut action_ids = Vec::new();
    let mut annotations = Vec::new();
    let mut frames = Vec::new();
    let mut warnings = Vec::new();

    for (ei, ep) in episodes.iter().enumerate() {
        if let Err(e) = ep.check() {
            warnings.push(format!("skipping episode: {e}"));
            log::warn!("skipping episode: {e}");
            continue;
        }
        let segments = segment_subtasks(&ep.gripper_open);
        if segments.is_empty() {
            warnings.push(format!("{}: no segments, skipped", ep.id));
            continue;
        }
        let mut rng = seeded_rng(episode_seed(cfg.augment_cfg.seed, ei));
        let mut history: Vec<String> = Vec::new();
        let mut carried: Option<VisualSketch> = None;
        let mut frame_steps: Vec<usize> = (0..ep.steps()).step_by(cfg.frame_stride).collect();

        for (k, seg) in segments.iter().enumerate() {
            frame_steps.push(seg.start);
            let target = select_target(&ep.tracks, seg)?;
            let track = ep
                .tracks
                .iter()
                .find(|t| t.id == target)
                .ok_or(DatasetError::NoTracks)?;
            let derived = derive_sketch(
                seg,
                track,
                start_box(track, seg, &ep.frame),
                &ep.frame,
                &ep.rotations,
            );
            let (gx, gy) = track.centroids[seg.end - 1];
            let subtask = format!("move the {} to ({gx:.0}, {gy:.0})", track.name);
            let sketch = match derived {
                Ok(s) => Some(s),
                Err(e) => {
                    let msg = format!("{} segment {k}: {e}", ep.id);
                    log::warn!("{msg}");
                    warnings.push(msg);
                    None
                }
            };
            let action_sketch = match &sketch {
                Some(s) if cfg.augment => Some(augment_sketch(s, &cfg.augment_cfg, &mut rng)),
                Some(s) => Some(s.clone()),
                None => carried.clone(),
            };

            if let Some(s) = &sketch {
                let (sx, sy) = track.centroids[seg.start];
                let id = format!("{}/r{k:03}", ep.id);
                records.push(CorpusRecord {
                    id: id.clone(),
                    mode: Mode::Reasoning,
                    context: RecordContext {
                        observation: frame_ref(&ep.id, seg.start),
                        instruction: ep.instruction.clone(),
                        history: history.clone(),
                        sketch: None,
                    },
                    target: RecordTarget::Reasoning {
                        rationale: format!(
                            "The {} is at ({sx:.0}, {sy:.0}) and has to reach ({gx:.0}, {gy:.0}).",
                            track.name
                        ),
                        subtask: subtask.clone(),
                        sketch: raw(s),
                    },
                });
                reasoning_ids.push(id);
            }

            match &action_sketch {
                Some(a) => {
                    let sk = raw(a);
                    for t in seg.start..seg.end {
                        let mut chunk: Vec<Vec<f64>> = ep.actions
                            [t..(t + cfg.horizon).min(ep.steps())]
                            .to_vec();
                        let dim = chunk[0].len();
                        chunk.resize(cfg.horizon, vec![0.0; dim]);
                        let id = format!("{}/a{t:05}", ep.id);
                        let latest = t - t % cfg.frame_stride;
                        records.push(CorpusRecord {
                            id: id.clone(),
                            mode: Mode::Action,
                            context: RecordContext {
                                observation: frame_ref(&ep.id, latest.max(seg.start)),
                                instruction: ep.instruction.clone(),
                                history: history.clone(),
                                sketch: Some(sk.clone()),
                            },
                            target: RecordTarget::Action { actions: chunk },
                        });
                        action_ids.push(id);
                    }
                }
                None => {
                    let msg = format!(
                        "{} segment {k}: no sketch to attach, {} action steps skipped",
                        ep.id,
                        seg.len()
                    );
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
            }

            if sketch.is_some() {
                history.push(subtask.clone());
                carried = action_sketch.clone();
            }
            annotations.push(SegmentAnnotation {
                episode: ep.id.clone(),
                segment: *seg,
                target,
                subtask,
                sketch,
                action_sketch,
            });
        }
        frame_steps.sort_unstable();
        frame_steps.dedup();
        frames.extend(frame_steps.into_iter().map(|t| (ep.id.clone(), t)));
    }

    let index = CorpusIndex::new(reasoning_ids, action_ids)?;
    Ok(Corpus {
        records,
        index,
        annotations,
        frames,
        warnings,
    })
}

/// Digest of the sketch carried by an action record, if any.
pub fn record_sketch_digest(record: &CorpusRecord) -> Option<u64> {
    let raw = record.context.sketch.as_ref()?;
    let value: serde_json::Value = serde_json::from_str(raw.get()).ok()?;
    let parsed = crate::sketch::parse_sketch_value(&value).ok()?;
    Some(sketch_digest(&parsed.sketch))
}

/// Writes `corpus.jsonl` and `index.json` into `dir` and creates `dir/frames`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir.join("frames"))?;
    let mut w = BufWriter::new(fs::File::create(dir.join("corpus.jsonl"))?);
    for r in &corpus.records {
        writeln!(w, "{}", r.to_line())?;
    }
    w.flush()?;
    fs::write(dir.join("index.json"), corpus.index.to_json())?;
    Ok(())
}

/// Reads demonstrations from line-delimited JSON.
pub fn read_episodes(text: &str) -> Result<Vec<DemoEpisode>, DatasetError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(DatasetError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(closed: &[(usize, usize)], t: usize) -> Vec<bool> {
        (0..t)
            .map(|i| !closed.iter().any(|&(a, b)| i >= a && i < b))
            .collect()
    }

    // brute force: list every t with a state change, then pair them up
    fn oracle_segments(open: &[bool]) -> Vec<(usize, usize)> {
        let mut cuts = vec![0];
        cuts.extend((1..open.len()).filter(|&t| open[t] != open[t - 1]));
        cuts.push(open.len());
        cuts.windows(2).map(|w| (w[0], w[1])).collect()
    }

    #[test]
    fn segmentation_examples() {
        assert_eq!(
            segment_subtasks(&[true; 100]),
            vec![Segment { start: 0, end: 100 }]
        );
        let open = trace(&[(10, 40)], 60);
        let segs: Vec<(usize, usize)> = segment_subtasks(&open)
            .iter()
            .map(|s| (s.start, s.end))
            .collect();
        assert_eq!(segs, vec![(0, 10), (10, 40), (40, 60)]);
        assert_eq!(segs, oracle_segments(&open));
        let alt = [true, false, true, false];
        assert_eq!(segment_subtasks(&alt).len(), 4);
        assert!(segment_subtasks(&alt).iter().all(|s| s.len() == 1));
    }

    fn track(id: u32, from: (f64, f64), to: (f64, f64), t: usize) -> ObjectTrack {
        ObjectTrack {
            id,
            name: format!("obj{id}"),
            half_extent: (10.0, 10.0),
            centroids: (0..t)
                .map(|i| {
                    let f = i as f64 / (t - 1) as f64;
                    (from.0 + f * (to.0 - from.0), from.1 + f * (to.1 - from.1))
                })
                .collect(),
        }
    }

    #[test]
    fn target_selection() {
        let seg = Segment { start: 0, end: 10 };
        let a = track(0, (0.0, 0.0), (50.0, 0.0), 10);
        let b = track(1, (5.0, 5.0), (5.0, 5.0), 10);
        assert_eq!(select_target(&[b.clone(), a.clone()], &seg).unwrap(), 0);
        let c = track(2, (0.0, 0.0), (30.0, 0.0), 10);
        let d = track(7, (100.0, 0.0), (100.0, 30.0), 10);
        assert_eq!(select_target(&[d.clone(), c.clone()], &seg).unwrap(), 2);
        assert_eq!(select_target(&[c, d], &seg).unwrap(), 2);
        assert!(matches!(select_target(&[], &seg), Err(DatasetError::NoTracks)));
    }

    #[test]
    fn derived_sketch_anchors_and_degeneracy() {
        let frame = FrameMeta::new("ego", 640, 480);
        let tr = track(3, (100.0, 100.0), (300.0, 200.0), 5);
        let seg = Segment { start: 0, end: 5 };
        let s = derive_sketch(&seg, &tr, start_box(&tr, &seg, &frame), &frame, &[]).unwrap();
        let (p, q) = s.primary_arrow().unwrap();
        assert_eq!((p.x, p.y, q.x, q.y), (100.0, 100.0, 300.0, 200.0));
        assert!(s.validate().is_ok());
        assert!(s.rotation_arrows.is_empty());
        let rot = [RotationMark {
            t: 2,
            axis: Axis::X,
            dir: Spin::Cw,
        }];
        let s = derive_sketch(&seg, &tr, start_box(&tr, &seg, &frame), &frame, &rot).unwrap();
        assert_eq!(s.rotation_arrows.len(), 1);
        let unit = Segment { start: 2, end: 3 };
        assert!(matches!(
            derive_sketch(&unit, &tr, start_box(&tr, &unit, &frame), &frame, &[]),
            Err(DatasetError::Degenerate(2, 3))
        ));
    }

    fn demo(t: usize, closed: &[(usize, usize)]) -> DemoEpisode {
        DemoEpisode {
            id: "ep".into(),
            instruction: "do it".into(),
            frame: FrameMeta::new("ego", 640, 480),
            gripper_open: trace(closed, t),
            tracks: vec![
                track(0, (100.0, 100.0), (300.0, 200.0), t),
                track(1, (400.0, 300.0), (400.0, 300.0), t),
            ],
            actions: vec![vec![0.0; 4]; t],
            rotations: vec![],
        }
    }

    #[test]
    fn counts_follow_segments_and_steps() {
        let ep = demo(90, &[(30, 60)]);
        let corpus = build_corpus(&[ep], &CorpusConfig::default()).unwrap();
        assert_eq!(corpus.index.reasoning_ids().len(), 3);
        assert_eq!(corpus.index.action_ids().len(), 90);
    }

    #[test]
    fn action_records_share_segment_digest() {
        let ep = demo(40, &[(10, 25)]);
        let corpus = build_corpus(&[ep], &CorpusConfig::default()).unwrap();
        let digests: Vec<u64> = corpus
            .records
            .iter()
            .filter(|r| r.mode == Mode::Action)
            .map(|r| record_sketch_digest(r).unwrap())
            .collect();
        assert_eq!(digests.len(), 40);
        assert!(digests[..10].iter().all(|&d| d == digests[0]));
        assert!(digests[10..25].iter().all(|&d| d == digests[10]));
        assert_ne!(digests[0], digests[10]);
    }

    #[test]
    fn config_parsing() {
        let cfg = CorpusConfig::parse("# corpus\niou_min = 0.9\nseed=7\naugment=false\ntasks=stack_blocks, tidy_table\n").unwrap();
        assert_eq!(cfg.augment_cfg.iou_min, 0.9);
        assert_eq!(cfg.augment_cfg.seed, 7);
        assert!(!cfg.augment);
        assert_eq!(cfg.tasks, vec!["stack_blocks", "tidy_table"]);
        assert!(matches!(
            CorpusConfig::parse("colour=red"),
            Err(DatasetError::Config { line: 1, .. })
        ));
        assert!(CorpusConfig::parse("iou_min=1.5").is_err());
    }
}
