//! Command-line front end. `main.rs` only forwards to [`run_cli`].
//!
//! Exit codes: 0 success, 1 task failure, 2 loop fault, 64 usage error,
//! 65 bad input data, 74 I/O error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use sketchloop::augment::{augment_sketch, AugmentConfig};
use sketchloop::dataset::{build_corpus, frame_ref, read_episodes, write_corpus, CorpusConfig, DemoEpisode};
use sketchloop::render::{image_digest, render_sketch, RasterImage, Rgb, SketchStyle};
use sketchloop::sampler::{write_manifest, CorpusIndex, Mode};
use sketchloop::seeded_rng;
use sketchloop::sim::{render_scene, simulate_episode, Episode, EpisodeConfig, EpisodeOutcome, ScheduledEvent, TaskKind};
use sketchloop::sketch::{parse_sketch_with_warnings, serialize_sketch};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_FAULT: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_IO: i32 = 74;

#[derive(Debug, Parser)]
#[command(name = "sketchloop", version, about = "Sketch-gated reasoning/acting loop toolkit")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "SKETCHLOOP_OUT")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run closed-loop episodes in the simulator.
    Run(RunArgs),
    /// Build a reasoning/action corpus from demonstrations.
    Dataset(DatasetArgs),
    /// Perturb sketch records.
    Augment(AugmentArgs),
    /// Draw a mode-balanced sample manifest from a corpus index.
    Sample(SampleArgs),
    /// Draw a sketch record onto a frame.
    Render(RenderArgs),
    /// Serve live sessions over a websocket.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: TaskKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of rollouts; rollout `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 1)]
    pub rollouts: u64,
    /// Worker threads for rollouts.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub hitl_gate: bool,
    #[arg(long)]
    pub budget: Option<u64>,
    /// Line-delimited scheduled events, e.g. `{"t":40,"event":"scene_change"}`.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Keep every n-th frame; 0 writes none. Defaults to every frame for a
    /// single run and none for multiple rollouts.
    #[arg(long)]
    pub frame_stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// `key=value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Demonstrations as line-delimited JSON; overrides the config's `input`.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Files with one sketch record per line.
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub iou_min: f64,
    /// Point jitter radius in pixels; defaults to 2% of the frame diagonal.
    #[arg(long)]
    pub point_radius: Option<f64>,
    /// Augmented copies per record.
    #[arg(long, default_value_t = 1)]
    pub copies: usize,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(short, long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// File holding one sketch record.
    #[arg(long)]
    pub sketch: PathBuf,
    /// Binary PPM to draw on; a white frame of the sketch's size when absent.
    #[arg(long)]
    pub frame: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long, default_value_t = 8)]
    pub max_sessions: usize,
    /// Delay between controller ticks, in milliseconds.
    #[arg(long, default_value_t = 20)]
    pub step_delay_ms: u64,
    #[arg(long)]
    pub budget: Option<u64>,
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse::<TaskKind>().map_err(|e| e.to_string())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            let mut cmd = Cli::command();
            cmd.build();
            let sub = args.iter().skip(1).find_map(|a| {
                let a = a.to_str()?;
                cmd.find_subcommand(a).map(|_| a.to_string())
            });
            let usage = match sub {
                Some(name) => cmd.find_subcommand_mut(&name).expect("found above").render_usage(),
                None => cmd.render_usage(),
            };
            eprintln!("\n{usage}");
            return EXIT_USAGE;
        }
    };
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a, &out),
        Command::Dataset(a) => cmd_dataset(&a, cli.out.as_deref()),
        Command::Augment(a) => cmd_augment(&a, &out).map(|_| 0),
        Command::Sample(a) => cmd_sample(&a, &out).map(|_| 0),
        Command::Render(a) => cmd_render(&a, &out).map(|_| 0),
        Command::Serve(a) => cmd_serve(&a).map(|_| 0),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<io::Error>()) {
                EXIT_IO
            } else {
                EXIT_DATA
            }
        }
    }
}

fn write_ppm(path: &Path, img: &RasterImage) -> Result<()> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    img.write_ppm(&mut w)?;
    w.flush()?;
    Ok(())
}

fn outcome_line(i: u64, o: &EpisodeOutcome) -> String {
    let mut s = format!(
        "rollout={i} task={} seed={} success={} steps={} subtasks={}/{}",
        o.task, o.seed, o.success, o.steps, o.subtasks_completed, o.subtasks_total
    );
    if let Some(c) = o.failure_class {
        s.push_str(&format!(" failure_class={c}"));
    }
    if o.fault.is_some() {
        s.push_str(" fault=true");
    }
    s
}

fn write_episode_artifacts(dir: &Path, ep: &Episode, outcome: &EpisodeOutcome, stride: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("log.jsonl"), ep.log_jsonl())?;
    let mut frames = Vec::new();
    if stride > 0 {
        fs::create_dir_all(dir.join("frames"))?;
        for (t, scene) in ep.scenes.iter().enumerate().step_by(stride) {
            let name = format!("frames/{t:05}.ppm");
            write_ppm(&dir.join(&name), &render_scene(scene, &ep.camera))?;
            frames.push(name);
        }
    }
    let manifest = json!({
        "outcome": outcome,
        "log": "log.jsonl",
        "frames": frames,
    });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn cmd_run(a: &RunArgs, out: &Path) -> Result<i32> {
    let events: Vec<ScheduledEvent> = match &a.events {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .enumerate()
                .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", p.display(), i + 1)))
                .collect::<Result<_>>()?
        }
        None => Vec::new(),
    };
    let mut cfg = EpisodeConfig {
        hitl_gate: a.hitl_gate,
        ..EpisodeConfig::default()
    };
    if let Some(b) = a.budget {
        cfg.budget = b;
    }
    let stride = a.frame_stride.unwrap_or(if a.rollouts == 1 { 1 } else { 0 });
    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.jobs.max(1)).build()?;
    let outcomes: Vec<EpisodeOutcome> = pool.install(|| {
        (0..a.rollouts)
            .into_par_iter()
            .map(|i| {
                let seed = a.seed.wrapping_add(i);
                let (ep, outcome) = simulate_episode(a.task, seed, &events, &cfg)?;
                let dir = out.join(format!("{}-{seed}", a.task));
                write_episode_artifacts(&dir, &ep, &outcome, stride)?;
                Ok(outcome)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let stdout = io::stdout();
    let mut w = stdout.lock();
    for (i, o) in outcomes.iter().enumerate() {
        writeln!(w, "{}", outcome_line(i as u64, o))?;
    }
    let successes = outcomes.iter().filter(|o| o.success).count();
    let faults = outcomes.iter().filter(|o| o.fault.is_some()).count();
    writeln!(
        w,
        "rollouts={} successes={successes} faults={faults} success_rate={:.4}",
        outcomes.len(),
        successes as f64 / outcomes.len().max(1) as f64
    )?;
    Ok(if faults > 0 {
        EXIT_FAULT
    } else if successes < outcomes.len() {
        EXIT_FAILURE
    } else {
        0
    })
}

/// Frame for a demonstration without simulator scenes: each object's box on
/// a plain background.
fn track_frame(ep: &DemoEpisode, t: usize) -> RasterImage {
    let mut img = RasterImage::new(ep.frame.width, ep.frame.height, Rgb([200, 200, 200]));
    for tr in &ep.tracks {
        let i = t.min(tr.centroids.len().saturating_sub(1));
        let Some(&(x, y)) = tr.centroids.get(i) else { continue };
        let (hw, hh) = tr.half_extent;
        img.fill_rect(
            (x - hw).round() as i64,
            (y - hh).round() as i64,
            (x + hw).round() as i64,
            (y + hh).round() as i64,
            Rgb([90, 90, 90]),
        );
    }
    img
}

pub fn cmd_dataset(a: &DatasetArgs, out_flag: Option<&Path>) -> Result<i32> {
    let mut cfg = match &a.config {
        Some(p) => CorpusConfig::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("in {}", p.display()))?,
        None => CorpusConfig::default(),
    };
    if let Some(p) = &a.input {
        cfg.input = Some(p.display().to_string());
    }
    let out = out_flag
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    let (demos, sims): (Vec<DemoEpisode>, Vec<Episode>) = match &cfg.input {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            (read_episodes(&text).with_context(|| format!("in {path}"))?, Vec::new())
        }
        None => {
            let kinds: Vec<TaskKind> = cfg
                .tasks
                .iter()
                .map(|t| parse_task(t).map_err(anyhow::Error::msg))
                .collect::<Result<_>>()?;
            let jobs: Vec<(TaskKind, u64)> = kinds
                .iter()
                .flat_map(|&k| (0..cfg.episodes as u64).map(move |s| (k, s)))
                .collect();
            let sims = jobs
                .par_iter()
                .map(|&(k, s)| Ok(simulate_episode(k, s, &[], &EpisodeConfig::default())?.0))
                .collect::<Result<Vec<_>>>()?;
            (sims.iter().map(Episode::to_demo).collect(), sims)
        }
    };

    let corpus = build_corpus(&demos, &cfg)?;
    write_corpus(&corpus, &out)?;
    let mut ann = BufWriter::new(fs::File::create(out.join("annotations.jsonl"))?);
    for a in &corpus.annotations {
        writeln!(ann, "{}", serde_json::to_string(a)?)?;
    }
    ann.flush()?;

    let frames = out.join("frames");
    for (id, t) in &corpus.frames {
        let i = demos.iter().position(|d| &d.id == id).context("frame of unknown episode")?;
        let img = match sims.get(i) {
            Some(ep) => render_scene(&ep.scenes[*t], &ep.camera),
            None => track_frame(&demos[i], *t),
        };
        let path = frames.join(frame_ref(id, *t));
        fs::create_dir_all(path.parent().expect("frame path has a parent"))?;
        write_ppm(&path, &img)?;
    }

    println!(
        "episodes={} reasoning_records={} action_records={} frames={} warnings={}",
        demos.len(),
        corpus.index.reasoning_ids().len(),
        corpus.index.action_ids().len(),
        corpus.frames.len(),
        corpus.warnings.len()
    );
    Ok(0)
}

pub fn cmd_augment(a: &AugmentArgs, out: &Path) -> Result<()> {
    let cfg = AugmentConfig {
        iou_min: a.iou_min,
        point_radius: a.point_radius,
        seed: a.seed,
        ..AugmentConfig::default()
    };
    cfg.check()?;
    fs::create_dir_all(out)?;
    let mut total = 0;
    for (fi, path) in a.paths.iter().enumerate() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut rng = seeded_rng(a.seed.wrapping_add(fi as u64));
        let name = path.file_name().context("input path has no file name")?;
        let dest = out.join(name);
        if dest == *path {
            bail!("refusing to overwrite input {}", path.display());
        }
        let mut w = BufWriter::new(fs::File::create(&dest)?);
        for (li, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed = parse_sketch_with_warnings(line)
                .with_context(|| format!("{}:{}", path.display(), li + 1))?;
            for w in &parsed.warnings {
                log::warn!("{}:{}: {w}", path.display(), li + 1);
            }
            for _ in 0..a.copies {
                let aug = augment_sketch(&parsed.sketch, &cfg, &mut rng);
                writeln!(w, "{}", serialize_sketch(&aug)?)?;
                total += 1;
            }
        }
        w.flush()?;
    }
    println!("files={} records={total}", a.paths.len());
    Ok(())
}

pub fn cmd_sample(a: &SampleArgs, out: &Path) -> Result<()> {
    let text = fs::read_to_string(&a.index).with_context(|| format!("reading {}", a.index.display()))?;
    let index = CorpusIndex::from_json(&text)?;
    let draws = index.draw(a.n, &mut seeded_rng(a.seed));
    fs::create_dir_all(out)?;
    let path = out.join("manifest.txt");
    let mut w = BufWriter::new(fs::File::create(&path)?);
    write_manifest(&mut w, &draws)?;
    w.flush()?;
    let reasoning = draws
        .iter()
        .filter(|id| index.mode_of(id) == Some(Mode::Reasoning))
        .count();
    println!(
        "drawn={} reasoning={reasoning} action={} reasoning_fraction={:.4} manifest={}",
        draws.len(),
        draws.len() - reasoning,
        reasoning as f64 / draws.len().max(1) as f64,
        path.display()
    );
    Ok(())
}

pub fn cmd_render(a: &RenderArgs, out: &Path) -> Result<()> {
    let text = fs::read_to_string(&a.sketch).with_context(|| format!("reading {}", a.sketch.display()))?;
    let sketch = parse_sketch_with_warnings(text.trim())?.sketch;
    let frame = match &a.frame {
        Some(p) => {
            let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            RasterImage::read_ppm(io::BufReader::new(f))?
        }
        None => RasterImage::new(sketch.frame.width, sketch.frame.height, Rgb::WHITE),
    };
    let img = render_sketch(&frame, &sketch, &SketchStyle::default())?;
    fs::create_dir_all(out)?;
    let path = out.join("render.ppm");
    write_ppm(&path, &img)?;
    println!(
        "input_digest={:016x} output_digest={:016x} image={}",
        image_digest(&frame),
        image_digest(&img),
        path.display()
    );
    Ok(())
}

pub fn cmd_serve(a: &ServeArgs) -> Result<()> {
    let cfg = sketchloop_server::ServerConfig {
        addr: a.addr,
        max_sessions: a.max_sessions,
        step_delay: Duration::from_millis(a.step_delay_ms),
        budget: a.budget,
        ..Default::default()
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(sketchloop_server::serve(cfg))?;
    Ok(())
}
