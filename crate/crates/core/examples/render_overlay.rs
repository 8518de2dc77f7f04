//! Renders a sketch over a simulator frame and writes both as PPM files.
//!
//! ```text
//! cargo run -p sketchloop --example render_overlay -- /tmp/overlay
//! ```

use std::fs;
use std::path::PathBuf;

use anyhow::Result;
use sketchloop::render::{image_digest, render_sketch, SketchStyle};
use sketchloop::sim::{oracle_reason, render_scene, setup, Camera, TaskKind, TABLE};

fn main() -> Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/overlay".into()));
    fs::create_dir_all(&dir)?;

    let (task, scene) = setup(TaskKind::TidyTable, 1)?;
    let camera = Camera::tabletop(&TABLE);
    let frame = render_scene(&scene, &camera);
    let proposal = oracle_reason(&scene, &task, &camera)?;
    println!("subtask: {}", proposal.subtask);

    let overlay = render_sketch(&frame, &proposal.sketch, &SketchStyle::default())?;
    fs::write(dir.join("frame.ppm"), frame.to_ppm())?;
    fs::write(dir.join("overlay.ppm"), overlay.to_ppm())?;
    println!("frame   {:016x}", image_digest(&frame));
    println!("overlay {:016x}", image_digest(&overlay));
    println!("written to {}", dir.display());
    Ok(())
}
