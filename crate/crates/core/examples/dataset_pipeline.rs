//! Turns simulated demonstrations into a reasoning/action corpus.
//!
//! ```text
//! cargo run -p sketchloop --example dataset_pipeline -- /tmp/corpus
//! ```

use std::path::PathBuf;

use anyhow::Result;
use sketchloop::dataset::{build_corpus, segment_subtasks, write_corpus, CorpusConfig};
use sketchloop::sim::{simulate_episode, EpisodeConfig, TaskKind};

fn main() -> Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/corpus".into()));
    let demos = (0..4)
        .map(|seed| Ok(simulate_episode(TaskKind::StackBlocks, seed, &[], &EpisodeConfig::default())?.0.to_demo()))
        .collect::<Result<Vec<_>>>()?;

    let segs = segment_subtasks(&demos[0].gripper_open);
    let spans: Vec<String> = segs.iter().map(|s| format!("[{}, {})", s.start, s.end)).collect();
    println!("{} segments: {}", demos[0].id, spans.join(" "));

    let cfg = CorpusConfig::parse("augment=true\nseed=3\nhorizon=8\n")?;
    let corpus = build_corpus(&demos, &cfg)?;
    for a in corpus.annotations.iter().take(4) {
        println!("  {} {:?} target={} {}", a.episode, (a.segment.start, a.segment.end), a.target, a.subtask);
    }
    for w in &corpus.warnings {
        println!("warning: {w}");
    }
    write_corpus(&corpus, &dir)?;
    println!(
        "{} reasoning and {} action records written to {}",
        corpus.index.reasoning_ids().len(),
        corpus.index.action_ids().len(),
        dir.display()
    );
    println!("first record: {}", corpus.records[0].to_line());
    Ok(())
}
