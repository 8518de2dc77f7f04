//! A reasoner that misplaces goals, with and without a supervisor that edits
//! its sketches before they are executed.

use anyhow::Result;
use sketchloop::sim::{EpisodeConfig, EpisodeRunner, GoalOffsetReasoner, OracleCorrector, TaskKind};

fn main() -> Result<()> {
    let cfg = EpisodeConfig { hitl_gate: true, ..EpisodeConfig::default() };
    let (mut raw, mut corrected) = (0, 0);
    let n = 20;
    for seed in 0..n {
        let (_, out) = EpisodeRunner::new(TaskKind::PlaceA2bRight, seed, cfg.clone())?
            .with_reasoner(GoalOffsetReasoner::default())
            .run();
        raw += out.success as u32;

        let (ep, out) = EpisodeRunner::new(TaskKind::PlaceA2bRight, seed, cfg.clone())?
            .with_reasoner(GoalOffsetReasoner::default())
            .with_supervisor(OracleCorrector::default())
            .run();
        corrected += out.success as u32;
        if seed == 0 {
            for r in ep.log.iter().filter_map(|r| r.note.as_deref()) {
                println!("audit: {r}");
            }
        }
    }
    println!("uncorrected {raw}/{n}, corrected {corrected}/{n}");
    Ok(())
}
