//! Injects one kind of fault per run and lets the classifier attribute the
//! resulting failures.

use std::collections::BTreeMap;

use anyhow::Result;
use sketchloop::sim::{
    EpisodeConfig, EpisodeRunner, GoalOffsetReasoner, NoisyPolicy, ReorderReasoner, ScriptedPolicy,
    TaskKind,
};

fn main() -> Result<()> {
    let mut table: BTreeMap<(&str, String), u32> = BTreeMap::new();
    for seed in 0..5 {
        for kind in TaskKind::ALL {
            for fault in ["dropped events", "reordered plan", "offset goals", "noisy actions"] {
                let cfg = EpisodeConfig { drop_events: fault == "dropped events", ..EpisodeConfig::default() };
                let runner = EpisodeRunner::new(kind, seed, cfg)?;
                let camera = runner.camera().clone();
                let runner = match fault {
                    "reordered plan" => runner.with_reasoner(ReorderReasoner),
                    "offset goals" => runner.with_reasoner(GoalOffsetReasoner::default()),
                    "noisy actions" => runner.with_policy(NoisyPolicy::new(ScriptedPolicy::new(camera), 3.0, seed)),
                    _ => runner,
                };
                let (_, out) = runner.run();
                let class = out.failure_class.map_or("success".to_string(), |c| c.to_string());
                *table.entry((fault, class)).or_default() += 1;
            }
        }
    }
    for ((fault, class), n) in table {
        println!("{fault:<16} -> {class:<20} {n}");
    }
    Ok(())
}
