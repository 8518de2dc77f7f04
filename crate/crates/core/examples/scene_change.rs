//! Moves the active object mid-episode and shows the loop re-deliberating.

use anyhow::Result;
use sketchloop::control::{token_trace, ModeToken};
use sketchloop::sim::{simulate_episode, EpisodeConfig, ScheduledEvent, ScriptedEvent, TaskKind};

fn bor_count(log: &[sketchloop::control::AuditRecord]) -> usize {
    token_trace(log).iter().filter(|(_, t)| *t == ModeToken::Bor).count()
}

fn main() -> Result<()> {
    let cfg = EpisodeConfig::default();
    let (base, _) = simulate_episode(TaskKind::PlaceA2bLeft, 4, &[], &cfg)?;
    let events = [ScheduledEvent { t: 6, event: ScriptedEvent::SceneChange }];
    let (moved, outcome) = simulate_episode(TaskKind::PlaceA2bLeft, 4, &events, &cfg)?;

    println!("deliberations without disturbance: {}", bor_count(&base.log));
    println!("deliberations with a scene change at t=6: {}", bor_count(&moved.log));
    for r in &moved.reasonings {
        println!("  t={:<4} trigger={:<16} {}", r.t, r.trigger.as_str(), r.record.subtask);
    }
    println!("success={} steps={}", outcome.success, outcome.steps);
    Ok(())
}
