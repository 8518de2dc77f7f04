//! Runs one simulated episode and prints its token trace and outcome.
//!
//! ```text
//! cargo run -p sketchloop --example closed_loop -- stack_blocks 3
//! ```

use anyhow::Result;
use sketchloop::control::token_trace;
use sketchloop::sim::{simulate_episode, EpisodeConfig, TaskKind};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let kind: TaskKind = args.next().as_deref().unwrap_or("stack_blocks").parse()?;
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let (ep, outcome) = simulate_episode(kind, seed, &[], &EpisodeConfig::default())?;
    println!("{}", ep.spec.instruction);
    for r in &ep.reasonings {
        println!("  t={:<4} {}", r.t, r.record.subtask);
    }
    let trace: Vec<String> = token_trace(&ep.log).iter().map(|(t, tok)| format!("{tok}@{t}")).collect();
    println!("tokens: {}", trace.join(" "));
    println!(
        "success={} steps={} subtasks={}/{}",
        outcome.success, outcome.steps, outcome.subtasks_completed, outcome.subtasks_total
    );
    Ok(())
}
