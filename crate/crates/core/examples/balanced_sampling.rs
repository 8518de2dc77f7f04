//! Draws a mode-balanced manifest from a lopsided corpus index.

use anyhow::Result;
use sketchloop::sampler::{CorpusIndex, Mode};
use sketchloop::seeded_rng;

fn main() -> Result<()> {
    let reasoning: Vec<String> = (0..3).map(|i| format!("ep0/r{i:03}")).collect();
    let action: Vec<String> = (0..120).map(|t| format!("ep0/a{t:05}")).collect();
    let index = CorpusIndex::new(reasoning, action)?;

    let (wr, wa) = index.mode_weights();
    println!("mode weights: reasoning {wr:.2}, action {wa:.2}");
    println!("P(ep0/r000) = {:.4}", index.sample_probability("ep0/r000")?);
    println!("P(ep0/a00000) = {:.5}", index.sample_probability("ep0/a00000")?);

    let draws = index.draw(10_000, &mut seeded_rng(7));
    let r = draws.iter().filter(|id| index.mode_of(id) == Some(Mode::Reasoning)).count();
    println!("reasoning fraction over 10000 draws: {:.4}", r as f64 / draws.len() as f64);
    Ok(())
}
