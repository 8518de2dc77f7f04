//! Sketch-conditioned robot control toolkit.
//!
//! A [`sketch::VisualSketch`] is a small set of boxes, keypoints and arrows
//! drawn on a camera image that says *what* to manipulate and *where* it
//! goes. Around it this crate provides:
//!
//! - [`sketch`]: the data model, validation and the canonical JSON record
//! - [`render`]: rasterizing sketches onto images, PPM I/O
//! - [`augment`]: box and point perturbations for training data
//! - [`sampler`]: mode-balanced sampling over reasoning/action corpora
//! - [`control`]: the token-gated reason/act loop with an approval gate
//! - [`sim`]: a deterministic tabletop simulator with scripted agents
//! - [`dataset`]: turning demonstrations into a mode-labeled corpus

pub mod augment;
pub mod control;
pub mod dataset;
pub mod render;
pub mod sampler;
pub mod sim;
pub mod sketch;

/// Generator used for every seeded draw in the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    use rand::SeedableRng;
    SimRng::seed_from_u64(seed)
}
