//! Sketch-conditioned scripted policy.
//!
//! The policy sees the installed sketch and the proprio vector only; it has
//! no access to the scene. It moves to the grasp point, closes, carries to
//! the goal point, tilts if the sketch asks for a rotation, and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::control::{ActionChunk, ActionPolicy, AgentError, LoopContext};

use super::world::{Camera, ACTION_DIM};

const CLOSE: [f64; ACTION_DIM] = [0.0, 0.0, 1.0, 0.0];
const OPEN: [f64; ACTION_DIM] = [0.0, 0.0, -1.0, 0.0];
const ARRIVAL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    pub camera: Camera,
    pub horizon: usize,
    pub max_step: f64,
}

impl ScriptedPolicy {
    pub fn new(camera: Camera) -> Self {
        Self {
            camera,
            horizon: 8,
            max_step: 2.5,
        }
    }
}

impl ActionPolicy for ScriptedPolicy {
    fn act(&mut self, ctx: &LoopContext) -> Result<ActionChunk, AgentError> {
        let sketch = ctx
            .current_sketch()
            .ok_or_else(|| AgentError::new("no sketch installed"))?;
        let (grasp, goal) = sketch
            .primary_arrow()
            .ok_or_else(|| AgentError::new("uninterpretable sketch: no translation arrow"))?;
        let tilt = sketch.rotation_arrows.first().map(|r| r.dir.signum());
        let [x, y, closed, loaded] = ctx.proprio[..] else {
            return Err(AgentError::new("proprio must be [x, y, closed, loaded]"));
        };
        let mut pos = (x, y);
        let loaded = loaded > 0.5;

        let mut actions: Vec<Vec<f64>> = Vec::with_capacity(self.horizon);
        if closed > 0.5 && !loaded {
            actions.push(OPEN.to_vec());
        }
        let target = if loaded {
            self.camera.pixel_to_world((goal.x, goal.y))
        } else {
            self.camera.pixel_to_world((grasp.x, grasp.y))
        };
        while actions.len() < self.horizon {
            let (dx, dy) = (target.0 - pos.0, target.1 - pos.1);
            let d = dx.hypot(dy);
            if d <= ARRIVAL_TOLERANCE {
                if loaded {
                    if let Some(sign) = tilt {
                        actions.push(vec![0.0, 0.0, 0.0, sign]);
                    }
                    actions.push(OPEN.to_vec());
                }
                let fill = if loaded { OPEN } else { CLOSE };
                while actions.len() < self.horizon {
                    actions.push(fill.to_vec());
                }
                break;
            }
            let k = if d > self.max_step { self.max_step / d } else { 1.0 };
            actions.push(vec![dx * k, dy * k, 0.0, 0.0]);
            pos = (pos.0 + dx * k, pos.1 + dy * k);
        }
        actions.truncate(self.horizon);
        ActionChunk::new(actions, ACTION_DIM).map_err(|e| AgentError::new(e.to_string()))
    }
}

/// Adds zero-mean Gaussian noise to the translation part of every move.
#[derive(Debug, Clone)]
pub struct NoisyPolicy<P> {
    pub inner: P,
    noise: Normal<f64>,
    rng: ChaCha8Rng,
}

impl<P> NoisyPolicy<P> {
    pub fn new(inner: P, sigma_cm: f64, seed: u64) -> Self {
        Self {
            inner,
            noise: Normal::new(0.0, sigma_cm.abs()).expect("finite sigma"),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl<P: ActionPolicy> ActionPolicy for NoisyPolicy<P> {
    fn act(&mut self, ctx: &LoopContext) -> Result<ActionChunk, AgentError> {
        let chunk = self.inner.act(ctx)?;
        let dim = chunk.dim();
        let mut actions = chunk.into_actions();
        for a in &mut actions {
            if a[0] != 0.0 || a[1] != 0.0 {
                a[0] += self.noise.sample(&mut self.rng);
                a[1] += self.noise.sample(&mut self.rng);
            }
        }
        ActionChunk::new(actions, dim).map_err(|e| AgentError::new(e.to_string()))
    }
}
