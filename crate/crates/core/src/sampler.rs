//! Mode-balanced sampling over a mixed reasoning/action corpus.
//!
//! A record in the reasoning set is drawn with probability `1 / (2 |D_R|)`
//! and a record in the action set with `1 / (2 |D_A|)`, so each mode receives
//! half of the mass no matter how lopsided the corpus is. When one set is
//! empty the other gets all the mass, uniformly.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Reasoning,
    Action,
}

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("corpus index is empty")]
    Empty,
    #[error("record id {0:?} appears more than once")]
    Duplicate(String),
    #[error("unknown record id {0:?}")]
    UnknownId(String),
    #[error("index file: {0}")]
    Format(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// On-disk shape of `index.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexFile {
    reasoning: Vec<String>,
    action: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CorpusIndex {
    reasoning: Vec<String>,
    action: Vec<String>,
    modes: HashMap<String, Mode>,
}

impl CorpusIndex {
    pub fn new(reasoning: Vec<String>, action: Vec<String>) -> Result<Self, SamplerError> {
        if reasoning.is_empty() && action.is_empty() {
            return Err(SamplerError::Empty);
        }
        let mut modes = HashMap::with_capacity(reasoning.len() + action.len());
        for (ids, mode) in [(&reasoning, Mode::Reasoning), (&action, Mode::Action)] {
            for id in ids {
                if modes.insert(id.clone(), mode).is_some() {
                    return Err(SamplerError::Duplicate(id.clone()));
                }
            }
        }
        Ok(Self {
            reasoning,
            action,
            modes,
        })
    }

    pub fn reasoning_ids(&self) -> &[String] {
        &self.reasoning
    }

    pub fn action_ids(&self) -> &[String] {
        &self.action
    }

    pub fn len(&self) -> usize {
        self.reasoning.len() + self.action.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode_of(&self, id: &str) -> Option<Mode> {
        self.modes.get(id).copied()
    }

    /// Mass assigned to each mode; sums to one.
    pub fn mode_weights(&self) -> (f64, f64) {
        match (self.reasoning.is_empty(), self.action.is_empty()) {
            (false, false) => (0.5, 0.5),
            (true, _) => (0.0, 1.0),
            (_, true) => (1.0, 0.0),
        }
    }

    pub fn sample_probability(&self, id: &str) -> Result<f64, SamplerError> {
        let mode = self
            .mode_of(id)
            .ok_or_else(|| SamplerError::UnknownId(id.to_string()))?;
        let (wr, wa) = self.mode_weights();
        Ok(match mode {
            Mode::Reasoning => wr / self.reasoning.len() as f64,
            Mode::Action => wa / self.action.len() as f64,
        })
    }

    /// `n` draws with replacement: a fair mode coin, then a uniform pick
    /// within the chosen mode.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&str> {
        let (wr, _) = self.mode_weights();
        (0..n)
            .map(|_| {
                let pool = if wr == 1.0 || (wr > 0.0 && rng.random_bool(wr)) {
                    &self.reasoning
                } else {
                    &self.action
                };
                pool[rng.random_range(0..pool.len())].as_str()
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&IndexFile {
            reasoning: self.reasoning.clone(),
            action: self.action.clone(),
        })
        .expect("index serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, SamplerError> {
        let file: IndexFile = serde_json::from_str(text)?;
        Self::new(file.reasoning, file.action)
    }
}

/// One id per line, newline-terminated.
pub fn write_manifest<W: Write, S: AsRef<str>>(mut w: W, ids: &[S]) -> io::Result<()> {
    for id in ids {
        writeln!(w, "{}", id.as_ref())?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(r: R) -> io::Result<Vec<String>> {
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| l.map(|s| s.trim().to_string()))
        .collect()
}
