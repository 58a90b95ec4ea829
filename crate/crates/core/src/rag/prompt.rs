use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::GeoPoint;

/// Bumped whenever the rendered text changes.
pub const PROMPT_TEMPLATE_VERSION: u32 = 1;

pub const DEFAULT_TEMPERATURE: f64 = 1.2;

const INSTRUCTION: &str = "You are given a photo. Estimate the latitude and longitude where it was taken.";
const FORMAT_LINE: &str = "Answer only: latitude, longitude";

/// Reference counts for one prompt; `(0, 0)` is the zero-shot prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub n_pos: usize,
    pub n_neg: usize,
}

impl PromptSpec {
    pub const fn new(n_pos: usize, n_neg: usize) -> Self {
        Self { n_pos, n_neg }
    }

    pub fn is_zero_shot(&self) -> bool {
        self.n_pos == 0 && self.n_neg == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSet {
    pub specs: Vec<PromptSpec>,
    /// Generations per prompt (N).
    pub n_generations: usize,
    /// Retrieved coordinates appended to the pool (S).
    pub s_retrieved: usize,
    pub temperature: f64,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            specs: [(0, 0), (5, 5), (10, 10), (15, 15)]
                .into_iter()
                .map(|(p, n)| PromptSpec::new(p, n))
                .collect(),
            n_generations: 5,
            s_retrieved: 0,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

impl PromptSet {
    pub fn validate(&self) -> Result<()> {
        if self.specs.is_empty() {
            return Err(Error::usage("a prompt set needs at least one prompt"));
        }
        if self.n_generations == 0 {
            return Err(Error::usage("n_generations must be at least 1"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::usage("temperature must be positive"));
        }
        Ok(())
    }

    /// m = K × N + S, the pool size when every generation parses.
    pub fn pool_capacity(&self) -> usize {
        self.specs.len() * self.n_generations + self.s_retrieved
    }

    /// Similar references needed by the largest prompt or the retrieved tail.
    pub fn positives_needed(&self) -> usize {
        self.specs.iter().map(|s| s.n_pos).max().unwrap_or(0).max(self.s_retrieved)
    }

    pub fn negatives_needed(&self) -> usize {
        self.specs.iter().map(|s| s.n_neg).max().unwrap_or(0)
    }
}

/// Renders the prompt text. Reference sections are omitted when empty.
pub fn render_prompt(spec: PromptSpec, pos: &[GeoPoint], neg: &[GeoPoint]) -> Result<String> {
    if pos.len() != spec.n_pos || neg.len() != spec.n_neg {
        return Err(Error::usage(format!(
            "prompt expects {} similar and {} dissimilar references, got {} and {}",
            spec.n_pos,
            spec.n_neg,
            pos.len(),
            neg.len()
        )));
    }
    let mut out = String::new();
    out.push_str(INSTRUCTION);
    out.push('\n');
    for (title, points) in [("Similar locations:", pos), ("Dissimilar locations:", neg)] {
        if points.is_empty() {
            continue;
        }
        out.push_str(title);
        out.push('\n');
        for p in points {
            writeln!(out, "{:.4}, {:.4}", p.lat(), p.lon()).unwrap();
        }
    }
    out.push_str(FORMAT_LINE);
    out.push('\n');
    Ok(out)
}
