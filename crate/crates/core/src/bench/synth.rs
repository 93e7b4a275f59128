//! Synthetic benchmarks with a known ground truth.
//!
//! For task `t` and architecture `A` with per-layer decisions `d_i`:
//!
//! ```text
//! score_t(A) = Σ_i u_{t,i}(d_i) + λ Σ_{i<j} w_{t,i,j}(d_i, d_j) + σ ε(A, t)
//! ```
//!
//! `u` and `w` are uniform on [0, 1) and `ε` is standard normal, each drawn
//! from the keyed generator in [`super::keyed`]. With a task correlation
//! `ρ > 0`, `u` and `w` blend a task-specific draw with one shared by all
//! tasks: `(1 - ρ)·draw_t + ρ·draw_shared`, so related tasks agree on which
//! choices are good while still differing in detail.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::keyed::{hash_str, hash_words, standard_normal, uniform};
use super::{BenchError, BenchmarkTable, TaskSpec};
use crate::space::{Architecture, SpaceDescriptor};

/// Largest space a synthetic table will be generated for.
pub const SYNTH_CAP: u64 = 1_000_000;

const TAG_UNARY: u64 = 0x75;
const TAG_PAIR: u64 = 0x77;
const TAG_NOISE: u64 = 0x65;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    /// λ, weight of the pairwise terms.
    pub interaction: f64,
    /// σ, scale of the per-architecture noise.
    pub noise: f64,
    /// ρ in [0, 1]; 0 draws every task independently.
    #[serde(default)]
    pub task_correlation: f64,
}

impl SynthParams {
    pub fn new(seed: u64, interaction: f64, noise: f64) -> Self {
        SynthParams {
            seed,
            interaction,
            noise,
            task_correlation: 0.0,
        }
    }

    pub fn with_task_correlation(mut self, rho: f64) -> Self {
        self.task_correlation = rho;
        self
    }

    fn check(&self) -> Result<(), BenchError> {
        let ok = self.interaction >= 0.0
            && self.noise >= 0.0
            && (0.0..=1.0).contains(&self.task_correlation)
            && self.interaction.is_finite()
            && self.noise.is_finite();
        if ok {
            Ok(())
        } else {
            Err(BenchError::Schema(format!("invalid synthetic parameters {self:?}")))
        }
    }
}

fn shared_task() -> u64 {
    hash_str("\u{0}shared")
}

/// Per-layer decision key: (operator index, hash of the source list).
fn decisions(space: &SpaceDescriptor, arch: &Architecture) -> Vec<(u64, u64)> {
    space
        .layers()
        .iter()
        .zip(&arch.choices)
        .map(|(slot, c)| {
            let op = slot.op_index(&c.op).expect("architecture belongs to the space") as u64;
            let srcs: Vec<&str> = c.sources.iter().map(|s| s.as_str()).collect();
            (op, hash_str(&srcs.join("+")))
        })
        .collect()
}

fn blended(params: &SynthParams, task: u64, key: &[u64]) -> f64 {
    let mut words = vec![params.seed, task];
    words.extend_from_slice(key);
    let own = uniform(&words);
    if params.task_correlation == 0.0 {
        return own;
    }
    words[1] = shared_task();
    let shared = uniform(&words);
    (1.0 - params.task_correlation) * own + params.task_correlation * shared
}

/// `u_{t,i}(d)`.
pub fn unary_term(params: &SynthParams, task: &str, layer: usize, decision: (u64, u64)) -> f64 {
    blended(
        params,
        hash_str(task),
        &[TAG_UNARY, layer as u64, decision.0, decision.1],
    )
}

fn score_with(params: &SynthParams, task: u64, d: &[(u64, u64)]) -> f64 {
    let mut total = 0.0;
    for (i, di) in d.iter().enumerate() {
        total += blended(params, task, &[TAG_UNARY, i as u64, di.0, di.1]);
    }
    if params.interaction > 0.0 {
        let mut pairs = 0.0;
        for i in 0..d.len() {
            for j in i + 1..d.len() {
                pairs += blended(
                    params,
                    task,
                    &[TAG_PAIR, i as u64, j as u64, d[i].0, d[i].1, d[j].0, d[j].1],
                );
            }
        }
        total += params.interaction * pairs;
    }
    if params.noise > 0.0 {
        let flat: Vec<u64> = d.iter().flat_map(|&(a, b)| [a, b]).collect();
        total += params.noise * standard_normal(&[params.seed, task, TAG_NOISE, hash_words(&flat)]);
    }
    total
}

/// Higher-is-better synthetic score of one architecture, computed in isolation.
pub fn synth_score(space: &SpaceDescriptor, params: &SynthParams, task: &str, arch: &Architecture) -> f64 {
    score_with(params, hash_str(task), &decisions(space, arch))
}

/// Exhaustive synthetic table over `space`.
///
/// Minimized tasks store the negated score, so normalized values equal the
/// score for every task.
pub fn synth_generate(
    space: &SpaceDescriptor,
    params: &SynthParams,
    tasks: &[TaskSpec],
) -> Result<BenchmarkTable, BenchError> {
    params.check()?;
    let archs = space.enumerate(SYNTH_CAP).map_err(|_| BenchError::TooLarge {
        cardinality: space.cardinality(None).map(|c| c.to_string()).unwrap_or_default(),
        cap: SYNTH_CAP,
    })?;
    let task_keys: Vec<u64> = tasks.iter().map(|t| hash_str(&t.name)).collect();
    let mut records = BTreeMap::new();
    for arch in archs {
        let d = decisions(space, &arch);
        let row = tasks
            .iter()
            .zip(&task_keys)
            .map(|(t, &tk)| t.direction.denormalize(score_with(params, tk, &d)))
            .collect();
        records.insert(arch.key(), row);
    }
    let mut names = std::collections::BTreeSet::new();
    if let Some(t) = tasks.iter().find(|t| !names.insert(t.name.as_str())) {
        return Err(BenchError::Schema(format!("task `{}` declared twice", t.name)));
    }
    Ok(BenchmarkTable {
        space: space.clone(),
        tasks: tasks.to_vec(),
        complete: true,
        records,
    })
}
