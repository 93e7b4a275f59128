//! Frequency-based reasoning: no model, fully deterministic.

use serde::{Deserialize, Serialize};

use super::{Archive, Reasoner, ReasonerError};
use crate::principle::{Allowed, DesignPrinciple, LayerPrinciple, PrincipleError, Provenance};
use crate::space::SpaceDescriptor;

pub const STAT_BACKEND: &str = "stat";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatParams {
    /// Operators kept per layer.
    pub keep_m: usize,
    /// Sources kept per layer; `None` leaves sources unrestricted.
    pub keep_s: Option<usize>,
    /// Fraction of the previous allowed set carried through an adaptation.
    pub retention: f64,
    /// Fill an adapted set back up to `keep_m` with unseen candidates.
    pub pad: bool,
}

impl Default for StatParams {
    fn default() -> Self {
        StatParams {
            keep_m: 2,
            keep_s: None,
            retention: 0.0,
            pad: true,
        }
    }
}

impl StatParams {
    fn check(&self, space: &SpaceDescriptor) -> Result<(), ReasonerError> {
        let min_ops = space.layers().iter().map(|l| l.candidate_ops.len()).min().unwrap_or(0);
        if self.keep_m == 0 || self.keep_m > min_ops {
            return Err(ReasonerError::Params(format!(
                "keep_m must be in 1..={min_ops}, got {}",
                self.keep_m
            )));
        }
        if self.keep_s == Some(0) {
            return Err(ReasonerError::Params("keep_s must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.retention) {
            return Err(ReasonerError::Params(format!(
                "retention must be in [0, 1], got {}",
                self.retention
            )));
        }
        Ok(())
    }
}

/// Candidate indices ordered by count (descending), then candidate order.
fn ranking(counts: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..counts.len()).collect();
    idx.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    idx
}

struct LayerStats {
    op_counts: Vec<usize>,
    source_counts: Vec<usize>,
}

fn layer_stats(archive: &Archive, space: &SpaceDescriptor) -> Vec<LayerStats> {
    space
        .layers()
        .iter()
        .enumerate()
        .map(|(i, slot)| {
            let mut op_counts = vec![0; slot.candidate_ops.len()];
            let mut source_counts = vec![0; slot.candidate_sources.len()];
            for e in archive.entries() {
                let Some(choice) = e.arch.choices.get(i) else { continue };
                if let Some(k) = slot.op_index(&choice.op) {
                    op_counts[k] += 1;
                }
                for s in &choice.sources {
                    if let Some(k) = slot.candidate_sources.iter().position(|c| c == s) {
                        source_counts[k] += 1;
                    }
                }
            }
            LayerStats {
                op_counts,
                source_counts,
            }
        })
        .collect()
}

/// The `keep` best-ranked indices; zero-count candidates only when `pad`.
fn select(counts: &[usize], keep: usize, pad: bool) -> Vec<usize> {
    ranking(counts)
        .into_iter()
        .filter(|&k| pad || counts[k] > 0)
        .take(keep)
        .collect()
}

fn names(candidates: &[String], picked: &[usize]) -> Allowed {
    let mut picked = picked.to_vec();
    picked.sort_unstable();
    picked.dedup();
    Allowed::Only(picked.into_iter().map(|k| candidates[k].clone()).collect())
}

fn source_names(space: &SpaceDescriptor, layer: usize) -> Vec<String> {
    space.layers()[layer]
        .candidate_sources
        .iter()
        .map(|s| s.as_str().to_string())
        .collect()
}

/// Widens source sets, by frequency, until every group can be satisfied.
fn make_satisfiable(
    space: &SpaceDescriptor,
    mut per_layer: Vec<LayerPrinciple>,
    rationale: Vec<String>,
    provenance: Provenance,
    stats: Option<&[LayerStats]>,
) -> Result<DesignPrinciple, ReasonerError> {
    loop {
        let p = DesignPrinciple::new(space, per_layer.clone(), rationale.clone(), provenance.clone())?;
        let layer = match p.to_constraints(space) {
            Ok(_) => return Ok(p),
            Err(PrincipleError::ArityUnsatisfiable(layer)) => layer,
            Err(e) => return Err(e.into()),
        };
        let mut widened = false;
        for i in space.group_layers(layer) {
            let candidates = source_names(space, i);
            let Allowed::Only(current) = &p.per_layer()[i].allowed_sources else {
                continue;
            };
            let order = match stats {
                Some(s) => ranking(&s[i].source_counts),
                None => (0..candidates.len()).collect(),
            };
            if let Some(next) = order.into_iter().find(|&k| !current.contains(&candidates[k])) {
                let mut kept: Vec<usize> = current
                    .iter()
                    .filter_map(|n| candidates.iter().position(|c| c == n))
                    .collect();
                kept.push(next);
                per_layer[i].allowed_sources = names(&candidates, &kept);
                widened = true;
            }
        }
        if !widened {
            return Err(PrincipleError::ArityUnsatisfiable(layer).into());
        }
    }
}

fn describe(space: &SpaceDescriptor, per_layer: &[LayerPrinciple], stats: &[LayerStats], n: usize) -> Vec<String> {
    let mut out = Vec::new();
    for (i, (lp, st)) in per_layer.iter().zip(stats).enumerate() {
        if let Allowed::Only(ops) = &lp.allowed_ops {
            let slot = &space.layers()[i];
            let parts: Vec<String> = ops
                .iter()
                .map(|o| format!("{o} ({}/{n})", st.op_counts[slot.op_index(o).unwrap_or(0)]))
                .collect();
            out.push(format!("Layer {i}: favour {}.", parts.join(", ")));
        }
        if let Allowed::Only(srcs) = &lp.allowed_sources {
            out.push(format!("Layer {i}: take inputs from {}.", srcs.join(", ")));
        }
    }
    out
}

/// Keeps the `keep_m` most frequent operators per layer (and `keep_s`
/// sources when set), ties broken by candidate order.
pub fn stat_learn(
    archive: &Archive,
    space: &SpaceDescriptor,
    params: &StatParams,
) -> Result<DesignPrinciple, ReasonerError> {
    if archive.is_empty() {
        return Err(ReasonerError::EmptyArchive);
    }
    params.check(space)?;
    let stats = layer_stats(archive, space);
    let per_layer: Vec<LayerPrinciple> = space
        .layers()
        .iter()
        .zip(&stats)
        .enumerate()
        .map(|(i, (slot, st))| LayerPrinciple {
            allowed_ops: names(&slot.candidate_ops, &select(&st.op_counts, params.keep_m, true)),
            allowed_sources: match params.keep_s {
                Some(s) if slot.has_source_choice() => {
                    names(&source_names(space, i), &select(&st.source_counts, s, true))
                }
                _ => Allowed::All,
            },
        })
        .collect();
    let mut rationale = vec![format!(
        "Most frequent choices among the top {} architectures for {}.",
        archive.len(),
        archive.task()
    )];
    rationale.extend(describe(space, &per_layer, &stats, archive.len()));
    make_satisfiable(
        space,
        per_layer,
        rationale,
        Provenance::new(archive.task(), STAT_BACKEND),
        Some(&stats),
    )
}

fn adapt_set(prev: &Allowed, candidates: &[String], counts: &[usize], keep: usize, params: &StatParams) -> Allowed {
    let mut picked = select(counts, keep, params.pad);
    let previous: Vec<usize> = prev
        .resolve(candidates)
        .iter()
        .filter_map(|n| candidates.iter().position(|c| c == n))
        .collect();
    let retained = (params.retention * previous.len() as f64).ceil() as usize;
    picked.extend(
        ranking(counts)
            .into_iter()
            .filter(|k| previous.contains(k))
            .take(retained),
    );
    if picked.is_empty() {
        // Nothing observed and no padding: fall back to the best-ranked candidate.
        picked.push(ranking(counts)[0]);
    }
    names(candidates, &picked)
}

/// Recomputes the allowed sets from `top` alone, then unions in a retained
/// fraction of the previous sets.
pub fn stat_adapt(
    principle: &DesignPrinciple,
    top: &Archive,
    space: &SpaceDescriptor,
    params: &StatParams,
) -> Result<DesignPrinciple, ReasonerError> {
    if top.is_empty() {
        return Err(ReasonerError::EmptyArchive);
    }
    params.check(space)?;
    let stats = layer_stats(top, space);
    let per_layer: Vec<LayerPrinciple> = space
        .layers()
        .iter()
        .zip(&stats)
        .zip(principle.per_layer())
        .enumerate()
        .map(|(i, ((slot, st), prev))| LayerPrinciple {
            allowed_ops: adapt_set(
                &prev.allowed_ops,
                &slot.candidate_ops,
                &st.op_counts,
                params.keep_m,
                params,
            ),
            allowed_sources: match params.keep_s {
                Some(s) if slot.has_source_choice() => adapt_set(
                    &prev.allowed_sources,
                    &source_names(space, i),
                    &st.source_counts,
                    s,
                    params,
                ),
                _ => Allowed::All,
            },
        })
        .collect();
    let mut rationale = vec![format!(
        "Adapted to the top {} architectures found on {}.",
        top.len(),
        top.task()
    )];
    rationale.extend(describe(space, &per_layer, &stats, top.len()));
    let provenance = Provenance {
        generation: principle.generation() + 1,
        ..principle.provenance().clone()
    };
    make_satisfiable(space, per_layer, rationale, provenance, Some(&stats))
}

/// The complement of `principle`, widened where a group's sources would
/// become unsatisfiable.
pub fn stat_explore(principle: &DesignPrinciple, space: &SpaceDescriptor) -> Result<DesignPrinciple, ReasonerError> {
    let c = principle.complement(space);
    make_satisfiable(
        space,
        c.per_layer().to_vec(),
        c.rationale().to_vec(),
        c.provenance().clone(),
        None,
    )
}

#[derive(Clone, Debug, Default)]
pub struct StatReasoner {
    pub params: StatParams,
}

impl StatReasoner {
    pub fn new(params: StatParams) -> Self {
        StatReasoner { params }
    }
}

impl Reasoner for StatReasoner {
    fn backend_id(&self) -> &str {
        STAT_BACKEND
    }

    fn learn(&mut self, archive: &Archive, space: &SpaceDescriptor) -> Result<DesignPrinciple, ReasonerError> {
        stat_learn(archive, space, &self.params)
    }

    fn adapt(
        &mut self,
        principle: &DesignPrinciple,
        top: &Archive,
        space: &SpaceDescriptor,
    ) -> Result<DesignPrinciple, ReasonerError> {
        stat_adapt(principle, top, space, &self.params)
    }

    fn explore(
        &mut self,
        principle: &DesignPrinciple,
        space: &SpaceDescriptor,
    ) -> Result<DesignPrinciple, ReasonerError> {
        stat_explore(principle, space)
    }
}
