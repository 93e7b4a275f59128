//! Layered cell search spaces.
//!
//! A space is an ordered list of layer slots. Each slot offers candidate
//! operators and candidate information sources; an architecture picks one
//! operator and a source selection per layer. Layers that share a `group`
//! id form one stage whose edges draw their sources jointly (DARTS-style
//! stages): with `distinct_sources` the edges must use different sources, and
//! the edges are kept in canonical order by source so each unordered
//! selection is counted once.

mod arch;
pub mod builtin;

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arch::{decode, encode, ArchKey, Architecture, DecodeError, LayerChoice};
pub use builtin::{builtin, darts, nas201, trans101, BUILTIN_IDS};

/// Upper bound on the number of joint source selections kept per group.
const MAX_GROUP_SELECTIONS: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("space `{0}` has no layers")]
    NoLayers(String),
    #[error("layer {layer}: no candidate operators")]
    NoOps { layer: usize },
    #[error("layer {layer}: invalid name `{name}`")]
    BadName { layer: usize, name: String },
    #[error("layer {layer}: duplicate candidate `{name}`")]
    DuplicateCandidate { layer: usize, name: String },
    #[error("layer {layer}: source arity ({min}, {max}) does not fit {available} candidate sources")]
    BadArity {
        layer: usize,
        min: usize,
        max: usize,
        available: usize,
    },
    #[error("layer {layer}: source `{name}` does not refer to an earlier layer")]
    NotFeedForward { layer: usize, name: String },
    #[error("group {group}: member layers must be contiguous and share arity and distinctness")]
    BadGroup { group: u32 },
    #[error("layer {layer}: no valid source selection exists")]
    NoSourceSelection { layer: usize },
    #[error("layer {layer}: too many joint source selections")]
    TooManySourceSelections { layer: usize },
    #[error("layer {layer}: refined candidate set is empty")]
    ConstraintEmpty { layer: usize },
    #[error("layer {layer}: `{name}` is not a candidate of this layer")]
    NotACandidate { layer: usize, name: String },
    #[error("constraints cover {found} layers, space has {expected}")]
    ConstraintLength { expected: usize, found: usize },
    #[error("space has {cardinality} architectures, more than the cap of {cap}")]
    TooLarge { cardinality: BigUint, cap: u64 },
}

/// Identifier of an information source.
///
/// A canonical decimal integer `j` refers to the node produced by layer `j`
/// (or by the stage containing layer `j`); anything else names a cell input.
/// Cell inputs sort before layer references; references sort numerically.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceId(String);

impl SourceId {
    pub fn new(name: impl Into<String>) -> Self {
        SourceId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn layer_ref(&self) -> Option<usize> {
        let s = self.0.as_str();
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
            return None;
        }
        s.parse().ok()
    }
}

impl Ord for SourceId {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.layer_ref(), other.layer_ref()) {
            (None, None) => self.0.cmp(&other.0),
            (None, Some(_)) => Ordering::Less,
            (Some(_), None) => Ordering::Greater,
            (Some(a), Some(b)) => a.cmp(&b).then_with(|| self.0.cmp(&other.0)),
        }
    }
}

impl PartialOrd for SourceId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SourceId {
    fn from(s: &str) -> Self {
        SourceId(s.to_string())
    }
}

/// One layer position: candidate operators `C_i` and candidate sources `S_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSlot {
    pub candidate_ops: Vec<String>,
    pub candidate_sources: Vec<SourceId>,
    pub source_arity: (usize, usize),
    pub distinct_sources: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<u32>,
}

impl LayerSlot {
    /// A layer whose sources carry no choice.
    pub fn fixed(ops: &[&str]) -> Self {
        LayerSlot {
            candidate_ops: ops.iter().map(|s| s.to_string()).collect(),
            candidate_sources: Vec::new(),
            source_arity: (0, 0),
            distinct_sources: false,
            group: None,
        }
    }

    pub fn op_index(&self, op: &str) -> Option<usize> {
        self.candidate_ops.iter().position(|o| o == op)
    }

    pub fn has_source_choice(&self) -> bool {
        !self.candidate_sources.is_empty() && self.source_arity.1 > 0
    }
}

/// Per-layer allowed subsets `C_i^r`, `S_i^r` that carve a subspace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubspaceConstraints {
    pub per_layer: Vec<LayerConstraint>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerConstraint {
    pub allowed_ops: Vec<String>,
    pub allowed_sources: Vec<SourceId>,
}

impl SubspaceConstraints {
    /// Constraints that keep every candidate.
    pub fn full(space: &SpaceDescriptor) -> Self {
        SubspaceConstraints {
            per_layer: space
                .layers()
                .iter()
                .map(|l| LayerConstraint {
                    allowed_ops: l.candidate_ops.clone(),
                    allowed_sources: l.candidate_sources.clone(),
                })
                .collect(),
        }
    }
}

/// One rule broken by an architecture.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Violation {
    Length {
        expected: usize,
        found: usize,
    },
    UnknownOp {
        layer: usize,
        op: String,
    },
    UnknownSource {
        layer: usize,
        source: String,
    },
    Arity {
        layer: usize,
        count: usize,
        min: usize,
        max: usize,
    },
    SourceOrder {
        layer: usize,
    },
    DuplicateSource {
        layer: usize,
        source: String,
    },
    StageOrder {
        layer: usize,
    },
}

impl Violation {
    pub fn layer(&self) -> Option<usize> {
        match self {
            Violation::Length { .. } => None,
            Violation::UnknownOp { layer, .. }
            | Violation::UnknownSource { layer, .. }
            | Violation::Arity { layer, .. }
            | Violation::SourceOrder { layer }
            | Violation::DuplicateSource { layer, .. }
            | Violation::StageOrder { layer } => Some(*layer),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Length { expected, found } => {
                write!(f, "architecture has {found} layers, space has {expected}")
            }
            Violation::UnknownOp { layer, op } => write!(f, "layer {layer}: operator `{op}` not allowed"),
            Violation::UnknownSource { layer, source } => {
                write!(f, "layer {layer}: source `{source}` not allowed")
            }
            Violation::Arity { layer, count, min, max } => {
                write!(f, "layer {layer}: {count} sources selected, expected {min}..={max}")
            }
            Violation::SourceOrder { layer } => write!(f, "layer {layer}: sources not in ascending order"),
            Violation::DuplicateSource { layer, source } => {
                write!(f, "layer {layer}: source `{source}` used more than once")
            }
            Violation::StageOrder { layer } => {
                write!(f, "layer {layer}: stage edges not in canonical source order")
            }
        }
    }
}

/// Contiguous run of layers whose sources are chosen jointly.
#[derive(Debug)]
struct Group {
    start: usize,
    len: usize,
    /// Every valid joint source selection, in lexicographic order.
    selections: Vec<Vec<Vec<SourceId>>>,
}

#[derive(Debug, Default)]
struct SpaceIndex {
    groups: Vec<Group>,
    group_of: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawSpace {
    space_id: String,
    layers: Vec<LayerSlot>,
}

/// Validated search space `Ω`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawSpace", into = "RawSpace")]
pub struct SpaceDescriptor {
    space_id: String,
    layers: Vec<LayerSlot>,
    index: Arc<SpaceIndex>,
}

impl PartialEq for SpaceDescriptor {
    fn eq(&self, other: &Self) -> bool {
        self.space_id == other.space_id && self.layers == other.layers
    }
}

impl TryFrom<RawSpace> for SpaceDescriptor {
    type Error = SpaceError;
    fn try_from(raw: RawSpace) -> Result<Self, SpaceError> {
        SpaceDescriptor::new(raw.space_id, raw.layers)
    }
}

impl From<SpaceDescriptor> for RawSpace {
    fn from(s: SpaceDescriptor) -> Self {
        RawSpace {
            space_id: s.space_id,
            layers: s.layers,
        }
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && !name
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, '|' | '~' | '+' | '"'))
}

impl SpaceDescriptor {
    pub fn new(space_id: impl Into<String>, mut layers: Vec<LayerSlot>) -> Result<Self, SpaceError> {
        let space_id = space_id.into();
        if layers.is_empty() {
            return Err(SpaceError::NoLayers(space_id));
        }
        for (i, layer) in layers.iter_mut().enumerate() {
            if layer.candidate_ops.is_empty() {
                return Err(SpaceError::NoOps { layer: i });
            }
            let mut seen = BTreeSet::new();
            for op in &layer.candidate_ops {
                if !valid_name(op) {
                    return Err(SpaceError::BadName {
                        layer: i,
                        name: op.clone(),
                    });
                }
                if !seen.insert(op.as_str()) {
                    return Err(SpaceError::DuplicateCandidate {
                        layer: i,
                        name: op.clone(),
                    });
                }
            }
            let mut seen = BTreeSet::new();
            for src in &layer.candidate_sources {
                if !valid_name(src.as_str()) {
                    return Err(SpaceError::BadName {
                        layer: i,
                        name: src.to_string(),
                    });
                }
                if !seen.insert(src.clone()) {
                    return Err(SpaceError::DuplicateCandidate {
                        layer: i,
                        name: src.to_string(),
                    });
                }
            }
            let (min, max) = layer.source_arity;
            let available = layer.candidate_sources.len();
            // Without distinctness a layer may repeat a source, so only an
            // empty candidate list bounds the arity.
            let bounded = layer.distinct_sources || available == 0;
            if min > max || (bounded && max > available) {
                return Err(SpaceError::BadArity {
                    layer: i,
                    min,
                    max,
                    available,
                });
            }
            layer.candidate_sources.sort();
        }
        let index = build_index(&layers)?;
        Ok(SpaceDescriptor {
            space_id,
            layers,
            index: Arc::new(index),
        })
    }

    pub fn space_id(&self) -> &str {
        &self.space_id
    }

    pub fn layers(&self) -> &[LayerSlot] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn has_source_choice(&self) -> bool {
        self.layers.iter().any(LayerSlot::has_source_choice)
    }

    /// Layers that share `layer`'s group (the layer alone when ungrouped).
    pub fn group_layers(&self, layer: usize) -> std::ops::Range<usize> {
        let g = &self.index.groups[self.index.group_of[layer]];
        g.start..g.start + g.len
    }

    /// Checks `arch` against every membership rule; empty means valid.
    pub fn validate(&self, arch: &Architecture) -> Vec<Violation> {
        let mut out = Vec::new();
        let found = arch.choices.len();
        if found != self.layers.len() {
            out.push(Violation::Length {
                expected: self.layers.len(),
                found,
            });
        }
        for (i, (slot, choice)) in self.layers.iter().zip(&arch.choices).enumerate() {
            if slot.op_index(&choice.op).is_none() {
                out.push(Violation::UnknownOp {
                    layer: i,
                    op: choice.op.clone(),
                });
            }
            for s in &choice.sources {
                if !slot.candidate_sources.contains(s) {
                    out.push(Violation::UnknownSource {
                        layer: i,
                        source: s.to_string(),
                    });
                }
            }
            let (min, max) = slot.source_arity;
            let count = choice.sources.len();
            if count < min || count > max {
                out.push(Violation::Arity {
                    layer: i,
                    count,
                    min,
                    max,
                });
            }
            if choice.sources.windows(2).any(|w| w[0] > w[1]) {
                out.push(Violation::SourceOrder { layer: i });
            }
        }
        for group in &self.index.groups {
            let end = (group.start + group.len).min(found);
            let mut used: BTreeSet<&SourceId> = BTreeSet::new();
            let distinct = self.layers[group.start].distinct_sources;
            for i in group.start..end {
                let sources = &arch.choices[i].sources;
                if distinct {
                    for s in sources {
                        if !used.insert(s) {
                            out.push(Violation::DuplicateSource {
                                layer: i,
                                source: s.to_string(),
                            });
                        }
                    }
                }
                if i > group.start {
                    let prev = &arch.choices[i - 1].sources;
                    let ord = prev.cmp(sources);
                    if ord == Ordering::Greater || (distinct && ord == Ordering::Equal) {
                        out.push(Violation::StageOrder { layer: i });
                    }
                }
            }
        }
        out
    }

    pub fn is_valid(&self, arch: &Architecture) -> bool {
        self.validate(arch).is_empty()
    }

    /// Exact size of the space, or of the subspace carved by `constraints`.
    pub fn cardinality(&self, constraints: Option<&SubspaceConstraints>) -> Result<BigUint, SpaceError> {
        match constraints {
            Some(c) => Ok(self.refine(c)?.count()),
            None => Ok(self.count()),
        }
    }

    fn count(&self) -> BigUint {
        let mut total = BigUint::from(1u32);
        for group in &self.index.groups {
            for l in &self.layers[group.start..group.start + group.len] {
                total *= BigUint::from(l.candidate_ops.len());
            }
            total *= BigUint::from(group.selections.len());
        }
        total
    }

    /// Cardinality as `u64`, when it fits.
    pub fn size_u64(&self) -> Option<u64> {
        u64::try_from(self.count()).ok()
    }

    /// Builds the refined space `Ω_r` from per-layer allowed sets.
    pub fn refine(&self, constraints: &SubspaceConstraints) -> Result<SpaceDescriptor, SpaceError> {
        if constraints.per_layer.len() != self.layers.len() {
            return Err(SpaceError::ConstraintLength {
                expected: self.layers.len(),
                found: constraints.per_layer.len(),
            });
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, (slot, c)) in self.layers.iter().zip(&constraints.per_layer).enumerate() {
            for op in &c.allowed_ops {
                if slot.op_index(op).is_none() {
                    return Err(SpaceError::NotACandidate {
                        layer: i,
                        name: op.clone(),
                    });
                }
            }
            for s in &c.allowed_sources {
                if !slot.candidate_sources.contains(s) {
                    return Err(SpaceError::NotACandidate {
                        layer: i,
                        name: s.to_string(),
                    });
                }
            }
            let ops: Vec<String> = slot
                .candidate_ops
                .iter()
                .filter(|o| c.allowed_ops.contains(o))
                .cloned()
                .collect();
            if ops.is_empty() {
                return Err(SpaceError::ConstraintEmpty { layer: i });
            }
            let sources: Vec<SourceId> = slot
                .candidate_sources
                .iter()
                .filter(|s| c.allowed_sources.contains(s))
                .cloned()
                .collect();
            let (min, max) = slot.source_arity;
            if slot.has_source_choice() && slot.distinct_sources && sources.len() < min {
                return Err(SpaceError::ConstraintEmpty { layer: i });
            }
            if !slot.candidate_sources.is_empty() && sources.is_empty() && min > 0 {
                return Err(SpaceError::ConstraintEmpty { layer: i });
            }
            let max = if slot.distinct_sources {
                max.min(sources.len())
            } else {
                max
            };
            layers.push(LayerSlot {
                candidate_ops: ops,
                candidate_sources: sources,
                source_arity: (min, max),
                distinct_sources: slot.distinct_sources,
                group: slot.group,
            });
        }
        SpaceDescriptor::new(self.space_id.clone(), layers).map_err(|e| match e {
            SpaceError::NoSourceSelection { layer } => SpaceError::ConstraintEmpty { layer },
            other => other,
        })
    }

    /// Draws one architecture uniformly over the whole space.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Architecture {
        let mut choices = Vec::with_capacity(self.layers.len());
        for group in &self.index.groups {
            let ops: Vec<String> = self.layers[group.start..group.start + group.len]
                .iter()
                .map(|l| l.candidate_ops[rng.gen_range(0..l.candidate_ops.len())].clone())
                .collect();
            let sel = &group.selections[rng.gen_range(0..group.selections.len())];
            for (op, sources) in ops.into_iter().zip(sel) {
                choices.push(LayerChoice {
                    op,
                    sources: sources.clone(),
                });
            }
        }
        Architecture { choices }
    }

    /// Yields every architecture once, in canonical order, if the space has
    /// at most `cap` members.
    pub fn enumerate(&self, cap: u64) -> Result<Enumerate<'_>, SpaceError> {
        let cardinality = self.count();
        if cardinality > BigUint::from(cap) {
            return Err(SpaceError::TooLarge { cardinality, cap });
        }
        let configs = self
            .index
            .groups
            .iter()
            .map(|g| self.group_configs(g))
            .collect::<Vec<_>>();
        Ok(Enumerate {
            digits: vec![0; configs.len()],
            configs,
            done: false,
            _space: std::marker::PhantomData,
        })
    }

    /// Full (op, sources) configurations of one group in lexicographic order
    /// over (layer, op index, sources).
    fn group_configs(&self, group: &Group) -> Vec<Vec<LayerChoice>> {
        let mut out = Vec::new();
        let mut current = Vec::with_capacity(group.len);
        self.group_configs_rec(group, 0, &mut current, &mut out);
        out
    }

    fn group_configs_rec(
        &self,
        group: &Group,
        pos: usize,
        current: &mut Vec<LayerChoice>,
        out: &mut Vec<Vec<LayerChoice>>,
    ) {
        if pos == group.len {
            out.push(current.clone());
            return;
        }
        let slot = &self.layers[group.start + pos];
        for op in &slot.candidate_ops {
            let mut seen: Vec<&Vec<SourceId>> = Vec::new();
            for sel in &group.selections {
                let prefix_matches = sel[..pos].iter().zip(current.iter()).all(|(a, b)| *a == b.sources);
                if !prefix_matches || seen.contains(&&sel[pos]) {
                    continue;
                }
                seen.push(&sel[pos]);
                current.push(LayerChoice {
                    op: op.clone(),
                    sources: sel[pos].clone(),
                });
                self.group_configs_rec(group, pos + 1, current, out);
                current.pop();
            }
        }
    }

    /// Source lists layer `layer` could switch to while the rest of `arch`
    /// stays valid.
    pub fn source_alternatives(&self, arch: &Architecture, layer: usize) -> Vec<Vec<SourceId>> {
        let g = &self.index.groups[self.index.group_of[layer]];
        let pos = layer - g.start;
        let current: Vec<&Vec<SourceId>> = (g.start..g.start + g.len).map(|i| &arch.choices[i].sources).collect();
        let mut out: Vec<Vec<SourceId>> = Vec::new();
        for sel in &g.selections {
            let others_match = sel.iter().enumerate().all(|(k, s)| k == pos || s == current[k]);
            if others_match && &sel[pos] != current[pos] && !out.contains(&sel[pos]) {
                out.push(sel[pos].clone());
            }
        }
        out
    }

    /// Re-draws stage sources that break distinctness or canonical order.
    ///
    /// Layers are scanned in order; the first layer whose sources cannot
    /// extend the already-fixed prefix to a valid joint selection gets a
    /// uniform draw among the sources that can.
    pub fn repair<R: Rng + ?Sized>(&self, arch: &mut Architecture, rng: &mut R) {
        for g in &self.index.groups {
            for pos in 0..g.len {
                let prefix_ok = |arch: &Architecture, upto: usize| {
                    g.selections
                        .iter()
                        .any(|sel| (0..=upto).all(|k| sel[k] == arch.choices[g.start + k].sources))
                };
                if prefix_ok(arch, pos) {
                    continue;
                }
                let mut options: Vec<&Vec<SourceId>> = Vec::new();
                for sel in &g.selections {
                    let matches = (0..pos).all(|k| sel[k] == arch.choices[g.start + k].sources);
                    if matches && !options.contains(&&sel[pos]) {
                        options.push(&sel[pos]);
                    }
                }
                let pick = options[rng.gen_range(0..options.len())].clone();
                arch.choices[g.start + pos].sources = pick;
            }
        }
    }

    /// Applies one single-decision edit.
    ///
    /// A layer is picked uniformly among layers with at least one alternative
    /// operator or source selection, then the kind of edit uniformly among
    /// the kinds available there, then the new value uniformly.
    pub fn mutate<R: Rng + ?Sized>(&self, arch: &Architecture, rng: &mut R) -> Architecture {
        let mut eligible: Vec<(usize, bool, Vec<Vec<SourceId>>)> = Vec::new();
        for i in 0..self.layers.len() {
            let op_alt = self.layers[i].candidate_ops.len() > 1;
            let src_alt = self.source_alternatives(arch, i);
            if op_alt || !src_alt.is_empty() {
                eligible.push((i, op_alt, src_alt));
            }
        }
        if eligible.is_empty() {
            return arch.clone();
        }
        let (layer, op_alt, src_alt) = &eligible[rng.gen_range(0..eligible.len())];
        let mut child = arch.clone();
        let edit_op = match (*op_alt, !src_alt.is_empty()) {
            (true, true) => rng.gen_bool(0.5),
            (true, false) => true,
            _ => false,
        };
        if edit_op {
            let slot = &self.layers[*layer];
            let current = slot.op_index(&arch.choices[*layer].op);
            let alternatives: Vec<&String> = slot
                .candidate_ops
                .iter()
                .enumerate()
                .filter(|(k, _)| Some(*k) != current)
                .map(|(_, o)| o)
                .collect();
            child.choices[*layer].op = alternatives[rng.gen_range(0..alternatives.len())].clone();
        } else {
            child.choices[*layer].sources = src_alt[rng.gen_range(0..src_alt.len())].clone();
        }
        child
    }

    /// Serializes the descriptor document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("descriptor serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Iterator over all members of a space in canonical order.
pub struct Enumerate<'a> {
    configs: Vec<Vec<Vec<LayerChoice>>>,
    digits: Vec<usize>,
    done: bool,
    _space: std::marker::PhantomData<&'a SpaceDescriptor>,
}

impl Iterator for Enumerate<'_> {
    type Item = Architecture;

    fn next(&mut self) -> Option<Architecture> {
        if self.done {
            return None;
        }
        let choices = self
            .digits
            .iter()
            .zip(&self.configs)
            .flat_map(|(&d, cfg)| cfg[d].iter().cloned())
            .collect();
        // Odometer, last group least significant.
        let mut k = self.digits.len();
        loop {
            if k == 0 {
                self.done = true;
                break;
            }
            k -= 1;
            self.digits[k] += 1;
            if self.digits[k] < self.configs[k].len() {
                break;
            }
            self.digits[k] = 0;
        }
        Some(Architecture { choices })
    }
}

/// Every sorted source list of size `min..=max` drawn from `candidates`.
fn source_lists(candidates: &[SourceId], min: usize, max: usize, distinct: bool) -> Vec<Vec<SourceId>> {
    fn rec(
        candidates: &[SourceId],
        from: usize,
        size: usize,
        distinct: bool,
        cur: &mut Vec<SourceId>,
        out: &mut Vec<Vec<SourceId>>,
    ) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for k in from..candidates.len() {
            cur.push(candidates[k].clone());
            rec(candidates, if distinct { k + 1 } else { k }, size, distinct, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if candidates.is_empty() {
        if min == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    for size in min..=max {
        rec(candidates, 0, size, distinct, &mut Vec::new(), &mut out);
    }
    out.sort();
    out
}

fn build_index(layers: &[LayerSlot]) -> Result<SpaceIndex, SpaceError> {
    let mut index = SpaceIndex::default();
    let mut i = 0;
    let mut closed_groups = BTreeSet::new();
    while i < layers.len() {
        let start = i;
        let gid = layers[i].group;
        i += 1;
        if let Some(g) = gid {
            if !closed_groups.insert(g) {
                return Err(SpaceError::BadGroup { group: g });
            }
            while i < layers.len() && layers[i].group == gid {
                let (a, b) = (&layers[start], &layers[i]);
                if a.source_arity != b.source_arity || a.distinct_sources != b.distinct_sources {
                    return Err(SpaceError::BadGroup { group: g });
                }
                i += 1;
            }
        }
        for (k, layer) in layers.iter().enumerate().take(i).skip(start) {
            for s in &layer.candidate_sources {
                if let Some(j) = s.layer_ref() {
                    if j >= start {
                        return Err(SpaceError::NotFeedForward {
                            layer: k,
                            name: s.to_string(),
                        });
                    }
                }
            }
        }
        let options: Vec<Vec<Vec<SourceId>>> = layers[start..i]
            .iter()
            .map(|l| {
                source_lists(
                    &l.candidate_sources,
                    l.source_arity.0,
                    l.source_arity.1,
                    l.distinct_sources,
                )
            })
            .collect();
        let distinct = layers[start].distinct_sources;
        let mut selections = Vec::new();
        joint_selections(&options, distinct, &mut Vec::new(), &mut selections, start)?;
        if selections.is_empty() {
            return Err(SpaceError::NoSourceSelection { layer: start });
        }
        let gi = index.groups.len();
        index.group_of.extend(std::iter::repeat_n(gi, i - start));
        index.groups.push(Group {
            start,
            len: i - start,
            selections,
        });
    }
    Ok(index)
}

fn joint_selections(
    options: &[Vec<Vec<SourceId>>],
    distinct: bool,
    cur: &mut Vec<Vec<SourceId>>,
    out: &mut Vec<Vec<Vec<SourceId>>>,
    start: usize,
) -> Result<(), SpaceError> {
    let pos = cur.len();
    if pos == options.len() {
        if out.len() >= MAX_GROUP_SELECTIONS {
            return Err(SpaceError::TooManySourceSelections { layer: start });
        }
        out.push(cur.clone());
        return Ok(());
    }
    for opt in &options[pos] {
        if let Some(prev) = cur.last() {
            let ord = prev.cmp(opt);
            if ord == Ordering::Greater || (distinct && ord == Ordering::Equal) {
                continue;
            }
        }
        if distinct && cur.iter().any(|c| c.iter().any(|s| opt.contains(s))) {
            continue;
        }
        cur.push(opt.clone());
        joint_selections(options, distinct, cur, out, start)?;
        cur.pop();
    }
    Ok(())
}
