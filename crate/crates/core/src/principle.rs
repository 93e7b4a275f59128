//! Design principles: per-layer allowed sets plus free-text rationale.
//!
//! The structured half drives subspace refinement; the rationale is carried
//! along for reading and for re-prompting a language model.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::space::{LayerConstraint, SourceId, SpaceDescriptor, SpaceError, SubspaceConstraints};

#[derive(Debug, Error)]
pub enum PrincipleError {
    #[error("principle document: {0}")]
    Schema(String),
    #[error("principle targets space `{found}`, expected `{expected}`")]
    SpaceMismatch { expected: String, found: String },
    #[error("principle has {found} layers, space has {expected}")]
    LayerCount { expected: usize, found: usize },
    #[error("layer {layer}: unknown {kind} `{name}`")]
    UnknownName {
        layer: usize,
        kind: &'static str,
        name: String,
    },
    #[error("layer {0}: no operator allowed")]
    EmptyLayer(usize),
    #[error("layer {0}: allowed sources cannot satisfy the layer's source arity")]
    ArityUnsatisfiable(usize),
}

/// Either every candidate or an explicit subset, kept in candidate order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Allowed {
    All,
    Only(Vec<String>),
}

impl Allowed {
    pub fn is_all(&self) -> bool {
        matches!(self, Allowed::All)
    }

    /// Expands against `candidates`, preserving candidate order.
    pub fn resolve<'a>(&'a self, candidates: &'a [String]) -> Vec<String> {
        match self {
            Allowed::All => candidates.to_vec(),
            Allowed::Only(v) => v.clone(),
        }
    }

    fn normalized(self, candidates: &[String]) -> Allowed {
        match self {
            Allowed::All => Allowed::All,
            Allowed::Only(v) => {
                let kept: Vec<String> = candidates.iter().filter(|c| v.contains(c)).cloned().collect();
                if kept.len() == candidates.len() {
                    Allowed::All
                } else {
                    Allowed::Only(kept)
                }
            }
        }
    }

    /// `candidates \ self`, or everything when that difference is empty.
    fn complement(&self, candidates: &[String]) -> Allowed {
        match self {
            Allowed::All => Allowed::All,
            Allowed::Only(v) => {
                let rest: Vec<String> = candidates.iter().filter(|c| !v.contains(c)).cloned().collect();
                if rest.is_empty() {
                    Allowed::All
                } else {
                    Allowed::Only(rest)
                }
            }
        }
    }
}

impl Serialize for Allowed {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Allowed::All => s.serialize_str("ALL"),
            Allowed::Only(v) => v.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Allowed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Tag(String),
            List(Vec<String>),
        }
        match Repr::deserialize(d)? {
            Repr::Tag(t) if t == "ALL" => Ok(Allowed::All),
            Repr::Tag(t) => Err(D::Error::custom(format!("expected \"ALL\" or a list, found \"{t}\""))),
            Repr::List(v) => Ok(Allowed::Only(v)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPrinciple {
    pub allowed_ops: Allowed,
    pub allowed_sources: Allowed,
}

impl LayerPrinciple {
    pub fn all() -> Self {
        LayerPrinciple {
            allowed_ops: Allowed::All,
            allowed_sources: Allowed::All,
        }
    }

    pub fn ops<S: AsRef<str>>(ops: &[S]) -> Self {
        LayerPrinciple {
            allowed_ops: Allowed::Only(ops.iter().map(|s| s.as_ref().to_string()).collect()),
            allowed_sources: Allowed::All,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_task: String,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// 0 for a freshly learned (transferred-in) principle.
    pub generation: u32,
    pub created_at: Option<String>,
}

impl Provenance {
    pub fn new(source_task: impl Into<String>, backend: impl Into<String>) -> Self {
        Provenance {
            source_task: source_task.into(),
            backend: backend.into(),
            model: None,
            generation: 0,
            created_at: None,
        }
    }
}

/// The body a reasoner produces: allowed sets and rationale only.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrincipleBody {
    pub per_layer: Vec<LayerPrinciple>,
    #[serde(default)]
    pub rationale: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct PrincipleDoc {
    space_id: String,
    per_layer: Vec<LayerPrinciple>,
    #[serde(default)]
    rationale: Vec<String>,
    provenance: Provenance,
}

/// A design principle validated against one space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DesignPrinciple {
    space_id: String,
    per_layer: Vec<LayerPrinciple>,
    rationale: Vec<String>,
    provenance: Provenance,
}

fn source_names(space: &SpaceDescriptor, layer: usize) -> Vec<String> {
    space.layers()[layer]
        .candidate_sources
        .iter()
        .map(|s| s.as_str().to_string())
        .collect()
}

impl DesignPrinciple {
    /// Validates names against `space` and normalizes each allowed set.
    pub fn new(
        space: &SpaceDescriptor,
        per_layer: Vec<LayerPrinciple>,
        rationale: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self, PrincipleError> {
        if per_layer.len() != space.num_layers() {
            return Err(PrincipleError::LayerCount {
                expected: space.num_layers(),
                found: per_layer.len(),
            });
        }
        let mut normalized = Vec::with_capacity(per_layer.len());
        for (i, (lp, slot)) in per_layer.into_iter().zip(space.layers()).enumerate() {
            if let Allowed::Only(ops) = &lp.allowed_ops {
                if let Some(bad) = ops.iter().find(|o| slot.op_index(o).is_none()) {
                    return Err(PrincipleError::UnknownName {
                        layer: i,
                        kind: "operator",
                        name: bad.clone(),
                    });
                }
            }
            let sources = source_names(space, i);
            if let Allowed::Only(srcs) = &lp.allowed_sources {
                if let Some(bad) = srcs.iter().find(|s| !sources.contains(s)) {
                    return Err(PrincipleError::UnknownName {
                        layer: i,
                        kind: "source",
                        name: bad.clone(),
                    });
                }
            }
            normalized.push(LayerPrinciple {
                allowed_ops: lp.allowed_ops.normalized(&slot.candidate_ops),
                allowed_sources: lp.allowed_sources.normalized(&sources),
            });
        }
        Ok(DesignPrinciple {
            space_id: space.space_id().to_string(),
            per_layer: normalized,
            rationale,
            provenance,
        })
    }

    /// The principle that keeps the whole space.
    pub fn all(space: &SpaceDescriptor, provenance: Provenance) -> Self {
        DesignPrinciple {
            space_id: space.space_id().to_string(),
            per_layer: vec![LayerPrinciple::all(); space.num_layers()],
            rationale: Vec::new(),
            provenance,
        }
    }

    pub fn from_body(
        space: &SpaceDescriptor,
        body: PrincipleBody,
        provenance: Provenance,
    ) -> Result<Self, PrincipleError> {
        DesignPrinciple::new(space, body.per_layer, body.rationale, provenance)
    }

    pub fn space_id(&self) -> &str {
        &self.space_id
    }

    pub fn per_layer(&self) -> &[LayerPrinciple] {
        &self.per_layer
    }

    pub fn rationale(&self) -> &[String] {
        &self.rationale
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn generation(&self) -> u32 {
        self.provenance.generation
    }

    pub fn is_all(&self) -> bool {
        self.per_layer
            .iter()
            .all(|l| l.allowed_ops.is_all() && l.allowed_sources.is_all())
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn with_created_at(mut self, stamp: impl Into<String>) -> Self {
        self.provenance.created_at = Some(stamp.into());
        self
    }

    /// Translates the principle into per-layer allowed subsets.
    pub fn to_constraints(&self, space: &SpaceDescriptor) -> Result<SubspaceConstraints, PrincipleError> {
        self.check_target(space)?;
        let mut per_layer = Vec::with_capacity(self.per_layer.len());
        for (i, (lp, slot)) in self.per_layer.iter().zip(space.layers()).enumerate() {
            let allowed_ops = lp.allowed_ops.resolve(&slot.candidate_ops);
            if allowed_ops.is_empty() {
                return Err(PrincipleError::EmptyLayer(i));
            }
            let allowed_sources = lp
                .allowed_sources
                .resolve(&source_names(space, i))
                .into_iter()
                .map(SourceId::new)
                .collect();
            per_layer.push(LayerConstraint {
                allowed_ops,
                allowed_sources,
            });
        }
        let constraints = SubspaceConstraints { per_layer };
        match space.refine(&constraints) {
            Ok(_) => Ok(constraints),
            Err(SpaceError::ConstraintEmpty { layer }) => Err(PrincipleError::ArityUnsatisfiable(layer)),
            Err(e) => Err(PrincipleError::Schema(e.to_string())),
        }
    }

    /// Exploration principle: every restricted set is replaced by the
    /// candidates it left out; unrestricted layers stay unrestricted.
    pub fn complement(&self, space: &SpaceDescriptor) -> DesignPrinciple {
        let per_layer = self
            .per_layer
            .iter()
            .zip(space.layers())
            .enumerate()
            .map(|(i, (lp, slot))| LayerPrinciple {
                allowed_ops: lp.allowed_ops.complement(&slot.candidate_ops),
                allowed_sources: lp.allowed_sources.complement(&source_names(space, i)),
            })
            .collect();
        let mut rationale = vec![format!(
            "Exploration: allowed sets are the complement of generation {}; the choices it preferred are set aside.",
            self.provenance.generation
        )];
        rationale.extend(self.rationale.iter().map(|r| format!("(set aside) {r}")));
        DesignPrinciple {
            space_id: self.space_id.clone(),
            per_layer,
            rationale,
            provenance: Provenance {
                generation: self.provenance.generation + 1,
                ..self.provenance.clone()
            },
        }
    }

    fn check_target(&self, space: &SpaceDescriptor) -> Result<(), PrincipleError> {
        if self.space_id != space.space_id() {
            return Err(PrincipleError::SpaceMismatch {
                expected: space.space_id().to_string(),
                found: self.space_id.clone(),
            });
        }
        if self.per_layer.len() != space.num_layers() {
            return Err(PrincipleError::LayerCount {
                expected: space.num_layers(),
                found: self.per_layer.len(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = PrincipleDoc {
            space_id: self.space_id.clone(),
            per_layer: self.per_layer.clone(),
            rationale: self.rationale.clone(),
            provenance: self.provenance.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("principle serializes")
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::from_str(&self.to_json()).expect("principle serializes")
    }

    /// Parses and validates a principle document against `space`.
    pub fn from_json(text: &str, space: &SpaceDescriptor) -> Result<Self, PrincipleError> {
        let doc: PrincipleDoc = serde_json::from_str(text).map_err(|e| PrincipleError::Schema(e.to_string()))?;
        if doc.space_id != space.space_id() {
            return Err(PrincipleError::SpaceMismatch {
                expected: space.space_id().to_string(),
                found: doc.space_id,
            });
        }
        DesignPrinciple::new(space, doc.per_layer, doc.rationale, doc.provenance)
    }
}
