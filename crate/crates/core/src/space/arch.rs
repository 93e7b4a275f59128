use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{SourceId, SpaceDescriptor, Violation};

/// Operator and source selection made at one layer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerChoice {
    pub op: String,
    /// Sorted ascending by [`SourceId`] order.
    pub sources: Vec<SourceId>,
}

impl LayerChoice {
    pub fn op(op: impl Into<String>) -> Self {
        LayerChoice {
            op: op.into(),
            sources: Vec::new(),
        }
    }

    pub fn with_sources(op: impl Into<String>, sources: &[&str]) -> Self {
        LayerChoice {
            op: op.into(),
            sources: sources.iter().map(|s| SourceId::from(*s)).collect(),
        }
    }
}

/// One point of a space: `A = ∪ {l_i, s_i}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub choices: Vec<LayerChoice>,
}

impl Architecture {
    pub fn new(choices: Vec<LayerChoice>) -> Self {
        Architecture { choices }
    }

    /// Architecture over fixed-source layers from operator names alone.
    pub fn from_ops<S: AsRef<str>>(ops: &[S]) -> Self {
        Architecture {
            choices: ops.iter().map(|o| LayerChoice::op(o.as_ref())).collect(),
        }
    }

    pub fn ops(&self) -> impl Iterator<Item = &str> {
        self.choices.iter().map(|c| c.op.as_str())
    }

    /// Number of layers whose (op, sources) decision differs.
    pub fn distance(&self, other: &Architecture) -> usize {
        let shared = self.choices.iter().zip(&other.choices).filter(|(a, b)| a != b).count();
        shared + self.choices.len().abs_diff(other.choices.len())
    }

    pub fn key(&self) -> ArchKey {
        encode(self)
    }
}

/// Canonical text key, e.g. `|conv|skip|` or `|sep_conv_3x3~in0|max_pool_3x3~in1|`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArchKey(String);

impl ArchKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl From<String> for ArchKey {
    fn from(s: String) -> Self {
        ArchKey(s)
    }
}

impl From<&str> for ArchKey {
    fn from(s: &str) -> Self {
        ArchKey(s.to_string())
    }
}

impl fmt::Display for ArchKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("malformed architecture key `{key}`: {reason}")]
    Parse { key: String, reason: String },
    #[error("architecture key `{key}` is not in the space: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid { key: String, violations: Vec<Violation> },
}

pub fn encode(arch: &Architecture) -> ArchKey {
    let mut out = String::from("|");
    for choice in &arch.choices {
        out.push_str(&choice.op);
        if !choice.sources.is_empty() {
            out.push('~');
            let srcs: Vec<&str> = choice.sources.iter().map(SourceId::as_str).collect();
            out.push_str(&srcs.join("+"));
        }
        out.push('|');
    }
    ArchKey(out)
}

fn parse(key: &str) -> Result<Architecture, String> {
    let inner = key
        .strip_prefix('|')
        .and_then(|k| k.strip_suffix('|'))
        .ok_or_else(|| "key must start and end with `|`".to_string())?;
    let mut choices = Vec::new();
    for (i, token) in inner.split('|').enumerate() {
        let (op, sources) = match token.split_once('~') {
            Some((op, srcs)) => {
                let sources: Vec<SourceId> = srcs.split('+').map(SourceId::from).collect();
                if sources.iter().any(|s| s.as_str().is_empty()) {
                    return Err(format!("layer {i}: empty source id"));
                }
                (op, sources)
            }
            None => (token, Vec::new()),
        };
        if op.is_empty() {
            return Err(format!("layer {i}: empty operator"));
        }
        if op.contains('+') || sources.iter().any(|s| s.as_str().contains('~')) {
            return Err(format!("layer {i}: stray separator"));
        }
        choices.push(LayerChoice {
            op: op.to_string(),
            sources,
        });
    }
    Ok(Architecture { choices })
}

pub fn decode(key: &str, space: &SpaceDescriptor) -> Result<Architecture, DecodeError> {
    let arch = parse(key).map_err(|reason| DecodeError::Parse {
        key: key.to_string(),
        reason,
    })?;
    let violations = space.validate(&arch);
    if violations.is_empty() {
        Ok(arch)
    } else {
        Err(DecodeError::Invalid {
            key: key.to_string(),
            violations,
        })
    }
}
