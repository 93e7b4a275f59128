//! Principle reasoning backends.
//!
//! A reasoner learns a principle from an archive of strong architectures,
//! adapts it to the best architectures found on a target task, and proposes
//! an exploration principle when the search stops improving. Two backends
//! ship: a deterministic frequency-based one ([`StatReasoner`]) and one that
//! prompts a chat-completion model ([`LlmReasoner`]).

mod llm;
mod prompt;
mod stat;
mod transport;

use thiserror::Error;

use crate::principle::{DesignPrinciple, PrincipleError};
use crate::space::{ArchKey, Architecture, SpaceDescriptor};

pub use llm::{extract_fenced_json, LlmConfig, LlmReasoner, TranscriptLog, LLM_BACKEND};
pub use prompt::{
    build_adapt_prompt, build_explore_prompt, build_learning_prompt, layer_list, PartKind, PromptBundle, PromptTemplate,
};
pub use stat::{stat_adapt, stat_explore, stat_learn, StatParams, StatReasoner, STAT_BACKEND};
pub use transport::{parse_chat_reply, ChatMessage, ChatRequest, ChatTransport, HttpTransport, Role, TransportError};

#[derive(Debug, Error)]
pub enum ReasonerError {
    #[error("archive is empty")]
    EmptyArchive,
    #[error("invalid reasoner parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Principle(#[from] PrincipleError),
    #[error("prompt template is missing {0}")]
    TemplateMissing(String),
    #[error("prompt template: {0}")]
    TemplateParse(String),
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("no valid principle after {attempts} attempts; last reply: {excerpt}")]
    MalformedAfterRetries { attempts: usize, excerpt: String },
    #[error("writing transcript: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub arch: Architecture,
    pub key: ArchKey,
    /// Normalized, higher is better.
    pub score: f64,
}

impl ArchiveEntry {
    pub fn new(arch: Architecture, score: f64) -> Self {
        let key = arch.key();
        ArchiveEntry { arch, key, score }
    }
}

/// Scored architectures for one task, best first.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    task: String,
    entries: Vec<ArchiveEntry>,
}

impl Archive {
    /// Sorts by score (descending), ties by key.
    pub fn new(task: impl Into<String>, mut entries: Vec<ArchiveEntry>) -> Self {
        entries.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.key.cmp(&b.key)));
        Archive {
            task: task.into(),
            entries,
        }
    }

    pub(crate) fn from_sorted(task: impl Into<String>, entries: Vec<ArchiveEntry>) -> Self {
        Archive {
            task: task.into(),
            entries,
        }
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The first `r` entries.
    pub fn top(&self, r: usize) -> Archive {
        Archive {
            task: self.task.clone(),
            entries: self.entries.iter().take(r).cloned().collect(),
        }
    }
}

/// learn / adapt / explore over one space.
pub trait Reasoner {
    fn backend_id(&self) -> &str;

    fn learn(&mut self, archive: &Archive, space: &SpaceDescriptor) -> Result<DesignPrinciple, ReasonerError>;

    fn adapt(
        &mut self,
        principle: &DesignPrinciple,
        top: &Archive,
        space: &SpaceDescriptor,
    ) -> Result<DesignPrinciple, ReasonerError>;

    fn explore(
        &mut self,
        principle: &DesignPrinciple,
        space: &SpaceDescriptor,
    ) -> Result<DesignPrinciple, ReasonerError>;
}

impl<R: Reasoner + ?Sized> Reasoner for Box<R> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }

    fn learn(&mut self, archive: &Archive, space: &SpaceDescriptor) -> Result<DesignPrinciple, ReasonerError> {
        (**self).learn(archive, space)
    }

    fn adapt(
        &mut self,
        principle: &DesignPrinciple,
        top: &Archive,
        space: &SpaceDescriptor,
    ) -> Result<DesignPrinciple, ReasonerError> {
        (**self).adapt(principle, top, space)
    }

    fn explore(
        &mut self,
        principle: &DesignPrinciple,
        space: &SpaceDescriptor,
    ) -> Result<DesignPrinciple, ReasonerError> {
        (**self).explore(principle, space)
    }
}
