//! Reasoning through a chat-completion model.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use super::prompt::{build_adapt_prompt, build_explore_prompt, build_learning_prompt, PromptBundle, PromptTemplate};
use super::transport::{ChatMessage, ChatRequest, ChatTransport, HttpTransport, Role};
use super::{Archive, Reasoner, ReasonerError};
use crate::principle::{DesignPrinciple, PrincipleBody, Provenance};
use crate::space::SpaceDescriptor;

pub const LLM_BACKEND: &str = "llm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_retries: usize,
    pub timeout_secs: u64,
    /// Name of the environment variable that holds the API key.
    pub api_key_env: String,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4".into(),
            temperature: 0.0,
            max_retries: 2,
            timeout_secs: 120,
            api_key_env: "LAPT_API_KEY".into(),
        }
    }
}

impl LlmConfig {
    /// Checks the fields and returns the parsed endpoint.
    pub fn validate(&self) -> Result<Url, ReasonerError> {
        let url = Url::parse(&self.endpoint)
            .map_err(|e| ReasonerError::Params(format!("endpoint `{}`: {e}", self.endpoint)))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(ReasonerError::Params(format!(
                "endpoint `{}` is not http(s)",
                self.endpoint
            )));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ReasonerError::Params(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.timeout_secs == 0 {
            return Err(ReasonerError::Params("timeout_secs must be positive".into()));
        }
        if self.model.trim().is_empty() || self.api_key_env.trim().is_empty() {
            return Err(ReasonerError::Params("model and api_key_env must be non-empty".into()));
        }
        Ok(url)
    }
}

/// Body of the first fenced block tagged `json` or untagged.
pub fn extract_fenced_json(text: &str) -> Option<&str> {
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let line_end = after.find('\n')?;
        let tag = after[..line_end].trim();
        let body = &after[line_end + 1..];
        let close = body.find("```")?;
        if tag.is_empty() || tag.eq_ignore_ascii_case("json") {
            return Some(body[..close].trim());
        }
        rest = &body[close + 3..];
    }
    None
}

/// Shared destination for per-call transcripts.
#[derive(Clone, Debug)]
pub struct TranscriptLog {
    dir: PathBuf,
    next: Arc<AtomicUsize>,
}

impl TranscriptLog {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TranscriptLog {
            dir: dir.into(),
            next: Arc::new(AtomicUsize::new(0)),
        }
    }

    fn write(&self, doc: &Transcript) -> Result<(), ReasonerError> {
        std::fs::create_dir_all(&self.dir)?;
        let n = self.next.fetch_add(1, Ordering::SeqCst);
        let path = self.dir.join(format!("transcript-{n}.json"));
        std::fs::write(path, serde_json::to_string_pretty(doc).expect("transcript serializes"))?;
        Ok(())
    }
}

#[derive(Serialize)]
struct Transcript<'a> {
    kind: &'a str,
    task: &'a str,
    model: &'a str,
    attempts: Vec<Attempt>,
}

#[derive(Serialize)]
struct Attempt {
    messages: Vec<ChatMessage>,
    reply: Option<String>,
    outcome: String,
}

pub struct LlmReasoner<T = HttpTransport> {
    config: LlmConfig,
    transport: T,
    template: PromptTemplate,
    transcripts: Option<TranscriptLog>,
    last_retry_count: usize,
    calls: usize,
}

impl LlmReasoner<HttpTransport> {
    pub fn http(config: LlmConfig, template: PromptTemplate) -> Result<Self, ReasonerError> {
        let url = config.validate()?;
        let transport = HttpTransport::new(
            url,
            config.api_key_env.clone(),
            Duration::from_secs(config.timeout_secs),
        )?;
        LlmReasoner::new(config, transport, template)
    }
}

impl<T: ChatTransport> LlmReasoner<T> {
    pub fn new(config: LlmConfig, transport: T, template: PromptTemplate) -> Result<Self, ReasonerError> {
        config.validate()?;
        Ok(LlmReasoner {
            config,
            transport,
            template,
            transcripts: None,
            last_retry_count: 0,
            calls: 0,
        })
    }

    pub fn with_transcripts(mut self, log: TranscriptLog) -> Self {
        self.transcripts = Some(log);
        self
    }

    /// Retries spent by the most recent call.
    pub fn last_retry_count(&self) -> usize {
        self.last_retry_count
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn provenance(&self, base: Provenance) -> Provenance {
        Provenance {
            backend: LLM_BACKEND.into(),
            model: Some(self.config.model.clone()),
            ..base
        }
    }

    fn interpret(
        reply: &str,
        space: &SpaceDescriptor,
        provenance: &Provenance,
        check: &dyn Fn(&DesignPrinciple) -> Result<(), String>,
    ) -> Result<DesignPrinciple, String> {
        let block = extract_fenced_json(reply).ok_or("the reply contains no fenced ```json block")?;
        let body: PrincipleBody =
            serde_json::from_str(block).map_err(|e| format!("the JSON block does not match the schema: {e}"))?;
        let p = DesignPrinciple::from_body(space, body, provenance.clone()).map_err(|e| e.to_string())?;
        p.to_constraints(space).map_err(|e| e.to_string())?;
        check(&p)?;
        Ok(p)
    }

    fn converse(
        &mut self,
        kind: &str,
        task: &str,
        bundle: PromptBundle,
        space: &SpaceDescriptor,
        provenance: Provenance,
        check: &dyn Fn(&DesignPrinciple) -> Result<(), String>,
    ) -> Result<DesignPrinciple, ReasonerError> {
        self.calls += 1;
        let mut messages = Vec::new();
        if let Some(system) = bundle.system {
            messages.push(ChatMessage::new(Role::System, system));
        }
        messages.push(ChatMessage::new(Role::User, bundle.rendered));
        let mut attempts = Vec::new();
        let mut last_reply = String::new();
        let mut result = None;
        for attempt in 0..=self.config.max_retries {
            let request = ChatRequest {
                model: self.config.model.clone(),
                temperature: self.config.temperature,
                messages: messages.clone(),
            };
            let reply = match self.transport.send(&request) {
                Ok(r) => r,
                Err(e) => {
                    attempts.push(Attempt {
                        messages: request.messages,
                        reply: None,
                        outcome: format!("transport error: {e}"),
                    });
                    self.finish(kind, task, attempts)?;
                    return Err(e.into());
                }
            };
            match Self::interpret(&reply, space, &provenance, check) {
                Ok(p) => {
                    attempts.push(Attempt {
                        messages: request.messages,
                        reply: Some(reply),
                        outcome: "ok".into(),
                    });
                    self.last_retry_count = attempt;
                    result = Some(p);
                    break;
                }
                Err(problem) => {
                    log::warn!("{kind} attempt {attempt}: {problem}");
                    attempts.push(Attempt {
                        messages: request.messages,
                        reply: Some(reply.clone()),
                        outcome: format!("rejected: {problem}"),
                    });
                    messages.push(ChatMessage::new(Role::Assistant, reply.clone()));
                    messages.push(ChatMessage::new(
                        Role::User,
                        format!(
                            "Your reply could not be used: {problem}. Answer again with exactly one fenced ```json block \
                             in the format given under \"Expected output\"."
                        ),
                    ));
                    last_reply = reply;
                }
            }
        }
        self.finish(kind, task, attempts)?;
        match result {
            Some(p) => Ok(p),
            None => {
                self.last_retry_count = self.config.max_retries;
                Err(ReasonerError::MalformedAfterRetries {
                    attempts: self.config.max_retries + 1,
                    excerpt: last_reply.chars().take(200).collect(),
                })
            }
        }
    }

    fn finish(&self, kind: &str, task: &str, attempts: Vec<Attempt>) -> Result<(), ReasonerError> {
        match &self.transcripts {
            Some(log) => log.write(&Transcript {
                kind,
                task,
                model: &self.config.model,
                attempts,
            }),
            None => Ok(()),
        }
    }
}

impl<T: ChatTransport> Reasoner for LlmReasoner<T> {
    fn backend_id(&self) -> &str {
        LLM_BACKEND
    }

    fn learn(&mut self, archive: &Archive, space: &SpaceDescriptor) -> Result<DesignPrinciple, ReasonerError> {
        let bundle = build_learning_prompt(archive, space, &self.template)?;
        let prov = self.provenance(Provenance::new(archive.task(), LLM_BACKEND));
        self.converse("learn", archive.task(), bundle, space, prov, &|_| Ok(()))
    }

    fn adapt(
        &mut self,
        principle: &DesignPrinciple,
        top: &Archive,
        space: &SpaceDescriptor,
    ) -> Result<DesignPrinciple, ReasonerError> {
        let bundle = build_adapt_prompt(principle, top, space, &self.template)?;
        let prov = self.provenance(Provenance {
            generation: principle.generation() + 1,
            ..principle.provenance().clone()
        });
        self.converse("adapt", top.task(), bundle, space, prov, &|_| Ok(()))
    }

    fn explore(
        &mut self,
        principle: &DesignPrinciple,
        space: &SpaceDescriptor,
    ) -> Result<DesignPrinciple, ReasonerError> {
        let bundle = build_explore_prompt(principle, space, &self.template)?;
        let prov = self.provenance(Provenance {
            generation: principle.generation() + 1,
            ..principle.provenance().clone()
        });
        let previous = principle.per_layer().to_vec();
        let everything_open = principle.is_all();
        let check = move |p: &DesignPrinciple| {
            if !everything_open && p.per_layer() == previous.as_slice() {
                Err(
                    "the principle is unchanged; exploration must allow choices the current principle excludes"
                        .to_string(),
                )
            } else {
                Ok(())
            }
        };
        let task = principle.provenance().source_task.clone();
        self.converse("explore", &task, bundle, space, prov, &check)
    }
}
