//! Chat-completion wire protocol.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("environment variable `{0}` holding the API key is not set")]
    MissingSecret(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("request failed: {0}")]
    Network(String),
    #[error("malformed reply: {0}")]
    BadReply(String),
}

/// Sends one chat request and returns the assistant's message content.
pub trait ChatTransport {
    fn send(&mut self, request: &ChatRequest) -> Result<String, TransportError>;
}

impl<T: ChatTransport + ?Sized> ChatTransport for Box<T> {
    fn send(&mut self, request: &ChatRequest) -> Result<String, TransportError> {
        (**self).send(request)
    }
}

#[derive(Deserialize)]
struct Reply {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

/// Extracts the first choice's message content from a reply body.
pub fn parse_chat_reply(body: &str) -> Result<String, TransportError> {
    let reply: Reply = serde_json::from_str(body).map_err(|e| TransportError::BadReply(e.to_string()))?;
    reply
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| TransportError::BadReply("no message content in the first choice".into()))
}

fn excerpt(text: &str, max: usize) -> String {
    match text.char_indices().nth(max) {
        Some((i, _)) => format!("{}…", &text[..i]),
        None => text.to_string(),
    }
}

/// Blocking HTTP transport with bearer authorization.
///
/// The secret is read from the environment on every request and never kept.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: Url,
    api_key_env: String,
}

impl HttpTransport {
    pub fn new(endpoint: Url, api_key_env: impl Into<String>, timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(HttpTransport {
            client,
            endpoint,
            api_key_env: api_key_env.into(),
        })
    }
}

impl ChatTransport for HttpTransport {
    fn send(&mut self, request: &ChatRequest) -> Result<String, TransportError> {
        let key =
            std::env::var(&self.api_key_env).map_err(|_| TransportError::MissingSecret(self.api_key_env.clone()))?;
        let resp = self
            .client
            .post(self.endpoint.clone())
            .bearer_auth(key)
            .json(request)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    TransportError::Timeout
                } else {
                    TransportError::Network(e.without_url().to_string())
                }
            })?;
        let status = resp.status();
        let body = resp.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Network(e.to_string())
            }
        })?;
        if !status.is_success() {
            return Err(TransportError::Status {
                status: status.as_u16(),
                body: excerpt(&body, 300),
            });
        }
        parse_chat_reply(&body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reply_content_is_extracted() {
        let body = r#"{"id":"x","choices":[{"index":0,"message":{"role":"assistant","content":"hello"}},
                      {"index":1,"message":{"role":"assistant","content":"other"}}]}"#;
        assert_eq!(parse_chat_reply(body).unwrap(), "hello");
    }

    #[test]
    fn malformed_replies_are_reported() {
        for body in [
            "not json",
            r#"{"choices":[]}"#,
            r#"{"choices":[{"message":{"content":null}}]}"#,
        ] {
            assert!(
                matches!(parse_chat_reply(body), Err(TransportError::BadReply(_))),
                "{body}"
            );
        }
    }

    #[test]
    fn request_serializes_to_wire_format() {
        let req = ChatRequest {
            model: "m".into(),
            temperature: 0.0,
            messages: vec![ChatMessage::new(Role::System, "s"), ChatMessage::new(Role::User, "u")],
        };
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"model":"m","temperature":0.0,
                "messages":[{"role":"system","content":"s"},{"role":"user","content":"u"}]})
        );
    }

    #[test]
    fn excerpt_truncates_on_char_boundaries() {
        assert_eq!(excerpt("ééé", 2), "éé…");
        assert_eq!(excerpt("ab", 5), "ab");
    }
}
