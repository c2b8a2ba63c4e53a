//! Chat-completion clients: a real HTTP client for an OpenAI-style endpoint
//! and test doubles used throughout the suite.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ExtractError;

/// Environment variable holding the endpoint credential.
pub const API_KEY_ENV: &str = "EDRK_LLM_API_KEY";

/// Blocking chat-completion interface. Implementations must be safe to call
/// from several threads at once.
pub trait ChatClient: Send + Sync {
    fn complete(&self, system: &str, user: &str) -> Result<String, ExtractError>;
}

/// Either a configured endpoint or the deterministic offline fallback.
pub enum ExtractClient {
    Offline,
    Endpoint(Box<dyn ChatClient>),
}

impl ExtractClient {
    pub fn is_offline(&self) -> bool {
        matches!(self, ExtractClient::Offline)
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<Message<'a>>,
    temperature: f64,
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: String,
}

/// OpenAI-compatible chat-completion endpoint. Decoding is pinned to
/// temperature zero, single completion.
pub struct HttpChatClient {
    pub url: String,
    pub model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(url: &str, model: &str) -> Self {
        HttpChatClient {
            url: url.to_string(),
            model: model.to_string(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            agent: ureq::Agent::new_with_defaults(),
        }
    }

    fn attempt(&self, system: &str, user: &str) -> Result<String, ExtractError> {
        let body = ChatRequest {
            model: &self.model,
            messages: vec![
                Message { role: "system", content: system },
                Message { role: "user", content: user },
            ],
            temperature: 0.0,
        };
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = req
            .send_json(&body)
            .map_err(|e| ExtractError::Transport(e.to_string()))?;
        let parsed: ChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| ExtractError::Transport(format!("malformed response: {e}")))?;
        parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| ExtractError::Transport("response carried no choices".into()))
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, system: &str, user: &str) -> Result<String, ExtractError> {
        // One transport retry before giving up.
        match self.attempt(system, user) {
            Ok(text) => Ok(text),
            Err(_) => self.attempt(system, user),
        }
    }
}

/// Test double that counts calls and replays scripted responses (cycling
/// when exhausted).
pub struct ScriptedClient {
    responses: Mutex<Vec<String>>,
    cursor: AtomicUsize,
    pub calls: AtomicUsize,
}

impl ScriptedClient {
    pub fn new<S: Into<String>>(responses: Vec<S>) -> Self {
        ScriptedClient {
            responses: Mutex::new(responses.into_iter().map(Into::into).collect()),
            cursor: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatClient for ScriptedClient {
    fn complete(&self, _system: &str, _user: &str) -> Result<String, ExtractError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let responses = self.responses.lock().unwrap();
        if responses.is_empty() {
            return Err(ExtractError::Transport("scripted client is empty".into()));
        }
        let i = self.cursor.fetch_add(1, Ordering::SeqCst) % responses.len();
        Ok(responses[i].clone())
    }
}

/// Test double that always fails at the transport level.
pub struct FailingClient;

impl ChatClient for FailingClient {
    fn complete(&self, _system: &str, _user: &str) -> Result<String, ExtractError> {
        Err(ExtractError::Transport("connection refused".into()))
    }
}
