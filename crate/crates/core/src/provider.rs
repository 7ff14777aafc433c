//! Shared plumbing for remote providers: a counting gate that bounds
//! in-flight requests and a minimal chat-completion client used by the
//! remote extractor and generator.

use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bounds concurrent calls into a remote endpoint. Acquire blocks until a
/// slot frees up; the returned guard releases on drop.
pub struct InFlightGate {
    limit: usize,
    state: Mutex<usize>,
    cond: Condvar,
}

impl InFlightGate {
    pub fn new(limit: usize) -> Self {
        InFlightGate {
            limit: limit.max(1),
            state: Mutex::new(0),
            cond: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightSlot<'_> {
        let mut in_flight = self.state.lock().unwrap();
        while *in_flight >= self.limit {
            in_flight = self.cond.wait(in_flight).unwrap();
        }
        *in_flight += 1;
        InFlightSlot { gate: self }
    }
}

pub struct InFlightSlot<'a> {
    gate: &'a InFlightGate,
}

impl Drop for InFlightSlot<'_> {
    fn drop(&mut self) {
        let mut in_flight = self.gate.state.lock().unwrap();
        *in_flight -= 1;
        self.gate.cond.notify_one();
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

/// Blocking client for an OpenAI-style chat endpoint.
pub struct ChatClient {
    base_url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    gate: InFlightGate,
}

impl ChatClient {
    pub fn new(
        base_url: &str,
        model: &str,
        api_key: Option<String>,
        max_in_flight: usize,
    ) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(ChatClient {
            base_url: base_url.to_string(),
            model: model.to_string(),
            api_key,
            client,
            gate: InFlightGate::new(max_in_flight),
        })
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    /// Send one system+user exchange, returning the assistant text.
    pub fn complete(&self, system: &str, user: &str) -> Result<String> {
        let _slot = self.gate.acquire();
        let mut request = self.client.post(&self.base_url).json(&ChatRequest {
            model: &self.model,
            messages: vec![
                ChatMessage { role: "system", content: system },
                ChatMessage { role: "user", content: user },
            ],
        });
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| Error::Transport(e.to_string()))?;
        if !response.status().is_success() {
            return Err(Error::Transport(format!(
                "chat endpoint returned {}",
                response.status()
            )));
        }
        let body: ChatResponse = response
            .json()
            .map_err(|e| Error::ProviderParse(e.to_string()))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::ProviderParse("empty choices array".into()))
    }
}
