//! Chat-completion clients (live, replayed, recording) and a sentiment
//! classifier driven by a chat client.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use predex::model::InputModel;
use predex::perturb::{EMPTY_SENTINEL, MASK_TOKEN, UNK_TOKEN};
use predex::prompt::{parse_answer, slots, templated_chat, ChatClient, Template};
use predex::{Error, Prediction, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::digest::digest;
use crate::fixtures::FixtureStore;
use crate::http;
use crate::retry::{excerpt, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    pub model: String,
    pub temperature: f64,
}

impl Default for ChatParams {
    fn default() -> Self {
        ChatParams { model: "default".into(), temperature: 0.0 }
    }
}

/// Chat-completion request body for a single user message.
pub fn request_body(params: &ChatParams, prompt: &str) -> Value {
    json!({
        "model": params.model,
        "messages": [{ "role": "user", "content": prompt }],
        "temperature": params.temperature,
    })
}

/// Live client for a chat-completion endpoint
/// (`choices[0].message.content` in the reply).
pub struct HttpChat {
    id: String,
    url: String,
    params: ChatParams,
    bearer: Option<String>,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl HttpChat {
    pub fn new(id: impl Into<String>, url: impl Into<String>, params: ChatParams, bearer: Option<String>, timeout: Duration) -> Self {
        HttpChat {
            id: id.into(),
            url: url.into(),
            params,
            bearer,
            agent: http::agent(timeout),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn params(&self) -> &ChatParams {
        &self.params
    }
}

impl ChatClient for HttpChat {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let body = request_body(&self.params, prompt);
        let reply = self.retry.run(|| http::post_json(&self.agent, &self.url, self.bearer.as_deref(), &body))?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Protocol(format!("{}: no message content; payload: {}", self.id, excerpt(&reply.to_string()))))
    }
}

/// Offline client answering from fixtures keyed by the request digest.
pub struct ReplayChat {
    id: String,
    params: ChatParams,
    store: FixtureStore,
}

impl ReplayChat {
    pub fn new(root: impl AsRef<Path>, id: impl Into<String>, params: ChatParams) -> Result<Self> {
        let id = id.into();
        Ok(ReplayChat { store: FixtureStore::new(root, &id)?, id, params })
    }
}

fn fixture_reply(v: &Value, id: &str) -> Result<String> {
    v.get("response")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::Protocol(format!("{id}: fixture lacks a \"response\" string")))
}

impl ChatClient for ReplayChat {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let v = self.store.require(&digest(&request_body(&self.params, prompt)))?;
        fixture_reply(&v, &self.id)
    }
}

/// Serves from fixtures when present, otherwise forwards to `inner` and
/// records the exchange.
pub struct RecordingChat {
    inner: Box<dyn ChatClient>,
    params: ChatParams,
    store: FixtureStore,
}

impl RecordingChat {
    pub fn new(inner: Box<dyn ChatClient>, params: ChatParams, root: impl AsRef<Path>) -> Result<Self> {
        let store = FixtureStore::new(root, inner.id())?;
        Ok(RecordingChat { inner, params, store })
    }
}

impl ChatClient for RecordingChat {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let body = request_body(&self.params, prompt);
        let key = digest(&body);
        if let Some(v) = self.store.get(&key)? {
            return fixture_reply(&v, self.id());
        }
        let reply = self.inner.complete(prompt)?;
        self.store.put(&key, &json!({ "request": body, "response": reply }))?;
        Ok(reply)
    }
}

/// Binary sentiment classifier backed by a chat client and a template with
/// an `{input}` slot; the reply's answer must be `1` or `0`. Masked words
/// are shown to the client as `<UNK>` and empty text as `<EMPTY>`.
pub struct ChatModel {
    client: Arc<dyn ChatClient>,
    template: Template,
    retries: usize,
}

impl ChatModel {
    pub fn new(client: Arc<dyn ChatClient>, template: Template, retries: usize) -> Result<Self> {
        if !template.placeholders().contains("input") {
            return Err(Error::Template(format!("{}: classifier template needs an {{input}} slot", template.id)));
        }
        Ok(ChatModel { client, template, retries })
    }

    pub fn id(&self) -> String {
        format!("chat-{}", self.client.id())
    }

    fn prompt_text(input: &str) -> String {
        if input.trim().is_empty() {
            return EMPTY_SENTINEL.to_string();
        }
        input.split_whitespace().map(|t| if t == MASK_TOKEN { UNK_TOKEN } else { t }).collect::<Vec<_>>().join(" ")
    }

    pub fn classify(&self, input: &str) -> Result<usize> {
        let s = slots([("input", Self::prompt_text(input))]);
        templated_chat(self.client.as_ref(), &self.template, &s, self.retries, |raw| {
            match parse_answer(raw)?.as_str() {
                "1" => Ok(1),
                "0" => Ok(0),
                other => Err(format!("answer must be 1 or 0, got {other:?}")),
            }
        })
    }
}

impl InputModel<String> for ChatModel {
    fn predict_batch(&self, inputs: &[String]) -> Result<Vec<Prediction>> {
        inputs.par_iter().map(|s| self.classify(s).map(Prediction::label_only)).collect()
    }
}
