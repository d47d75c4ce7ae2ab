// SPDX-License-Identifier: MIT OR Apache-2.0

//! LLM-backed explanations over an OpenAI-compatible chat-completion API.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CircuitEvidence, Explanation, ExplanationMethod};
use crate::error::{Error, Result};
use crate::faithfulness::Role;

/// Prompt asset; the version is part of the file name and of every report.
pub const PROMPT_TEMPLATE: &str = include_str!("../../data/llm_prompt_v1.txt");
pub const PROMPT_VERSION: &str = "llm_prompt_v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Base URL such as `https://api.openai.com/v1`; `None` disables the live backend.
    pub endpoint: Option<String>,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    /// Canned responses replayed instead of calling the endpoint.
    pub mock_responses: Option<PathBuf>,
    pub concurrency: usize,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub temperature: f64,
    /// Log request and response bodies, with the token redacted.
    pub debug: bool,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: "gpt-4o-mini".into(),
            api_key_env: "HEADLENS_LLM_API_KEY".into(),
            mock_responses: None,
            concurrency: 4,
            timeout_secs: 60,
            max_attempts: 3,
            temperature: 0.0,
            debug: false,
        }
    }
}

impl LlmConfig {
    pub fn is_configured(&self) -> bool {
        self.endpoint.is_some() || self.mock_responses.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmPrompt {
    pub system: String,
    pub user: String,
}

fn section<'a>(template: &'a str, name: &str) -> &'a str {
    let marker = format!("[{name}]\n");
    let start = template.find(&marker).map(|i| i + marker.len()).unwrap_or(0);
    let end = template[start..]
        .find("\n[")
        .map(|i| start + i)
        .unwrap_or(template.len());
    template[start..end].trim()
}

fn fill(text: &str, vars: &BTreeMap<&str, String>) -> String {
    vars.iter()
        .fold(text.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
}

fn evidence_vars(evidence: &CircuitEvidence) -> BTreeMap<&'static str, String> {
    let heads = evidence
        .head_rows()
        .map(|(h, io, s)| {
            let role = evidence
                .roles
                .get(&h)
                .filter(|r| **r != Role::Unassigned)
                .map(|r| format!(" ({r})"))
                .unwrap_or_default();
            let c = evidence.contributions.get(&h).copied().unwrap_or(0.0);
            format!(
                "- {h}{role}: {io:.1}% attention to {}, {s:.1}% to {}, contribution {c:+.3}",
                evidence.io_name, evidence.s_name
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let (top, top_io, top_s) = evidence
        .head_rows()
        .next()
        .map(|(h, io, s)| (h.to_string(), io, s))
        .unwrap_or_default();
    BTreeMap::from([
        ("prompt", evidence.prompt.clone()),
        ("pred", evidence.predicted_token.clone()),
        ("confidence", format!("{:.1}", evidence.confidence * 100.0)),
        ("io", evidence.io_name.clone()),
        ("s", evidence.s_name.clone()),
        ("heads", heads),
        ("head", top),
        ("io_pct", format!("{top_io:.1}")),
        ("s_pct", format!("{top_s:.1}")),
    ])
}

/// Renders the versioned prompt for `evidence`.
pub fn build_prompt(evidence: &CircuitEvidence) -> LlmPrompt {
    let vars = evidence_vars(evidence);
    LlmPrompt {
        system: fill(section(PROMPT_TEMPLATE, "system"), &vars),
        user: fill(section(PROMPT_TEMPLATE, "user"), &vars),
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, evidence: &CircuitEvidence, prompt: &LlmPrompt) -> Result<String>;
}

/// Replays canned responses keyed by example id, falling back to `default`.
///
/// Responses may use the placeholders `{pred}`, `{io}`, `{s}`, `{head}`,
/// `{io_pct}`, `{s_pct}` and `{confidence}`, filled from the evidence.
#[derive(Debug, Clone, Deserialize)]
pub struct MockChatClient {
    #[serde(default)]
    default: Option<String>,
    #[serde(default)]
    responses: BTreeMap<String, String>,
}

impl MockChatClient {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn with_default(text: impl Into<String>) -> Self {
        Self {
            default: Some(text.into()),
            responses: BTreeMap::new(),
        }
    }
}

impl ChatBackend for MockChatClient {
    fn complete(&self, evidence: &CircuitEvidence, _prompt: &LlmPrompt) -> Result<String> {
        let canned = self
            .responses
            .get(&evidence.example_id.to_string())
            .or(self.default.as_ref())
            .ok_or_else(|| Error::Llm(format!("no canned response for example {}", evidence.example_id)))?;
        Ok(fill(canned, &evidence_vars(evidence)))
    }
}

/// Blocking client for `POST {endpoint}/chat/completions`.
pub struct HttpChatClient {
    agent: ureq::Agent,
    url: String,
    model: String,
    token: Option<String>,
    max_attempts: u32,
    temperature: f64,
    debug: bool,
    backoff: Duration,
}

impl HttpChatClient {
    pub fn new(config: &LlmConfig) -> Result<Self> {
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or_else(|| Error::Config("LLM endpoint not configured".into()))?;
        let token = std::env::var(&config.api_key_env).ok().filter(|t| !t.is_empty());
        if token.is_none() {
            log::warn!(
                "{} is not set; calling {endpoint} without a bearer token",
                config.api_key_env
            );
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            agent,
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            model: config.model.clone(),
            token,
            max_attempts: config.max_attempts.max(1),
            temperature: config.temperature,
            debug: config.debug,
            backoff: Duration::from_millis(500),
        })
    }

    /// Overrides the initial retry delay (doubled after each failure).
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String> {
        let mut request = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request.send(body.to_string()).map_err(|e| Error::Llm(e.to_string()))?;
        let reply: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::Llm(format!("unreadable response: {e}")))?;
        if self.debug {
            log::debug!("response from {}: {reply}", self.url);
        }
        let text = reply["choices"][0]["message"]["content"]
            .as_str()
            .unwrap_or_default()
            .trim();
        if text.is_empty() {
            return Err(Error::Llm("empty response".into()));
        }
        Ok(text.to_string())
    }
}

impl ChatBackend for HttpChatClient {
    fn complete(&self, _evidence: &CircuitEvidence, prompt: &LlmPrompt) -> Result<String> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
        });
        if self.debug {
            let auth = if self.token.is_some() {
                "Bearer [REDACTED]"
            } else {
                "none"
            };
            log::debug!("POST {} (authorization: {auth}): {body}", self.url);
        }
        let mut delay = self.backoff;
        let mut last = None;
        for attempt in 1..=self.max_attempts {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("LLM attempt {attempt}/{} failed: {e}", self.max_attempts);
                    last = Some(e);
                    if attempt < self.max_attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(last.unwrap_or_else(|| Error::Llm("no attempt made".into())))
    }
}

/// Builds the backend selected by `config`: mock responses win over a live endpoint.
pub fn backend_from_config(config: &LlmConfig) -> Result<Option<Box<dyn ChatBackend>>> {
    if let Some(path) = &config.mock_responses {
        return Ok(Some(Box::new(MockChatClient::from_file(path)?)));
    }
    if config.endpoint.is_some() {
        return Ok(Some(Box::new(HttpChatClient::new(config)?)));
    }
    Ok(None)
}

pub fn llm_explain(evidence: &CircuitEvidence, client: &dyn ChatBackend) -> Result<Explanation> {
    let prompt = build_prompt(evidence);
    let text = client.complete(evidence, &prompt)?;
    Explanation::new(text, ExplanationMethod::LlmGenerated, evidence.example_id)
        .map_err(|_| Error::Llm(format!("empty response for example {}", evidence.example_id)))
}

/// Explains every example with at most `concurrency` requests in flight.
///
/// Results keep the input order; a failure affects only its own example.
pub fn llm_explain_all(
    evidence: &[CircuitEvidence],
    client: &dyn ChatBackend,
    concurrency: usize,
) -> Result<Vec<Result<Explanation>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build LLM worker pool: {e}")))?;
    Ok(pool.install(|| evidence.par_iter().map(|e| llm_explain(e, client)).collect()))
}
