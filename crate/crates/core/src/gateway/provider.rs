//! Chat-completion providers: a live HTTP client and a scripted fake.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned status {0}: {1}")]
    Status(u16, String),
    #[error("empty response")]
    Empty,
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("no scripted response for prompt {0}")]
    NoScript(String),
    #[error("fixture error: {0}")]
    Fixture(String),
}

/// Sends one single-turn prompt and returns the raw reply text.
pub trait ChatProvider: Send + Sync {
    fn model_id(&self) -> &str;
    fn send(&self, prompt: &str) -> Result<String, ProviderError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for Arc<P> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn send(&self, prompt: &str) -> Result<String, ProviderError> {
        (**self).send(prompt)
    }
}

/// Lowercase hex SHA-256 of `text`.
pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    /// Full URL of an OpenAI-compatible `chat/completions` endpoint.
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    /// `None` leaves the provider's default; the default config sends 0.
    #[serde(default = "default_temperature")]
    pub temperature: Option<f64>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_temperature() -> Option<f64> {
    Some(0.0)
}

fn default_timeout() -> u64 {
    120
}

/// Blocking client for OpenAI-compatible chat endpoints.
pub struct LiveProvider {
    config: LiveConfig,
    agent: ureq::Agent,
}

impl LiveProvider {
    pub fn new(config: LiveConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        LiveProvider { config, agent }
    }

    pub fn config(&self) -> &LiveConfig {
        &self.config
    }

    fn request_body(&self, prompt: &str) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        body
    }
}

impl ChatProvider for LiveProvider {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn send(&self, prompt: &str) -> Result<String, ProviderError> {
        let mut request = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(self.request_body(prompt))
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ProviderError::Status(
                status,
                text.chars().take(300).collect(),
            ));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        let content = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| ProviderError::Malformed("missing choices[0].message.content".into()))?;
        Ok(content.to_string())
    }
}

/// How a scripted rule recognizes a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMatcher {
    /// SHA-256 of the full rendered prompt.
    PromptHash(String),
    /// Substring of the rendered prompt.
    Contains(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(flatten)]
    pub matcher: PromptMatcher,
    pub response: String,
}

/// Fixture file contents for [`ScriptedProvider`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptFixture {
    #[serde(default = "default_scripted_model")]
    pub model_id: String,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub default: Option<String>,
}

fn default_scripted_model() -> String {
    "scripted".to_string()
}

type Responder = dyn Fn(&str) -> Result<String, ProviderError> + Send + Sync;

/// Deterministic provider answering from rules or a closure.
pub struct ScriptedProvider {
    model_id: String,
    rules: Vec<ScriptRule>,
    default: Option<String>,
    responder: Option<Box<Responder>>,
    fixture_hash: String,
}

impl ScriptedProvider {
    pub fn from_fixture(fixture: ScriptFixture) -> Self {
        let fixture_hash = sha256_hex(&serde_json::to_string(&fixture).unwrap_or_default());
        ScriptedProvider {
            model_id: fixture.model_id,
            rules: fixture.rules,
            default: fixture.default,
            responder: None,
            fixture_hash,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Fixture(format!("{}: {e}", path.display())))?;
        let fixture: ScriptFixture = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Fixture(format!("{}: {e}", path.display())))?;
        let mut provider = Self::from_fixture(fixture);
        provider.fixture_hash = sha256_hex(&text);
        Ok(provider)
    }

    /// Answers every prompt through `f`. `label` stands in for a fixture hash.
    pub fn from_fn<F>(model_id: &str, label: &str, f: F) -> Self
    where
        F: Fn(&str) -> Result<String, ProviderError> + Send + Sync + 'static,
    {
        ScriptedProvider {
            model_id: model_id.to_string(),
            rules: Vec::new(),
            default: None,
            responder: Some(Box::new(f)),
            fixture_hash: sha256_hex(label),
        }
    }

    pub fn always(response: &str) -> Self {
        Self::from_fixture(ScriptFixture {
            model_id: default_scripted_model(),
            rules: Vec::new(),
            default: Some(response.to_string()),
        })
    }

    pub fn fixture_hash(&self) -> &str {
        &self.fixture_hash
    }
}

impl ChatProvider for ScriptedProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn send(&self, prompt: &str) -> Result<String, ProviderError> {
        if let Some(f) = &self.responder {
            return f(prompt);
        }
        let hash = sha256_hex(prompt);
        self.rules
            .iter()
            .find(|r| match &r.matcher {
                PromptMatcher::PromptHash(h) => h.eq_ignore_ascii_case(&hash),
                PromptMatcher::Contains(s) => prompt.contains(s.as_str()),
            })
            .map(|r| r.response.clone())
            .or_else(|| self.default.clone())
            .ok_or(ProviderError::NoScript(hash))
    }
}
