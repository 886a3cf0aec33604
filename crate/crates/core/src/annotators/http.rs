//! Blocking chat-completion client with retries.

use std::fmt;
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const DEFAULT_MAX_TOKENS: u32 = 1024;
pub const DEFAULT_MAX_RETRIES: u32 = 3;
pub const DEFAULT_BACKOFF_MS: u64 = 1000;
pub const DEFAULT_TIMEOUT_SECS: u64 = 300;
const CHAT_CONTENT_POINTER: &str = "/choices/0/message/content";

/// Request shape for servers that do not speak the chat-completion dialect.
///
/// String leaves equal to `{{model}}`, `{{prompt}}` or `{{max_tokens}}` are
/// substituted; `temperature` is always forced to 0 on the top-level object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestTemplate {
    pub body: Value,
    #[serde(default = "default_pointer")]
    pub response_pointer: String,
    #[serde(default)]
    pub headers: IndexMap<String, String>,
}

fn default_pointer() -> String {
    CHAT_CONTENT_POINTER.to_owned()
}

impl Default for RequestTemplate {
    fn default() -> Self {
        Self {
            body: json!({
                "model": "{{model}}",
                "messages": [{"role": "user", "content": "{{prompt}}"}],
                "temperature": 0,
                "max_tokens": "{{max_tokens}}",
            }),
            response_pointer: default_pointer(),
            headers: IndexMap::new(),
        }
    }
}

#[derive(Clone, Serialize, Deserialize)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    /// Never serialized.
    #[serde(skip)]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub max_tokens: u32,
    #[serde(default)]
    pub template: RequestTemplate,
}

impl fmt::Debug for HttpConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpConfig")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("timeout_secs", &self.timeout_secs)
            .field("max_retries", &self.max_retries)
            .field("backoff_base_ms", &self.backoff_base_ms)
            .field("max_tokens", &self.max_tokens)
            .finish()
    }
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            max_retries: DEFAULT_MAX_RETRIES,
            backoff_base_ms: DEFAULT_BACKOFF_MS,
            max_tokens: DEFAULT_MAX_TOKENS,
            template: RequestTemplate::default(),
        }
    }

    /// Request body for `prompt`, with greedy decoding enforced.
    pub fn request_body(&self, prompt: &str) -> Value {
        let mut body = substitute(&self.template.body, self, prompt);
        if let Value::Object(map) = &mut body {
            map.insert("temperature".into(), json!(0));
        }
        body
    }
}

fn substitute(v: &Value, cfg: &HttpConfig, prompt: &str) -> Value {
    match v {
        Value::String(s) => match s.as_str() {
            "{{model}}" => Value::String(cfg.model.clone()),
            "{{prompt}}" => Value::String(prompt.to_owned()),
            "{{max_tokens}}" => json!(cfg.max_tokens),
            _ => v.clone(),
        },
        Value::Array(items) => Value::Array(items.iter().map(|i| substitute(i, cfg, prompt)).collect()),
        Value::Object(map) => Value::Object(map.iter().map(|(k, i)| (k.clone(), substitute(i, cfg, prompt))).collect()),
        _ => v.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpFailure {
    pub attempts: u32,
    pub message: String,
}

enum AttemptError {
    Retryable(String),
    Fatal(String),
}

#[derive(Clone)]
pub struct HttpLlm {
    pub config: HttpConfig,
    agent: ureq::Agent,
}

impl fmt::Debug for HttpLlm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpLlm").field("config", &self.config).finish()
    }
}

impl HttpLlm {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    /// Sends `prompt` as one user message and returns the reply text.
    pub fn complete(&self, prompt: &str) -> Result<String, HttpFailure> {
        let body = self.config.request_body(prompt);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(AttemptError::Fatal(message)) => return Err(HttpFailure { attempts, message }),
                Err(AttemptError::Retryable(message)) => {
                    if attempts > self.config.max_retries {
                        return Err(HttpFailure { attempts, message });
                    }
                    let wait = self.config.backoff_base_ms.saturating_mul(1 << (attempts - 1).min(16));
                    log::warn!("request failed ({message}); retry {attempts} in {wait} ms");
                    std::thread::sleep(Duration::from_millis(wait));
                }
            }
        }
    }

    fn attempt(&self, body: &Value) -> Result<String, AttemptError> {
        let mut req = self.agent.post(&self.config.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        for (k, v) in &self.config.template.headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req.send_json(body).map_err(|e| AttemptError::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| AttemptError::Retryable(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(AttemptError::Retryable(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(AttemptError::Fatal(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| AttemptError::Fatal(format!("response is not JSON: {e}")))?;
        match value.pointer(&self.config.template.response_pointer) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(other) => Ok(other.to_string()),
            None => {
                Err(AttemptError::Fatal(format!("response has no field at {}", self.config.template.response_pointer)))
            }
        }
    }
}
