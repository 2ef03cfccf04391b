use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    /// Base URL; requests go to `<base_url>/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub auth_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_prompt_max_len")]
    pub prompt_max_len: usize,
    #[serde(default = "default_generate_max_len")]
    pub generate_max_len: usize,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub temperature: f64,
    /// First retry delay; doubles on every further attempt.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_timeout() -> u64 {
    120
}
fn default_retries() -> u32 {
    3
}
fn default_prompt_max_len() -> usize {
    8192
}
fn default_generate_max_len() -> usize {
    2048
}
fn default_concurrency() -> usize {
    4
}
fn default_backoff() -> u64 {
    500
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, auth_env: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model: model.into(),
            auth_env: auth_env.into(),
            timeout_s: default_timeout(),
            max_retries: default_retries(),
            prompt_max_len: default_prompt_max_len(),
            generate_max_len: default_generate_max_len(),
            concurrency: default_concurrency(),
            temperature: 0.0,
            backoff_ms: default_backoff(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, GatewayError> {
        let cfg: EndpointConfig = toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::Config(m.to_string()));
        if self.timeout_s == 0 {
            return bad("timeout_s must be positive");
        }
        if self.prompt_max_len == 0 || self.generate_max_len == 0 {
            return bad("prompt_max_len and generate_max_len must be positive");
        }
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be finite and non-negative");
        }
        Ok(())
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("auth variable {0} is not set")]
    AuthMissing(String),
    #[error("request timed out")]
    Timeout,
    #[error("endpoint returned HTTP {0}")]
    HttpStatus(u16),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("unexpected response body: {0}")]
    BadResponse(String),
    #[error("gave up after {attempts} attempts, last error: {last}")]
    RetriesExhausted { attempts: u32, last: Box<GatewayError> },
    #[error("invalid endpoint config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

impl GatewayError {
    fn transient(&self) -> bool {
        match self {
            GatewayError::Timeout | GatewayError::Transport(_) => true,
            GatewayError::HttpStatus(code) => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

/// Reads the bearer token named by the config.
pub fn auth_token(cfg: &EndpointConfig) -> Result<String, GatewayError> {
    match std::env::var(&cfg.auth_env) {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(GatewayError::AuthMissing(cfg.auth_env.clone())),
    }
}

fn is_timeout(err: &ureq::Transport) -> bool {
    let mut source: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(err);
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) {
                return true;
            }
        }
        source = e.source();
    }
    err.to_string().contains("timed out")
}

fn attempt(agent: &ureq::Agent, cfg: &EndpointConfig, token: &str, body: &Value) -> Result<String, GatewayError> {
    let resp = agent
        .post(&cfg.url())
        .set("Authorization", &format!("Bearer {token}"))
        .send_json(body.clone())
        .map_err(|e| match e {
            ureq::Error::Status(code, _) => GatewayError::HttpStatus(code),
            ureq::Error::Transport(t) if is_timeout(&t) => GatewayError::Timeout,
            ureq::Error::Transport(t) => GatewayError::Transport(t.to_string()),
        })?;
    let v: Value = resp.into_json().map_err(|e| {
        if e.kind() == std::io::ErrorKind::TimedOut || e.kind() == std::io::ErrorKind::WouldBlock {
            GatewayError::Timeout
        } else {
            GatewayError::BadResponse(e.to_string())
        }
    })?;
    v["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| GatewayError::BadResponse(v.to_string().chars().take(200).collect()))
}

/// One single-message chat completion with retries on timeouts, transport
/// errors, 429 and 5xx. The auth variable is checked before any request.
pub fn query_model(cfg: &EndpointConfig, prompt: &str) -> Result<String, GatewayError> {
    let token = auth_token(cfg)?;
    let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(cfg.timeout_s)).build();
    let body = json!({
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt}],
        "max_tokens": cfg.generate_max_len,
        "temperature": cfg.temperature,
    });
    let attempts = cfg.max_retries + 1;
    let mut last = GatewayError::Timeout;
    for i in 0..attempts {
        if i > 0 {
            std::thread::sleep(Duration::from_millis(cfg.backoff_ms.saturating_mul(1 << (i - 1).min(16))));
        }
        match attempt(&agent, cfg, &token, &body) {
            Ok(text) => return Ok(text),
            Err(e) => {
                tracing::warn!(attempt = i + 1, "chat completion failed: {e}");
                if !e.transient() {
                    return Err(e);
                }
                last = e;
            }
        }
    }
    Err(GatewayError::RetriesExhausted { attempts, last: Box::new(last) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_from_toml() {
        let cfg = EndpointConfig::from_toml("base_url = \"http://x/v1\"\nmodel = \"m\"\nauth_env = \"K\"\nmax_retries = 0\n").unwrap();
        assert_eq!(cfg.prompt_max_len, 8192);
        assert_eq!(cfg.generate_max_len, 2048);
        assert_eq!(cfg.max_retries, 0);
        assert_eq!(cfg.url(), "http://x/v1/chat/completions");
        assert!(EndpointConfig::from_toml("base_url = \"x\"\nmodel = \"m\"\nauth_env = \"K\"\nconcurrency = 0\n").is_err());
        assert!(EndpointConfig::from_toml("base_url = \"x\"\nmodel = \"m\"\nauth_env = \"K\"\ncolour = 1\n").is_err());
    }

    #[test]
    fn missing_auth_fails_first() {
        // nothing listens on this port, so any request would fail differently
        let cfg = EndpointConfig::new("http://127.0.0.1:9", "m", "WIA_TEST_SURELY_UNSET_VAR");
        assert_eq!(query_model(&cfg, "hi"), Err(GatewayError::AuthMissing("WIA_TEST_SURELY_UNSET_VAR".into())));
    }
}
