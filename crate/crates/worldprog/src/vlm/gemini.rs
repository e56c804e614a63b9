//! Live backend for the Gemini `generateContent` REST endpoint.

use std::fmt;
use std::time::{Duration, Instant};

use base64::Engine;
use serde_json::{json, Value};
use worldprog_core::prompt::{Content, Role};

use super::{count_network_call, ChatBackend, ChatRequest, ChatResponse, Usage};
use crate::config::ModelConfig;
use crate::imageio::encode_png;
use crate::{Error, Result};

/// Exponential backoff: `base`, `base·factor`, ... between attempts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 5, base_delay: Duration::from_secs(1), factor: 2.0 }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, counting from 1.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base_delay.mul_f64(self.factor.powi(attempt.saturating_sub(1) as i32))
    }
}

enum Failure {
    Transient(String),
    Fatal(Error),
}

pub struct GeminiBackend {
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl fmt::Debug for GeminiBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeminiBackend")
            .field("endpoint", &self.endpoint)
            .field("api_key", &"<redacted>")
            .field("retry", &self.retry)
            .finish()
    }
}

impl GeminiBackend {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, timeout: Duration, retry: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { endpoint: endpoint.into().trim_end_matches('/').to_string(), api_key: api_key.into(), agent, retry }
    }

    /// Reads the key from the environment variable named in the config.
    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        let key = std::env::var(&cfg.api_key_env)
            .map_err(|_| Error::Auth(format!("environment variable {} is not set", cfg.api_key_env)))?;
        let retry = RetryPolicy {
            max_attempts: cfg.max_attempts,
            base_delay: Duration::from_millis(cfg.backoff_base_ms),
            factor: cfg.backoff_factor,
        };
        Ok(Self::new(&cfg.endpoint, key, Duration::from_secs_f64(cfg.request_timeout_s), retry))
    }

    fn body(&self, request: &ChatRequest) -> Result<Value> {
        let mut system = Vec::new();
        let mut user = Vec::new();
        for part in &request.bundle.parts {
            let v = match &part.content {
                Content::Text { text } => json!({ "text": text }),
                Content::Image { image } => json!({
                    "inline_data": {
                        "mime_type": "image/png",
                        "data": base64::engine::general_purpose::STANDARD.encode(encode_png(image)?),
                    }
                }),
            };
            match (part.role, &part.content) {
                (Role::System, Content::Text { .. }) => system.push(v),
                _ => user.push(v),
            }
        }
        let mut body = json!({
            "contents": [{ "role": "user", "parts": user }],
            "generationConfig": { "temperature": request.temperature, "maxOutputTokens": request.max_output },
        });
        if !system.is_empty() {
            body["systemInstruction"] = json!({ "parts": system });
        }
        Ok(body)
    }

    fn attempt(&self, url: &str, body: &Value) -> std::result::Result<ChatResponse, Failure> {
        count_network_call();
        let started = Instant::now();
        let mut resp = match self.agent.post(url).header("x-goog-api-key", &self.api_key).send_json(body) {
            Ok(r) => r,
            Err(e) => return Err(Failure::Transient(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| Failure::Transient(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(Failure::Fatal(Error::Auth(format!("HTTP {status}")))),
            408 | 429 | 500..=599 => return Err(Failure::Transient(format!("HTTP {status}"))),
            _ => return Err(Failure::Fatal(Error::Backend(format!("HTTP {status}: {}", snippet(&text))))),
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| Failure::Fatal(Error::Backend(format!("bad JSON: {e}"))))?;
        let parts = v["candidates"][0]["content"]["parts"]
            .as_array()
            .ok_or_else(|| Failure::Fatal(Error::Backend(format!("no candidate text in {}", snippet(&text)))))?;
        let text: String = parts.iter().filter_map(|p| p["text"].as_str()).collect();
        let usage = Usage {
            input_tokens: v["usageMetadata"]["promptTokenCount"].as_u64().unwrap_or(0),
            output_tokens: v["usageMetadata"]["candidatesTokenCount"].as_u64().unwrap_or(0),
        };
        Ok(ChatResponse { text, usage, latency_ms: started.elapsed().as_millis() as u64 })
    }
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}

impl ChatBackend for GeminiBackend {
    fn name(&self) -> &str {
        "gemini"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        request.validate()?;
        let url = format!("{}/v1beta/models/{}:generateContent", self.endpoint, request.model_id);
        let body = self.body(request)?;
        let mut last = String::new();
        for attempt in 1..=self.retry.max_attempts {
            match self.attempt(&url, &body) {
                Ok(r) => return Ok(r),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(msg)) => {
                    tracing::warn!(attempt, error = %msg, "transient VLM failure");
                    last = msg;
                    if attempt < self.retry.max_attempts {
                        std::thread::sleep(self.retry.delay_after(attempt));
                    }
                }
            }
        }
        Err(Error::RetriesExhausted { attempts: self.retry.max_attempts, last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_from_one_second() {
        let p = RetryPolicy::default();
        let d: Vec<u64> = (1..5).map(|a| p.delay_after(a).as_millis() as u64).collect();
        assert_eq!(d, vec![1000, 2000, 4000, 8000]);
        assert_eq!(p.max_attempts, 5);
    }

    #[test]
    fn debug_output_hides_key() {
        let b = GeminiBackend::new("http://x", "sekrit-key", Duration::from_secs(1), RetryPolicy::default());
        assert!(!format!("{b:?}").contains("sekrit"));
    }
}
