//! Remote chat-completion adapter: standard JSON wire shape
//! (`model`, `messages[{role,content}]`, `temperature` →
//! `choices[0].message.content`) with retry-on-transient and backoff.

use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// Raw HTTP status and body.
#[derive(Debug, Clone)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Minimal POST-JSON transport; faked in tests to script status sequences.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        auth_token: Option<&str>,
        body: &Value,
    ) -> Result<HttpReply, TransportError>;
}

/// Blocking reqwest-backed transport.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(ReqwestTransport { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        auth_token: Option<&str>,
        body: &Value,
    ) -> Result<HttpReply, TransportError> {
        let mut request = self.client.post(url).json(body);
        if let Some(token) = auth_token {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| TransportError(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response.text().map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

/// Exponential backoff with optional jitter. Retries apply to transport
/// failures, HTTP 429, and HTTP 5xx; other 4xx statuses fail immediately.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(200),
            max_delay: Duration::from_secs(5),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    fn delay_for(&self, attempt: u32) -> Duration {
        let exp = self
            .base_delay
            .saturating_mul(2u32.saturating_pow(attempt))
            .min(self.max_delay);
        if self.jitter && exp > Duration::ZERO {
            // Jitter in [delay/2, delay] keeps retries spread without
            // overshooting max_delay.
            let half = (exp / 2).as_nanos() as u64;
            Duration::from_nanos(half + rand::thread_rng().gen_range(0..=half))
        } else {
            exp
        }
    }

    /// Runs `call` with this policy. `retryable` classifies an Ok reply as
    /// transient-failure (retry) or final.
    pub fn run<T>(
        &self,
        mut call: impl FnMut() -> Result<T, TransportError>,
        mut retryable: impl FnMut(&T) -> bool,
    ) -> Result<T, GatewayError> {
        let mut last_error = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.delay_for(attempt - 1));
            }
            match call() {
                Ok(reply) if !retryable(&reply) => return Ok(reply),
                Ok(_) => last_error = "transient HTTP status".to_string(),
                Err(e) => last_error = e.0,
            }
        }
        Err(GatewayError::Transport { attempts: self.max_retries + 1, message: last_error })
    }
}

/// Chat-completion client for an HTTP endpoint.
pub struct RemoteBackend {
    transport: Box<dyn HttpTransport>,
    base_url: String,
    auth_token: Option<String>,
    retry: RetryPolicy,
}

impl RemoteBackend {
    pub fn new(
        transport: Box<dyn HttpTransport>,
        base_url: impl Into<String>,
        auth_token: Option<String>,
        retry: RetryPolicy,
    ) -> RemoteBackend {
        RemoteBackend {
            transport,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            auth_token,
            retry,
        }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }

    fn wire_request(request: &ChatRequest) -> Value {
        let mut messages = Vec::new();
        if !request.system.is_empty() {
            messages.push(json!({"role": "system", "content": request.system}));
        }
        for (role, content) in &request.messages {
            messages.push(json!({"role": role.as_str(), "content": content}));
        }
        let mut body = json!({
            "model": request.model_tag,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

fn is_transient(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let body = Self::wire_request(request);
        let url = self.endpoint();
        let started = Instant::now();
        let reply = self.retry.run(
            || self.transport.post_json(&url, self.auth_token.as_deref(), &body),
            |reply: &HttpReply| is_transient(reply.status),
        )?;
        if reply.status != 200 {
            return Err(GatewayError::Http { status: reply.status, body: reply.body });
        }
        let parsed: Value = serde_json::from_str(&reply.body)
            .map_err(|e| GatewayError::BadResponseBody(e.to_string()))?;
        let text = parsed["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| {
                GatewayError::BadResponseBody("missing choices[0].message.content".into())
            })?
            .to_string();
        Ok(ChatResponse {
            text,
            prompt_tokens: parsed["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: parsed["usage"]["completion_tokens"].as_u64().unwrap_or(0),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}
