//! Chat-completion boundary: request/response types, prompt templating for
//! the six instruction kinds, a deterministic scripted mock, a remote HTTP
//! adapter, and strict response parsers.
//!
//! The [`Gateway`] wraps any backend behind a global in-flight cap so a
//! cohort fan-out can never exceed the configured concurrency against the
//! completion endpoint.

mod mock;
mod parse;
mod prompt;
mod remote;

pub use mock::{MockBackend, MockScriptEntry};
pub use parse::{parse_tone, parse_verdict};
pub use prompt::{render_prompt, Instruction, InstructionKind, PromptBundle, TEMPLATE_VERSION};
pub use remote::{HttpReply, HttpTransport, RemoteBackend, ReqwestTransport, RetryPolicy};

use std::sync::{Arc, Condvar, Mutex};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("prompt for {kind:?} is missing required field {field}")]
    MissingField { kind: InstructionKind, field: &'static str },
    #[error("chat request invalid: {0}")]
    BadRequest(String),
    #[error("no scripted response for kind={kind} persona={persona}")]
    ScriptMiss { kind: String, persona: String },
    #[error("prompt carries no persona marker, cannot route to a mock script")]
    NoPersonaMarker,
    #[error("tone output invalid: {0}")]
    BadTone(String),
    #[error("verdict output invalid: {0}")]
    BadVerdict(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed completion response: {0}")]
    BadResponseBody(String),
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
}

/// Message author role. The system text travels separately on the request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// One chat-completion request in the industry-standard shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system: String,
    pub messages: Vec<(Role, String)>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_tag: String,
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(
        system: impl Into<String>,
        messages: Vec<(Role, String)>,
        temperature: f64,
        max_tokens: u32,
        model_tag: impl Into<String>,
        seed: Option<u64>,
    ) -> Result<Self, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::BadRequest("at least one message required".into()));
        }
        if messages[0].0 != Role::User {
            return Err(GatewayError::BadRequest("first message must be from the user".into()));
        }
        for pair in messages.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(GatewayError::BadRequest("roles must alternate".into()));
            }
        }
        if temperature.is_nan() || temperature < 0.0 {
            return Err(GatewayError::BadRequest("temperature must be >= 0".into()));
        }
        Ok(ChatRequest {
            system: system.into(),
            messages,
            temperature,
            max_tokens,
            model_tag: model_tag.into(),
            seed,
        })
    }

    /// Single user turn, the common case for every instruction kind.
    pub fn single_turn(
        system: impl Into<String>,
        user_text: impl Into<String>,
        temperature: f64,
        max_tokens: u32,
        model_tag: impl Into<String>,
        seed: Option<u64>,
    ) -> Result<Self, GatewayError> {
        ChatRequest::new(
            system,
            vec![(Role::User, user_text.into())],
            temperature,
            max_tokens,
            model_tag,
            seed,
        )
    }
}

/// Completion text plus usage accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
}

/// The objective reviewer's judgment: a boolean consistency gate plus the
/// written behavioral analysis backing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub consistent: bool,
    pub analysis: String,
}

/// Anything that can answer chat-completion requests.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Shareable front door to a backend with a global in-flight cap.
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    limiter: Semaphore,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, max_in_flight: usize) -> Gateway {
        Gateway { backend, limiter: Semaphore::new(max_in_flight.max(1)) }
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let _permit = self.limiter.acquire();
        self.backend.complete(request)
    }
}

/// Counting semaphore over Mutex + Condvar; permits release on drop.
struct Semaphore {
    state: Mutex<usize>,
    available: Condvar,
}

struct Permit<'a> {
    semaphore: &'a Semaphore,
}

impl Semaphore {
    fn new(permits: usize) -> Semaphore {
        Semaphore { state: Mutex::new(permits), available: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.state.lock().unwrap();
        while *free == 0 {
            free = self.available.wait(free).unwrap();
        }
        *free -= 1;
        Permit { semaphore: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut free = self.semaphore.state.lock().unwrap();
        *free += 1;
        self.semaphore.available.notify_one();
    }
}
