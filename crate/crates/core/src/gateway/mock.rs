//! Deterministic scripted backend for offline runs and tests.
//!
//! Responses are keyed by the `(instruction kind, persona key)` marker that
//! every rendered prompt carries. Multiple script entries for the same key
//! form a queue consumed in file order; once drained, the last entry
//! repeats. A prompt with no marker or no script entry fails loudly —
//! never a silent default.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError, InstructionKind, Role};
use crate::io::read_jsonl_strict;

/// One line of a mock script file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScriptEntry {
    pub kind: InstructionKind,
    pub persona: String,
    pub response: String,
}

struct Queue {
    responses: Vec<String>,
    next: usize,
}

/// Scripted chat backend. Also records a transcript of every prompt it was
/// shown, which tests use for string-absence assertions.
pub struct MockBackend {
    scripts: Mutex<HashMap<(InstructionKind, String), Queue>>,
    transcript: Mutex<Vec<String>>,
}

impl MockBackend {
    pub fn from_entries(entries: Vec<MockScriptEntry>) -> MockBackend {
        let mut scripts: HashMap<(InstructionKind, String), Queue> = HashMap::new();
        for entry in entries {
            scripts
                .entry((entry.kind, entry.persona))
                .or_insert_with(|| Queue { responses: Vec::new(), next: 0 })
                .responses
                .push(entry.response);
        }
        MockBackend { scripts: Mutex::new(scripts), transcript: Mutex::new(Vec::new()) }
    }

    pub fn load(path: &Path) -> Result<MockBackend, GatewayError> {
        Ok(MockBackend::from_entries(read_jsonl_strict(path)?))
    }

    /// Every prompt shown to the backend so far: system texts and message
    /// texts, in call order.
    pub fn transcript(&self) -> Vec<String> {
        self.transcript.lock().unwrap().clone()
    }
}

fn find_marker(request: &ChatRequest) -> Option<(InstructionKind, Option<String>)> {
    let texts = request
        .messages
        .iter()
        .rev()
        .filter(|(role, _)| *role == Role::User)
        .map(|(_, text)| text.as_str())
        .chain(std::iter::once(request.system.as_str()));
    for text in texts {
        if let Some(found) = scan_marker(text) {
            return Some(found);
        }
    }
    None
}

fn scan_marker(text: &str) -> Option<(InstructionKind, Option<String>)> {
    let start = text.find("[[task:")?;
    let rest = &text[start + "[[task:".len()..];
    let end = rest.find("]]")?;
    let body = &rest[..end];
    let (kind_str, persona) = match body.split_once("|persona:") {
        Some((k, p)) => (k, Some(p.to_string())),
        None => (body, None),
    };
    let kind = match kind_str {
        "tone" => InstructionKind::Tone,
        "attitude" => InstructionKind::Attitude,
        "role_play" => InstructionKind::RolePlay,
        "browse_comment" => InstructionKind::BrowseComment,
        "objective_review" => InstructionKind::ObjectiveReview,
        "rectify" => InstructionKind::Rectify,
        _ => return None,
    };
    Some((kind, persona))
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        {
            let mut transcript = self.transcript.lock().unwrap();
            if !request.system.is_empty() {
                transcript.push(request.system.clone());
            }
            for (_, text) in &request.messages {
                transcript.push(text.clone());
            }
        }
        let (kind, persona) = find_marker(request).ok_or(GatewayError::NoPersonaMarker)?;
        let persona = persona.ok_or(GatewayError::NoPersonaMarker)?;
        let mut scripts = self.scripts.lock().unwrap();
        let queue = scripts.get_mut(&(kind, persona.clone())).ok_or_else(|| {
            GatewayError::ScriptMiss { kind: kind.as_str().to_string(), persona: persona.clone() }
        })?;
        let text = queue.responses[queue.next.min(queue.responses.len() - 1)].clone();
        if queue.next + 1 < queue.responses.len() {
            queue.next += 1;
        }
        Ok(ChatResponse {
            text,
            prompt_tokens: request.messages.iter().map(|(_, t)| t.len() as u64 / 4).sum(),
            completion_tokens: 0,
            latency_ms: 0,
        })
    }
}
