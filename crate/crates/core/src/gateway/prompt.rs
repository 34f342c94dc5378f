//! Prompt templates for the six instruction kinds.
//!
//! Rendering is deterministic: the same bundle always produces byte-identical
//! text. Every template opens with a machine-readable marker line carrying
//! the instruction kind and, when known, the persona key; the scripted mock
//! routes on that marker. Templates for real event names frame the scenario
//! as a hypothetical parallel timeline so a model cannot lean on
//! retrospective knowledge of the actual event.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::GatewayError;
use crate::domain::{Attitude, Comment, EventContext, ToneOfVoice};

/// Bumped whenever any template text changes; recorded in run manifests so
/// transcripts can be tied to the exact wording that produced them.
pub const TEMPLATE_VERSION: &str = "1";

/// The six instruction kinds: tone extraction, attitude extraction,
/// role-play setup, browse-and-comment generation, objective consistency
/// review, and rectification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionKind {
    Tone,
    Attitude,
    RolePlay,
    BrowseComment,
    ObjectiveReview,
    Rectify,
}

impl InstructionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InstructionKind::Tone => "tone",
            InstructionKind::Attitude => "attitude",
            InstructionKind::RolePlay => "role_play",
            InstructionKind::BrowseComment => "browse_comment",
            InstructionKind::ObjectiveReview => "objective_review",
            InstructionKind::Rectify => "rectify",
        }
    }
}

/// A rendered instruction: the template output for one kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    pub kind: InstructionKind,
    pub rendered_text: String,
}

/// Everything a template may draw on. Each kind requires its own subset;
/// rendering fails loudly when a required field is absent.
#[derive(Debug, Clone, Default)]
pub struct PromptBundle {
    pub persona_key: Option<String>,
    pub event_name: Option<String>,
    pub tone: Option<ToneOfVoice>,
    pub attitude: Option<Attitude>,
    pub attributes: Option<BTreeMap<String, String>>,
    pub comments: Option<Vec<Comment>>,
    pub events: Option<Vec<EventContext>>,
    pub followee_comments: Option<Vec<Comment>>,
    pub candidate: Option<String>,
    pub analysis: Option<String>,
    pub t_prime: Option<DateTime<Utc>>,
}

impl PromptBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn persona_key(mut self, key: impl Into<String>) -> Self {
        self.persona_key = Some(key.into());
        self
    }

    pub fn event_name(mut self, name: impl Into<String>) -> Self {
        self.event_name = Some(name.into());
        self
    }

    pub fn tone(mut self, tone: ToneOfVoice) -> Self {
        self.tone = Some(tone);
        self
    }

    pub fn attitude(mut self, attitude: Attitude) -> Self {
        self.attitude = Some(attitude);
        self
    }

    pub fn attributes(mut self, attributes: BTreeMap<String, String>) -> Self {
        self.attributes = Some(attributes);
        self
    }

    pub fn comments(mut self, comments: Vec<Comment>) -> Self {
        self.comments = Some(comments);
        self
    }

    pub fn events(mut self, events: Vec<EventContext>) -> Self {
        self.events = Some(events);
        self
    }

    pub fn followee_comments(mut self, comments: Vec<Comment>) -> Self {
        self.followee_comments = Some(comments);
        self
    }

    pub fn candidate(mut self, candidate: impl Into<String>) -> Self {
        self.candidate = Some(candidate.into());
        self
    }

    pub fn analysis(mut self, analysis: impl Into<String>) -> Self {
        self.analysis = Some(analysis.into());
        self
    }

    pub fn t_prime(mut self, t: DateTime<Utc>) -> Self {
        self.t_prime = Some(t);
        self
    }
}

/// Routing marker the mock backend reads; first line of every prompt.
pub(crate) fn marker(kind: InstructionKind, persona: Option<&str>) -> String {
    match persona {
        Some(p) => format!("[[task:{}|persona:{}]]", kind.as_str(), p),
        None => format!("[[task:{}]]", kind.as_str()),
    }
}

fn ts(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn comment_block(comments: &[Comment]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "[{}] {}", ts(c.time), c.text);
    }
    out
}

fn event_block(events: &[EventContext]) -> String {
    if events.is_empty() {
        return "(no event updates yet)\n".to_string();
    }
    let mut out = String::new();
    for e in events {
        let _ = writeln!(out, "[{}] ({}) {}", ts(e.time), e.source, e.summary);
    }
    out
}

fn attribute_block(attributes: &BTreeMap<String, String>) -> String {
    if attributes.is_empty() {
        return "(none reported)\n".to_string();
    }
    let mut out = String::new();
    for (k, v) in attributes {
        let _ = writeln!(out, "- {}: {}", k, v);
    }
    out
}

const PARALLEL_TIMELINE: &str = "This scenario unfolds in a hypothetical parallel timeline. \
Nothing you know about real events applies; only the information given here exists.";

macro_rules! require {
    ($bundle:expr, $field:ident, $kind:expr) => {
        $bundle.$field.as_ref().ok_or(GatewayError::MissingField {
            kind: $kind,
            field: stringify!($field),
        })?
    };
}

/// Renders the template for `kind` from `bundle`. Deterministic; few-shot
/// comments appear verbatim in chronological order.
pub fn render_prompt(
    kind: InstructionKind,
    bundle: &PromptBundle,
) -> Result<Instruction, GatewayError> {
    let event_name = bundle.event_name.as_deref().unwrap_or("the ongoing event");
    let mut text = marker(kind, bundle.persona_key.as_deref());
    text.push('\n');
    text.push_str(PARALLEL_TIMELINE);
    text.push_str("\n\n");

    match kind {
        InstructionKind::Tone => {
            let comments = require!(bundle, comments, kind);
            let _ = write!(
                text,
                "You study how people write on social media. Below are posts by one author, \
                 oldest first:\n\n{}\n\
                 Describe the author's habitual textual tone of voice: the lexical, syntactic, \
                 and paralinguistic style they keep across posts. Respond with exactly three \
                 descriptive adjectives, lowercase, separated by commas, and nothing else.",
                comment_block(comments)
            );
        }
        InstructionKind::Attitude => {
            let tone = require!(bundle, tone, kind);
            let comments = require!(bundle, comments, kind);
            let events = bundle.events.as_deref().unwrap_or(&[]);
            let _ = write!(
                text,
                "An author with a {} tone of voice has posted the following, oldest first:\n\n{}\n\
                 Updates so far on {}:\n\n{}\n\
                 State, in at most two sentences, the author's current evaluative stance toward \
                 {}. Write only the stance.",
                tone.join(),
                comment_block(comments),
                event_name,
                event_block(events),
                event_name
            );
        }
        InstructionKind::RolePlay => {
            let tone = require!(bundle, tone, kind);
            let attitude = require!(bundle, attitude, kind);
            let attributes = require!(bundle, attributes, kind);
            let comments = require!(bundle, comments, kind);
            let events = bundle.events.as_deref().unwrap_or(&[]);
            let _ = write!(
                text,
                "You are role-playing a real social media user, writing as them in first \
                 person.\n\n\
                 Self-reported attributes:\n{}\n\
                 Textual tone of voice: {}\n\
                 Attitude toward {}: {}\n\n\
                 Their posts so far, oldest first:\n\n{}\n\
                 What they have seen about {}:\n\n{}\n\
                 Stay in character: keep the tone of voice, and let the attitude evolve only as \
                 far as the event itself justifies.",
                attribute_block(attributes),
                tone.join(),
                event_name,
                attitude.statement(),
                comment_block(comments),
                event_name,
                event_block(events)
            );
        }
        InstructionKind::BrowseComment => {
            let followees = require!(bundle, followee_comments, kind);
            let events = require!(bundle, events, kind);
            let t_prime = require!(bundle, t_prime, kind);
            let feed = if followees.is_empty() {
                "(your feed is quiet)\n".to_string()
            } else {
                comment_block(followees)
            };
            let _ = write!(
                text,
                "You open the app and browse. Posts from accounts you follow:\n\n{}\n\
                 Latest developments on {}:\n\n{}\n\
                 It is now {}. Write the single comment you would post at this moment about \
                 {}. Output only the comment text.",
                feed,
                event_name,
                event_block(events),
                ts(*t_prime),
                event_name
            );
        }
        InstructionKind::ObjectiveReview => {
            let tone = require!(bundle, tone, kind);
            let attitude = require!(bundle, attitude, kind);
            let comments = require!(bundle, comments, kind);
            let candidate = require!(bundle, candidate, kind);
            let _ = write!(
                text,
                "You are a behavioral psychologist reviewing a draft social media comment for \
                 consistency with its author.\n\n\
                 Author's textual tone of voice: {}\n\
                 Author's attitude toward {}: {}\n\n\
                 Author's previous posts, oldest first:\n\n{}\n\
                 Draft comment under review:\n{}\n\n\
                 Judge whether the draft maintains the author's textual tone of voice and a \
                 reasonably coherent attitude flow. Reply with CONSISTENT or INCONSISTENT on \
                 the first line, followed by a brief written analysis.",
                tone.join(),
                event_name,
                attitude.statement(),
                comment_block(comments),
                candidate
            );
        }
        InstructionKind::Rectify => {
            let analysis = require!(bundle, analysis, kind);
            let attributes = require!(bundle, attributes, kind);
            let comments = require!(bundle, comments, kind);
            let candidate = require!(bundle, candidate, kind);
            let _ = write!(
                text,
                "Your previous draft comment was judged inconsistent with the author you are \
                 role-playing.\n\n\
                 Reviewer's analysis:\n{}\n\n\
                 Previous draft:\n{}\n\n\
                 Author attributes:\n{}\n\
                 Author's previous posts, oldest first:\n\n{}\n\
                 Write a corrected comment that addresses the analysis while staying in \
                 character. Output only the comment text.",
                analysis,
                candidate,
                attribute_block(attributes),
                comment_block(comments)
            );
        }
    }

    Ok(Instruction { kind, rendered_text: text })
}
