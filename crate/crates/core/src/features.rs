//! Feature extraction over the gateway: textual tone of voice and attitude
//! toward the event, with a JSONL-backed cache keyed on (user, as-of time).
//!
//! Both extractions consume only comments the caller pre-filtered to the
//! cutoff; nothing here reaches back into the corpus.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{Attitude, Comment, EventContext, ToneOfVoice, UserId};
use crate::gateway::{
    parse_tone, render_prompt, ChatRequest, Gateway, GatewayError, InstructionKind, PromptBundle,
};
use crate::io::{read_jsonl_strict, write_jsonl, IoError};

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("cannot extract features from an empty comment history")]
    EmptyHistory,
    #[error("tone output unusable after a strict retry: {0}")]
    ToneUnparseable(String),
    #[error("attitude response was empty")]
    EmptyAttitude,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Knobs for the extraction prompts.
#[derive(Debug, Clone)]
pub struct FeatureConfig {
    pub model_tag: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Most recent comments fed to the prompts when histories run long.
    pub history_window: usize,
    /// Character cap on the stored attitude statement.
    pub attitude_max_len: usize,
    pub event_name: Option<String>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            model_tag: "subjective".into(),
            temperature: 0.7,
            max_tokens: 256,
            history_window: 30,
            attitude_max_len: crate::domain::ATTITUDE_MAX_LEN,
            event_name: None,
        }
    }
}

/// Extracted per-user features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub tone: ToneOfVoice,
    pub attitude: Attitude,
}

fn recent<'a>(comments: &'a [Comment], window: usize) -> &'a [Comment] {
    let start = comments.len().saturating_sub(window);
    &comments[start..]
}

const TONE_RETRY_SUFFIX: &str = "\n\nReminder: respond with exactly three lowercase adjectives \
separated by commas, for example: terse, dry, defiant. No other text.";

/// Extracts the tone of voice from a user's comment history. A malformed
/// response gets one strict retry with a format reminder; a second failure
/// surfaces as an error.
pub fn extract_tone(
    gateway: &Gateway,
    persona_key: Option<&str>,
    comments: &[Comment],
    config: &FeatureConfig,
) -> Result<ToneOfVoice, FeatureError> {
    if comments.is_empty() {
        return Err(FeatureError::EmptyHistory);
    }
    let mut bundle = PromptBundle::new().comments(recent(comments, config.history_window).to_vec());
    if let Some(key) = persona_key {
        bundle = bundle.persona_key(key);
    }
    if let Some(name) = &config.event_name {
        bundle = bundle.event_name(name.clone());
    }
    let prompt = render_prompt(InstructionKind::Tone, &bundle)?;

    let first = complete_text(gateway, &prompt.rendered_text, config)?;
    match parse_tone(&first) {
        Ok(tone) => Ok(tone),
        Err(first_err) => {
            log::warn!("tone output malformed ({first_err}); issuing one strict retry");
            let strict = format!("{}{}", prompt.rendered_text, TONE_RETRY_SUFFIX);
            let second = complete_text(gateway, &strict, config)?;
            parse_tone(&second).map_err(|e| FeatureError::ToneUnparseable(e.to_string()))
        }
    }
}

/// Extracts the attitude toward the event, conditioned on the tone (tone
/// strongly shapes how attitude is expressed). Event context may be empty
/// for pre-event users. Responses over the cap are truncated at the last
/// full sentence under it.
pub fn extract_attitude(
    gateway: &Gateway,
    persona_key: Option<&str>,
    tone: &ToneOfVoice,
    comments: &[Comment],
    events: &[EventContext],
    config: &FeatureConfig,
) -> Result<Attitude, FeatureError> {
    if comments.is_empty() {
        return Err(FeatureError::EmptyHistory);
    }
    let mut bundle = PromptBundle::new()
        .tone(tone.clone())
        .comments(recent(comments, config.history_window).to_vec())
        .events(events.to_vec());
    if let Some(key) = persona_key {
        bundle = bundle.persona_key(key);
    }
    if let Some(name) = &config.event_name {
        bundle = bundle.event_name(name.clone());
    }
    let prompt = render_prompt(InstructionKind::Attitude, &bundle)?;
    let text = complete_text(gateway, &prompt.rendered_text, config)?;
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(FeatureError::EmptyAttitude);
    }
    let statement = truncate_at_sentence(trimmed, config.attitude_max_len);
    Ok(Attitude::with_limit(statement, config.attitude_max_len)?)
}

fn complete_text(
    gateway: &Gateway,
    prompt: &str,
    config: &FeatureConfig,
) -> Result<String, FeatureError> {
    let request = ChatRequest::single_turn(
        "",
        prompt,
        config.temperature,
        config.max_tokens,
        config.model_tag.clone(),
        None,
    )?;
    Ok(gateway.complete(&request)?.text)
}

/// Truncates to the last sentence boundary that fits under `limit` chars;
/// falls back to a hard cut when no boundary fits.
fn truncate_at_sentence(text: &str, limit: usize) -> String {
    if text.chars().count() <= limit {
        return text.to_string();
    }
    let prefix: String = text.chars().take(limit).collect();
    match prefix.rfind(|c| c == '.' || c == '!' || c == '?') {
        Some(pos) => prefix[..=pos].trim().to_string(),
        None => prefix.trim().to_string(),
    }
}

/// Extracts tone then attitude in one call.
pub fn extract_features(
    gateway: &Gateway,
    persona_key: Option<&str>,
    comments: &[Comment],
    events: &[EventContext],
    config: &FeatureConfig,
) -> Result<FeatureSet, FeatureError> {
    let tone = extract_tone(gateway, persona_key, comments, config)?;
    let attitude = extract_attitude(gateway, persona_key, &tone, comments, events, config)?;
    Ok(FeatureSet { tone, attitude })
}

/// One cache line of features.jsonl.
#[derive(Debug, Serialize, Deserialize)]
struct FeatureRecord {
    user_id: UserId,
    as_of: DateTime<Utc>,
    tone: [String; 3],
    attitude: String,
}

/// File-backed feature cache. A hit on (user, as_of) skips recomputation.
#[derive(Debug, Default)]
pub struct FeatureStore {
    entries: BTreeMap<(UserId, DateTime<Utc>), FeatureSet>,
}

impl FeatureStore {
    pub fn new() -> FeatureStore {
        FeatureStore::default()
    }

    pub fn load(path: &Path) -> Result<FeatureStore, FeatureError> {
        let rows: Vec<FeatureRecord> = read_jsonl_strict(path)?;
        let mut store = FeatureStore::new();
        for row in rows {
            let tone = ToneOfVoice::new(&row.tone)?;
            let attitude = Attitude::new(row.attitude)?;
            store.entries.insert((row.user_id, row.as_of), FeatureSet { tone, attitude });
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let rows: Vec<FeatureRecord> = self
            .entries
            .iter()
            .map(|((user, as_of), features)| FeatureRecord {
                user_id: user.clone(),
                as_of: *as_of,
                tone: features.tone.adjectives().clone(),
                attitude: features.attitude.statement().to_string(),
            })
            .collect();
        write_jsonl(path, &rows)?;
        Ok(())
    }

    pub fn get(&self, user: &UserId, as_of: DateTime<Utc>) -> Option<&FeatureSet> {
        self.entries.get(&(user.clone(), as_of))
    }

    pub fn insert(&mut self, user: UserId, as_of: DateTime<Utc>, features: FeatureSet) {
        self.entries.insert((user, as_of), features);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Per-user view at a fixed as-of time, the shape the pipeline consumes.
    pub fn at(&self, as_of: DateTime<Utc>) -> BTreeMap<UserId, FeatureSet> {
        self.entries
            .iter()
            .filter(|((_, t), _)| *t == as_of)
            .map(|((u, _), f)| (u.clone(), f.clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, MockScriptEntry};
    use chrono::TimeZone;
    use std::sync::Arc;

    fn comments(n: usize) -> Vec<Comment> {
        (0..n)
            .map(|i| {
                Comment::new(
                    UserId::new("u").unwrap(),
                    Utc.with_ymd_and_hms(2024, 10, 20, i as u32, 0, 0).unwrap(),
                    format!("post {i}"),
                    None,
                )
                .unwrap()
            })
            .collect()
    }

    fn gateway_with(entries: Vec<MockScriptEntry>) -> (Gateway, Arc<MockBackend>) {
        let mock = Arc::new(MockBackend::from_entries(entries));
        (Gateway::new(mock.clone(), 4), mock)
    }

    fn entry(kind: InstructionKind, response: &str) -> MockScriptEntry {
        MockScriptEntry { kind, persona: "p".into(), response: response.into() }
    }

    #[test]
    fn tone_extraction_happy_path() {
        let (gateway, _) =
            gateway_with(vec![entry(InstructionKind::Tone, "calm, factual, weary")]);
        let tone =
            extract_tone(&gateway, Some("p"), &comments(3), &FeatureConfig::default()).unwrap();
        assert_eq!(tone.adjectives(), &["calm", "factual", "weary"]);
    }

    #[test]
    fn tone_extraction_requires_history() {
        let (gateway, _) = gateway_with(vec![]);
        assert!(matches!(
            extract_tone(&gateway, Some("p"), &[], &FeatureConfig::default()),
            Err(FeatureError::EmptyHistory)
        ));
    }

    #[test]
    fn malformed_tone_gets_exactly_one_strict_retry() {
        let (gateway, mock) = gateway_with(vec![
            entry(InstructionKind::Tone, "calm; factual; weary"),
            entry(InstructionKind::Tone, "calm, factual, weary"),
        ]);
        let tone =
            extract_tone(&gateway, Some("p"), &comments(2), &FeatureConfig::default()).unwrap();
        assert_eq!(tone.adjectives(), &["calm", "factual", "weary"]);
        let transcript = mock.transcript();
        assert_eq!(transcript.len(), 2);
        assert!(transcript[1].contains("Reminder"));
    }

    #[test]
    fn persistently_malformed_tone_is_an_error() {
        let (gateway, _) = gateway_with(vec![entry(InstructionKind::Tone, "gibberish output")]);
        assert!(matches!(
            extract_tone(&gateway, Some("p"), &comments(2), &FeatureConfig::default()),
            Err(FeatureError::ToneUnparseable(_))
        ));
    }

    #[test]
    fn attitude_extraction_with_and_without_events() {
        let (gateway, _) = gateway_with(vec![entry(
            InstructionKind::Attitude,
            "Distrustful of official relief efforts.",
        )]);
        let tone = ToneOfVoice::new(&["calm", "dry", "wry"]).unwrap();
        let attitude = extract_attitude(
            &gateway,
            Some("p"),
            &tone,
            &comments(2),
            &[],
            &FeatureConfig::default(),
        )
        .unwrap();
        assert_eq!(attitude.statement(), "Distrustful of official relief efforts.");
    }

    #[test]
    fn over_cap_attitude_truncates_at_a_sentence() {
        let long = format!("First sentence. Second sentence! {}", "x".repeat(600));
        let (gateway, _) = gateway_with(vec![entry(InstructionKind::Attitude, &long)]);
        let tone = ToneOfVoice::new(&["calm", "dry", "wry"]).unwrap();
        let attitude = extract_attitude(
            &gateway,
            Some("p"),
            &tone,
            &comments(2),
            &[],
            &FeatureConfig::default(),
        )
        .unwrap();
        assert_eq!(attitude.statement(), "First sentence. Second sentence!");
    }

    #[test]
    fn truncation_falls_back_to_hard_cut() {
        let text = "y".repeat(40);
        assert_eq!(truncate_at_sentence(&text, 10), "y".repeat(10));
        assert_eq!(truncate_at_sentence("short.", 10), "short.");
    }

    #[test]
    fn history_window_limits_prompt_comments() {
        let (gateway, mock) =
            gateway_with(vec![entry(InstructionKind::Tone, "calm, factual, weary")]);
        let config = FeatureConfig { history_window: 2, ..FeatureConfig::default() };
        extract_tone(&gateway, Some("p"), &comments(5), &config).unwrap();
        let prompt = &mock.transcript()[0];
        assert!(!prompt.contains("post 0"));
        assert!(!prompt.contains("post 2"));
        assert!(prompt.contains("post 3") && prompt.contains("post 4"));
    }

    #[test]
    fn feature_store_round_trips_and_hits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.jsonl");
        let mut store = FeatureStore::new();
        let user = UserId::new("u").unwrap();
        let as_of = Utc.with_ymd_and_hms(2024, 11, 5, 0, 0, 0).unwrap();
        let features = FeatureSet {
            tone: ToneOfVoice::new(&["calm", "dry", "wry"]).unwrap(),
            attitude: Attitude::new("steady").unwrap(),
        };
        store.insert(user.clone(), as_of, features.clone());
        store.save(&path).unwrap();
        let loaded = FeatureStore::load(&path).unwrap();
        assert_eq!(loaded.get(&user, as_of), Some(&features));
        assert_eq!(loaded.get(&user, as_of + chrono::Duration::seconds(1)), None);
        assert_eq!(loaded.at(as_of).len(), 1);
    }
}
