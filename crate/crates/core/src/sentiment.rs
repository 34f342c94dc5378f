//! Pluggable sentiment scoring on the five-category scale: a deterministic
//! lexicon scorer for offline runs and a remote adapter for an external
//! 1-to-5-star classifier endpoint.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::domain::{Comment, SentimentScore, UserId};
use crate::gateway::{HttpTransport, RetryPolicy};
use crate::io::{read_jsonl_strict, write_jsonl, IoError};

#[derive(Debug, thiserror::Error)]
pub enum SentimentError {
    #[error("lexicon valence for {token:?} is {valence}, outside [-1, 1]")]
    BadValence { token: String, valence: f64 },
    #[error("intensifier multiplier for {token:?} must be > 0, got {mult}")]
    BadMultiplier { token: String, mult: f64 },
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("remote scorer: {0}")]
    Remote(String),
    #[error("remote label {0} outside 1..=5")]
    LabelOutOfRange(i64),
    #[error("scoring failed for comment by {user} at {time}: {reason}")]
    CommentFailed { user: String, time: chrono::DateTime<chrono::Utc>, reason: String },
}

/// Scores free text onto the five-category sentiment scale.
pub trait SentimentScorer: Send + Sync {
    fn score(&self, text: &str) -> Result<SentimentScore, SentimentError>;
}

/// Token valences in [-1, 1], negation tokens that flip the following
/// token's sign, and intensifiers that scale it.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    valences: HashMap<String, f64>,
    negations: HashSet<String>,
    intensifiers: HashMap<String, f64>,
}

/// One line of a lexicon JSONL file; the three record shapes share a file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum LexiconRecord {
    Intensifier { intensifier: String, mult: f64 },
    Valence { token: String, valence: f64 },
    Negation { negation: String },
}

impl Lexicon {
    pub fn new(
        valences: impl IntoIterator<Item = (String, f64)>,
        negations: impl IntoIterator<Item = String>,
        intensifiers: impl IntoIterator<Item = (String, f64)>,
    ) -> Result<Lexicon, SentimentError> {
        let mut lexicon = Lexicon::default();
        for (token, valence) in valences {
            if !(-1.0..=1.0).contains(&valence) || valence.is_nan() {
                return Err(SentimentError::BadValence { token, valence });
            }
            lexicon.valences.insert(token.to_lowercase(), valence);
        }
        for negation in negations {
            lexicon.negations.insert(negation.to_lowercase());
        }
        for (token, mult) in intensifiers {
            if mult.is_nan() || mult <= 0.0 {
                return Err(SentimentError::BadMultiplier { token, mult });
            }
            lexicon.intensifiers.insert(token.to_lowercase(), mult);
        }
        Ok(lexicon)
    }

    pub fn load(path: &Path) -> Result<Lexicon, SentimentError> {
        let rows: Vec<LexiconRecord> = read_jsonl_strict(path)?;
        let mut valences = Vec::new();
        let mut negations = Vec::new();
        let mut intensifiers = Vec::new();
        for row in rows {
            match row {
                LexiconRecord::Valence { token, valence } => valences.push((token, valence)),
                LexiconRecord::Negation { negation } => negations.push(negation),
                LexiconRecord::Intensifier { intensifier, mult } => {
                    intensifiers.push((intensifier, mult))
                }
            }
        }
        Lexicon::new(valences, negations, intensifiers)
    }

    pub fn write(&self, path: &Path) -> Result<(), SentimentError> {
        let mut rows: Vec<LexiconRecord> = Vec::new();
        let mut valences: Vec<_> = self.valences.iter().collect();
        valences.sort_by(|a, b| a.0.cmp(b.0));
        for (token, valence) in valences {
            rows.push(LexiconRecord::Valence { token: token.clone(), valence: *valence });
        }
        let mut negations: Vec<_> = self.negations.iter().collect();
        negations.sort();
        for negation in negations {
            rows.push(LexiconRecord::Negation { negation: negation.clone() });
        }
        let mut intensifiers: Vec<_> = self.intensifiers.iter().collect();
        intensifiers.sort_by(|a, b| a.0.cmp(b.0));
        for (token, mult) in intensifiers {
            rows.push(LexiconRecord::Intensifier { intensifier: token.clone(), mult: *mult });
        }
        write_jsonl(path, &rows)?;
        Ok(())
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '-'))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Deterministic lexicon scoring: mean valence over matched tokens, each
/// sign-flipped after a negation token and scaled after an intensifier,
/// mapped onto the five categories by symmetric cuts at ±0.2 and ±0.6.
/// Total: unmatched text scores 0.
pub fn score_lexicon(lexicon: &Lexicon, text: &str) -> SentimentScore {
    let tokens = tokenize(text);
    let mut matched = Vec::new();
    for (i, token) in tokens.iter().enumerate() {
        if let Some(&valence) = lexicon.valences.get(token) {
            let mut v = valence;
            if let Some(prev) = i.checked_sub(1).map(|j| &tokens[j]) {
                if lexicon.negations.contains(prev) {
                    v = -v;
                }
                if let Some(&mult) = lexicon.intensifiers.get(prev) {
                    v *= mult;
                }
            }
            matched.push(v);
        }
    }
    let mean = if matched.is_empty() {
        0.0
    } else {
        matched.iter().sum::<f64>() / matched.len() as f64
    };
    SentimentScore::new(category_for(mean)).expect("category in range")
}

fn category_for(v: f64) -> i64 {
    if v >= 0.6 {
        2
    } else if v >= 0.2 {
        1
    } else if v > -0.2 {
        0
    } else if v > -0.6 {
        -1
    } else {
        -2
    }
}

impl SentimentScorer for Lexicon {
    fn score(&self, text: &str) -> Result<SentimentScore, SentimentError> {
        Ok(score_lexicon(self, text))
    }
}

/// Adapter for a remote classifier that answers `{"text": ...}` with a
/// 1-to-5 star label: `{"label": 1..=5}`. The label maps onto the
/// five-category scale by subtracting 3.
pub struct RemoteScorer {
    transport: Box<dyn HttpTransport>,
    url: String,
    auth_token: Option<String>,
    retry: RetryPolicy,
}

impl RemoteScorer {
    pub fn new(
        transport: Box<dyn HttpTransport>,
        url: impl Into<String>,
        auth_token: Option<String>,
        retry: RetryPolicy,
    ) -> RemoteScorer {
        RemoteScorer { transport, url: url.into(), auth_token, retry }
    }

    pub fn map_star_label(label: i64) -> Result<SentimentScore, SentimentError> {
        if !(1..=5).contains(&label) {
            return Err(SentimentError::LabelOutOfRange(label));
        }
        Ok(SentimentScore::new(label - 3).expect("mapped label in range"))
    }
}

impl SentimentScorer for RemoteScorer {
    fn score(&self, text: &str) -> Result<SentimentScore, SentimentError> {
        let body = serde_json::json!({ "text": text });
        let reply = self
            .retry
            .run(
                || self.transport.post_json(&self.url, self.auth_token.as_deref(), &body),
                |reply| reply.status == 429 || (500..600).contains(&reply.status),
            )
            .map_err(|e| SentimentError::Remote(e.to_string()))?;
        if reply.status != 200 {
            return Err(SentimentError::Remote(format!("HTTP {}: {}", reply.status, reply.body)));
        }
        let parsed: serde_json::Value = serde_json::from_str(&reply.body)
            .map_err(|e| SentimentError::Remote(e.to_string()))?;
        let label = parsed["label"]
            .as_i64()
            .ok_or_else(|| SentimentError::Remote("missing integer label".into()))?;
        Self::map_star_label(label)
    }
}

/// Returns a corpus in which every comment carries a sentiment label.
/// Already-labeled comments are untouched, so the operation is idempotent.
/// Any scorer failure rejects the whole result and names the comment.
pub fn label_corpus(
    scorer: &dyn SentimentScorer,
    corpus: &Corpus,
) -> Result<Corpus, SentimentError> {
    let mut labeled: BTreeMap<UserId, Vec<Comment>> = BTreeMap::new();
    for user in corpus.users() {
        let mut list = Vec::new();
        for comment in corpus.comments_of(&user.id) {
            if comment.sentiment.is_some() {
                list.push(comment.clone());
            } else {
                let score = scorer.score(&comment.text).map_err(|e| {
                    SentimentError::CommentFailed {
                        user: comment.user.to_string(),
                        time: comment.time,
                        reason: e.to_string(),
                    }
                })?;
                list.push(comment.with_sentiment(score));
            }
        }
        labeled.insert(user.id.clone(), list);
    }
    Ok(corpus.with_comment_map(labeled))
}
