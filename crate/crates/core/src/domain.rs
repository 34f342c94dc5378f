//! Core value types shared by every other module: sentiment categories,
//! users, comments, event context, extracted features, and forecast results.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DomainError {
    #[error("sentiment score {0} outside {{-2..2}}")]
    ScoreOutOfRange(i64),
    #[error("polarity {0} outside {{-1,0,1}}")]
    PolarityOutOfRange(i64),
    #[error("value {0} outside [-2, 2], cannot map to a sentiment category")]
    RoundInputOutOfRange(f64),
    #[error("user id must be non-empty")]
    EmptyUserId,
    #[error("followee list for {0} contains duplicates or the user itself")]
    BadFolloweeList(String),
    #[error("comment text must be non-empty after trimming")]
    EmptyCommentText,
    #[error("event summary must be non-empty")]
    EmptyEventSummary,
    #[error("tone of voice needs exactly three adjectives, got {0}")]
    ToneArity(usize),
    #[error("tone adjective {0:?} is empty or contains separators")]
    BadToneAdjective(String),
    #[error("attitude statement must be non-empty")]
    EmptyAttitude,
    #[error("attitude statement exceeds {limit} characters ({len})")]
    AttitudeTooLong { len: usize, limit: usize },
    #[error("forecast result: {0}")]
    BadForecastResult(String),
}

/// Five-category sentiment score on `{-2, -1, 0, 1, 2}`, strongly negative
/// to strongly positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct SentimentScore(i8);

impl SentimentScore {
    pub const CATEGORIES: [SentimentScore; 5] = [
        SentimentScore(-2),
        SentimentScore(-1),
        SentimentScore(0),
        SentimentScore(1),
        SentimentScore(2),
    ];

    pub fn new(value: i64) -> Result<Self, DomainError> {
        if (-2..=2).contains(&value) {
            Ok(SentimentScore(value as i8))
        } else {
            Err(DomainError::ScoreOutOfRange(value))
        }
    }

    pub fn value(self) -> i8 {
        self.0
    }
}

impl fmt::Display for SentimentScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::ops::Neg for SentimentScore {
    type Output = SentimentScore;
    fn neg(self) -> SentimentScore {
        SentimentScore(-self.0)
    }
}

impl<'de> Deserialize<'de> for SentimentScore {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        SentimentScore::new(v).map_err(serde::de::Error::custom)
    }
}

/// Sentiment polarity on `{-1, 0, 1}`: the sign of a sentiment score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Polarity(i8);

impl Polarity {
    pub const CATEGORIES: [Polarity; 3] = [Polarity(-1), Polarity(0), Polarity(1)];

    pub fn new(value: i64) -> Result<Self, DomainError> {
        if (-1..=1).contains(&value) {
            Ok(Polarity(value as i8))
        } else {
            Err(DomainError::PolarityOutOfRange(value))
        }
    }

    pub fn value(self) -> i8 {
        self.0
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl<'de> Deserialize<'de> for Polarity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        Polarity::new(v).map_err(serde::de::Error::custom)
    }
}

/// Sign of a sentiment score.
pub fn polarity_of(score: SentimentScore) -> Polarity {
    Polarity(score.0.signum())
}

/// Maps a continuous value in `[-2, 2]` onto the nearest sentiment category.
/// Ties (fractional part exactly .5) round away from zero, so a window mean
/// of 1.5 reads as strongly positive.
pub fn round_to_category(x: f64) -> Result<SentimentScore, DomainError> {
    if !x.is_finite() || !(-2.0..=2.0).contains(&x) {
        return Err(DomainError::RoundInputOutOfRange(x));
    }
    // f64::round ties away from zero, which is exactly the rule here.
    Ok(SentimentScore(x.round() as i8))
}

/// Opaque, non-empty user identifier, unique within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct UserId(String);

impl UserId {
    pub fn new(id: impl Into<String>) -> Result<Self, DomainError> {
        let id = id.into();
        if id.is_empty() {
            Err(DomainError::EmptyUserId)
        } else {
            Ok(UserId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for UserId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        UserId::new(s).map_err(serde::de::Error::custom)
    }
}

/// Self-reported geographic label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    pub state: String,
    pub county: String,
}

/// A social-media user: identity, self-reported attributes, and the
/// followee edge set.
#[derive(Debug, Clone, PartialEq)]
pub struct User {
    pub id: UserId,
    /// Self-reported attributes: gender, religion, location text,
    /// self-description, persona tags, ...
    pub attributes: BTreeMap<String, String>,
    pub followees: Vec<UserId>,
    pub followers_count: u64,
    pub friends_count: u64,
    pub location: Option<Location>,
}

impl User {
    pub fn new(
        id: UserId,
        attributes: BTreeMap<String, String>,
        followees: Vec<UserId>,
        followers_count: u64,
        friends_count: u64,
        location: Option<Location>,
    ) -> Result<Self, DomainError> {
        let mut seen = std::collections::BTreeSet::new();
        for f in &followees {
            if f == &id || !seen.insert(f) {
                return Err(DomainError::BadFolloweeList(id.to_string()));
            }
        }
        Ok(User { id, attributes, followees, followers_count, friends_count, location })
    }
}

/// One timestamped comment, optionally carrying a sentiment label.
/// Timestamps are truncated to whole seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Comment {
    pub user: UserId,
    pub time: DateTime<Utc>,
    pub text: String,
    pub sentiment: Option<SentimentScore>,
}

impl Comment {
    pub fn new(
        user: UserId,
        time: DateTime<Utc>,
        text: impl Into<String>,
        sentiment: Option<SentimentScore>,
    ) -> Result<Self, DomainError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DomainError::EmptyCommentText);
        }
        let time = truncate_to_seconds(time);
        Ok(Comment { user, time, text, sentiment })
    }

    pub fn with_sentiment(&self, s: SentimentScore) -> Comment {
        Comment { sentiment: Some(s), ..self.clone() }
    }
}

fn truncate_to_seconds(t: DateTime<Utc>) -> DateTime<Utc> {
    DateTime::from_timestamp(t.timestamp(), 0).expect("timestamp in range")
}

/// A timestamped natural-language snippet describing the state of the event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventContext {
    pub time: DateTime<Utc>,
    pub summary: String,
    pub source: String,
}

impl EventContext {
    pub fn new(
        time: DateTime<Utc>,
        summary: impl Into<String>,
        source: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let summary = summary.into();
        if summary.trim().is_empty() {
            return Err(DomainError::EmptyEventSummary);
        }
        Ok(EventContext { time: truncate_to_seconds(time), summary, source: source.into() })
    }
}

/// A user's habitual textual tone of voice, summarized as exactly three
/// descriptive adjectives. Normalized to lowercase single tokens at
/// construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToneOfVoice {
    adjectives: [String; 3],
}

impl ToneOfVoice {
    pub fn new(adjectives: &[impl AsRef<str>]) -> Result<Self, DomainError> {
        if adjectives.len() != 3 {
            return Err(DomainError::ToneArity(adjectives.len()));
        }
        let mut out: [String; 3] = Default::default();
        for (slot, adj) in out.iter_mut().zip(adjectives) {
            let norm = adj.as_ref().trim().to_lowercase();
            if norm.is_empty() || norm.chars().any(|c| c.is_whitespace() || c == ',' || c == ';') {
                return Err(DomainError::BadToneAdjective(adj.as_ref().to_string()));
            }
            *slot = norm;
        }
        Ok(ToneOfVoice { adjectives: out })
    }

    pub fn adjectives(&self) -> &[String; 3] {
        &self.adjectives
    }

    pub fn join(&self) -> String {
        self.adjectives.join(", ")
    }
}

impl fmt::Display for ToneOfVoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.join())
    }
}

/// Default character cap for attitude statements.
pub const ATTITUDE_MAX_LEN: usize = 500;

/// The user's evaluative stance toward the event, as free text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attitude {
    statement: String,
}

impl Attitude {
    pub fn new(statement: impl Into<String>) -> Result<Self, DomainError> {
        Self::with_limit(statement, ATTITUDE_MAX_LEN)
    }

    pub fn with_limit(statement: impl Into<String>, limit: usize) -> Result<Self, DomainError> {
        let statement = statement.into();
        let statement = statement.trim().to_string();
        if statement.is_empty() {
            return Err(DomainError::EmptyAttitude);
        }
        let len = statement.chars().count();
        if len > limit {
            return Err(DomainError::AttitudeTooLong { len, limit });
        }
        Ok(Attitude { statement })
    }

    pub fn statement(&self) -> &str {
        &self.statement
    }
}

impl fmt::Display for Attitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.statement)
    }
}

/// One generate-review round in the rectification loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub candidate: String,
    pub consistent: bool,
    pub analysis: String,
}

/// The forecast for one user at the time of interest: the generated comment,
/// its sentiment, the features that conditioned it, and the full
/// rectification trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub user: UserId,
    pub t_prime: DateTime<Utc>,
    pub comment: String,
    pub sentiment: SentimentScore,
    pub polarity: Polarity,
    pub tone: ToneOfVoice,
    pub attitude: Attitude,
    pub iterations_used: usize,
    pub converged: bool,
    pub trace: Vec<TraceStep>,
}

impl ForecastResult {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        user: UserId,
        t_prime: DateTime<Utc>,
        comment: String,
        sentiment: SentimentScore,
        polarity: Polarity,
        tone: ToneOfVoice,
        attitude: Attitude,
        trace: Vec<TraceStep>,
    ) -> Result<Self, DomainError> {
        if trace.is_empty() {
            return Err(DomainError::BadForecastResult("trace must be non-empty".into()));
        }
        if polarity != polarity_of(sentiment) {
            return Err(DomainError::BadForecastResult(format!(
                "polarity {} does not equal sgn(sentiment {})",
                polarity, sentiment
            )));
        }
        let converged = trace.last().map(|s| s.consistent).unwrap_or(false);
        let iterations_used = trace.len();
        Ok(ForecastResult {
            user,
            t_prime: truncate_to_seconds(t_prime),
            comment,
            sentiment,
            polarity,
            tone,
            attitude,
            iterations_used,
            converged,
            trace,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn score_construction_rejects_out_of_range() {
        assert!(SentimentScore::new(-3).is_err());
        assert!(SentimentScore::new(3).is_err());
        for v in -2..=2 {
            assert_eq!(SentimentScore::new(v).unwrap().value(), v as i8);
        }
    }

    #[test]
    fn polarity_is_sign() {
        assert_eq!(polarity_of(SentimentScore::new(-2).unwrap()).value(), -1);
        assert_eq!(polarity_of(SentimentScore::new(0).unwrap()).value(), 0);
        assert_eq!(polarity_of(SentimentScore::new(2).unwrap()).value(), 1);
    }

    #[test]
    fn rounding_ties_go_away_from_zero() {
        assert_eq!(round_to_category(1.5).unwrap().value(), 2);
        assert_eq!(round_to_category(-1.5).unwrap().value(), -2);
        assert_eq!(round_to_category(0.49).unwrap().value(), 0);
        assert_eq!(round_to_category(0.5).unwrap().value(), 1);
        assert_eq!(round_to_category(-0.5).unwrap().value(), -1);
    }

    #[test]
    fn rounding_rejects_out_of_range() {
        assert!(round_to_category(2.01).is_err());
        assert!(round_to_category(-2.01).is_err());
        assert!(round_to_category(f64::NAN).is_err());
    }

    #[test]
    fn user_rejects_self_follow_and_duplicates() {
        let id = UserId::new("u1").unwrap();
        let err = User::new(
            id.clone(),
            BTreeMap::new(),
            vec![UserId::new("u1").unwrap()],
            0,
            0,
            None,
        );
        assert!(err.is_err());
        let err = User::new(
            id,
            BTreeMap::new(),
            vec![UserId::new("u2").unwrap(), UserId::new("u2").unwrap()],
            0,
            0,
            None,
        );
        assert!(err.is_err());
    }

    #[test]
    fn comment_rejects_blank_text_and_truncates_subseconds() {
        let u = UserId::new("u").unwrap();
        assert!(Comment::new(u.clone(), Utc::now(), "   ", None).is_err());
        let t = DateTime::parse_from_rfc3339("2024-10-29T01:02:03.789Z")
            .unwrap()
            .with_timezone(&Utc);
        let c = Comment::new(u, t, "hi", None).unwrap();
        assert_eq!(c.time.timestamp_subsec_nanos(), 0);
    }

    #[test]
    fn tone_normalizes_and_validates() {
        let t = ToneOfVoice::new(&["Calm", " factual ", "WEARY"]).unwrap();
        assert_eq!(t.adjectives(), &["calm", "factual", "weary"]);
        assert!(ToneOfVoice::new(&["a", "b"]).is_err());
        assert!(ToneOfVoice::new(&["a b", "c", "d"]).is_err());
        assert!(ToneOfVoice::new(&["", "c", "d"]).is_err());
    }

    #[test]
    fn attitude_cap_enforced() {
        assert!(Attitude::new("x".repeat(ATTITUDE_MAX_LEN)).is_ok());
        assert!(Attitude::new("x".repeat(ATTITUDE_MAX_LEN + 1)).is_err());
        assert!(Attitude::new("  ").is_err());
    }

    fn forecast_fixture(
        sentiment: i64,
        polarity: i64,
        trace: Vec<TraceStep>,
    ) -> Result<ForecastResult, DomainError> {
        ForecastResult::new(
            UserId::new("u").unwrap(),
            Utc::now(),
            "a comment".into(),
            SentimentScore::new(sentiment).unwrap(),
            Polarity::new(polarity).unwrap(),
            ToneOfVoice::new(&["a", "b", "c"]).unwrap(),
            Attitude::new("stance").unwrap(),
            trace,
        )
    }

    #[test]
    fn forecast_result_rejects_mismatched_polarity() {
        let step = TraceStep { candidate: "a comment".into(), consistent: true, analysis: "ok".into() };
        assert!(forecast_fixture(2, 1, vec![step.clone()]).is_ok());
        assert!(forecast_fixture(2, -1, vec![step.clone()]).is_err());
        assert!(forecast_fixture(-1, 0, vec![step]).is_err());
        assert!(forecast_fixture(1, 1, vec![]).is_err());
    }

    #[test]
    fn forecast_result_derives_iterations_and_convergence_from_trace() {
        let steps = vec![
            TraceStep { candidate: "v1".into(), consistent: false, analysis: "drift".into() },
            TraceStep { candidate: "v2".into(), consistent: true, analysis: "ok".into() },
        ];
        let r = forecast_fixture(0, 0, steps).unwrap();
        assert_eq!(r.iterations_used, 2);
        assert!(r.converged);
    }

    proptest! {
        #[test]
        fn polarity_negation_is_antisymmetric(v in -2i64..=2) {
            let s = SentimentScore::new(v).unwrap();
            prop_assert_eq!(polarity_of(-s).value(), -polarity_of(s).value());
        }

        #[test]
        fn rounding_is_monotone(a in -2.0f64..=2.0, b in -2.0f64..=2.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(round_to_category(lo).unwrap() <= round_to_category(hi).unwrap());
        }

        #[test]
        fn rounding_is_idempotent_on_integers(v in -2i64..=2) {
            let s = round_to_category(v as f64).unwrap();
            prop_assert_eq!(s.value() as i64, v);
            prop_assert_eq!(round_to_category(s.value() as f64).unwrap(), s);
        }
    }
}
