//! Corpus ingestion, querying, user selection, ground-truth construction,
//! and event anonymization.
//!
//! A [`Corpus`] is immutable after assembly; every query is read-only.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::{
    round_to_category, Comment, DomainError, EventContext, Location, SentimentScore, User, UserId,
};
use crate::io::{read_jsonl_lenient, write_jsonl, IoError, LineIssue};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("no valid users ingested")]
    NoUsers,
    #[error("{path}: every line failed validation")]
    AllLinesInvalid { path: String },
    #[error("duplicate user id {id} with conflicting fields (line {line})")]
    ConflictingDuplicateUser { id: String, line: usize },
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("selection criteria invalid: {0}")]
    BadCriteria(String),
    #[error("comment by {user} at {time} has no sentiment label")]
    UnlabeledComment { user: String, time: DateTime<Utc> },
}

/// The full observed corpus: users, their time-sorted comments, the event
/// timeline, and the topic keywords used for relevance filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    users: BTreeMap<UserId, User>,
    comments: BTreeMap<UserId, Vec<Comment>>,
    events: Vec<EventContext>,
    topic_keywords: Vec<String>,
}

/// What assembly had to drop or repair.
#[derive(Debug, Clone, Default, Serialize)]
pub struct AssemblyReport {
    pub users_loaded: usize,
    pub comments_loaded: usize,
    pub events_loaded: usize,
    pub comments_skipped_unknown_user: usize,
    pub dangling_followee_edges_dropped: usize,
}

impl Corpus {
    /// Validates and indexes raw parts. Comments referencing unknown users
    /// are dropped and counted; dangling followee edges are dropped and
    /// counted; per-user comment lists are sorted ascending by time.
    pub fn assemble(
        users: Vec<User>,
        comments: Vec<Comment>,
        events: Vec<EventContext>,
        topic_keywords: Vec<String>,
    ) -> Result<(Corpus, AssemblyReport), CorpusError> {
        if users.is_empty() {
            return Err(CorpusError::NoUsers);
        }
        let mut report = AssemblyReport { users_loaded: users.len(), ..Default::default() };

        let known: BTreeSet<UserId> = users.iter().map(|u| u.id.clone()).collect();
        let mut user_map = BTreeMap::new();
        for mut user in users {
            let before = user.followees.len();
            user.followees.retain(|f| known.contains(f));
            report.dangling_followee_edges_dropped += before - user.followees.len();
            user_map.insert(user.id.clone(), user);
        }

        let mut comment_map: BTreeMap<UserId, Vec<Comment>> =
            user_map.keys().map(|u| (u.clone(), Vec::new())).collect();
        for comment in comments {
            match comment_map.get_mut(&comment.user) {
                Some(list) => {
                    list.push(comment);
                    report.comments_loaded += 1;
                }
                None => report.comments_skipped_unknown_user += 1,
            }
        }
        for list in comment_map.values_mut() {
            list.sort_by(|a, b| a.time.cmp(&b.time).then_with(|| a.text.cmp(&b.text)));
        }

        let mut events = events;
        events.sort_by(|a, b| a.time.cmp(&b.time).then_with(|| a.summary.cmp(&b.summary)));
        report.events_loaded = events.len();

        let topic_keywords: Vec<String> = topic_keywords
            .into_iter()
            .map(|k| k.to_lowercase())
            .filter(|k| !k.is_empty())
            .collect();

        if report.dangling_followee_edges_dropped > 0 {
            log::info!(
                "dropped {} dangling followee edges",
                report.dangling_followee_edges_dropped
            );
        }
        Ok((Corpus { users: user_map, comments: comment_map, events, topic_keywords }, report))
    }

    pub fn users(&self) -> impl Iterator<Item = &User> {
        self.users.values()
    }

    pub fn user(&self, id: &UserId) -> Option<&User> {
        self.users.get(id)
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn comments_of(&self, id: &UserId) -> &[Comment] {
        self.comments.get(id).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn all_comments(&self) -> impl Iterator<Item = &Comment> {
        self.comments.values().flatten()
    }

    pub fn events(&self) -> &[EventContext] {
        &self.events
    }

    pub fn events_until(&self, t: DateTime<Utc>) -> &[EventContext] {
        let cut = self.events.partition_point(|e| e.time <= t);
        &self.events[..cut]
    }

    /// Events strictly before `t`: the context available when a comment is
    /// about to be posted at `t`.
    pub fn events_before(&self, t: DateTime<Utc>) -> &[EventContext] {
        let cut = self.events.partition_point(|e| e.time < t);
        &self.events[..cut]
    }

    pub fn topic_keywords(&self) -> &[String] {
        &self.topic_keywords
    }

    /// All comments of `u` with time ≤ `t`, ascending. Nothing after `t`
    /// ever leaks out of this view.
    pub fn comments_before(&self, u: &UserId, t: DateTime<Utc>) -> Result<&[Comment], CorpusError> {
        let list = self
            .comments
            .get(u)
            .ok_or_else(|| CorpusError::UnknownUser(u.to_string()))?;
        let cut = list.partition_point(|c| c.time <= t);
        Ok(&list[..cut])
    }

    /// Returns a copy of this corpus with `f` applied to every comment.
    fn map_comments(&self, mut f: impl FnMut(&Comment) -> Comment) -> Corpus {
        let comments = self
            .comments
            .iter()
            .map(|(u, list)| (u.clone(), list.iter().map(&mut f).collect()))
            .collect();
        Corpus {
            users: self.users.clone(),
            comments,
            events: self.events.clone(),
            topic_keywords: self.topic_keywords.clone(),
        }
    }

    pub(crate) fn with_comment_map(
        &self,
        comments: BTreeMap<UserId, Vec<Comment>>,
    ) -> Corpus {
        Corpus {
            users: self.users.clone(),
            comments,
            events: self.events.clone(),
            topic_keywords: self.topic_keywords.clone(),
        }
    }
}

/// Input files for [`ingest`].
#[derive(Debug, Clone)]
pub struct IngestPaths {
    pub users: PathBuf,
    pub comments: PathBuf,
    pub events: PathBuf,
}

/// Per-file skip report produced by [`ingest`].
#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestReport {
    pub user_issues: Vec<LineIssue>,
    pub comment_issues: Vec<LineIssue>,
    pub event_issues: Vec<LineIssue>,
    pub assembly: AssemblyReport,
}

#[derive(Debug, Serialize, Deserialize)]
struct UserRecord {
    user_id: String,
    #[serde(default)]
    attributes: BTreeMap<String, String>,
    #[serde(default)]
    followees: Vec<String>,
    #[serde(default)]
    followers_count: u64,
    #[serde(default)]
    friends_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    location: Option<Location>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CommentRecord {
    user_id: String,
    timestamp: DateTime<Utc>,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sentiment: Option<SentimentScore>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRecord {
    time: DateTime<Utc>,
    summary: String,
    source: String,
}

impl UserRecord {
    fn into_user(self) -> Result<User, DomainError> {
        let id = UserId::new(self.user_id)?;
        let followees = self
            .followees
            .into_iter()
            .map(UserId::new)
            .collect::<Result<Vec<_>, _>>()?;
        User::new(id, self.attributes, followees, self.followers_count, self.friends_count, self.location)
    }

    fn from_user(u: &User) -> UserRecord {
        UserRecord {
            user_id: u.id.to_string(),
            attributes: u.attributes.clone(),
            followees: u.followees.iter().map(|f| f.to_string()).collect(),
            followers_count: u.followers_count,
            friends_count: u.friends_count,
            location: u.location.clone(),
        }
    }
}

/// Reads `users.jsonl`, `comments.jsonl`, and `events.jsonl`, skipping
/// malformed lines with a per-file report. Duplicate user lines are allowed
/// only when byte-equal in content; conflicting duplicates abort the ingest.
pub fn ingest(
    paths: &IngestPaths,
    topic_keywords: Vec<String>,
) -> Result<(Corpus, IngestReport), CorpusError> {
    let mut report = IngestReport::default();

    let (user_rows, mut user_issues) = read_jsonl_lenient::<UserRecord>(&paths.users)?;
    let mut users: Vec<User> = Vec::new();
    let mut seen: BTreeMap<UserId, usize> = BTreeMap::new();
    for (line, row) in user_rows {
        match row.into_user() {
            Ok(user) => {
                if let Some(&first_idx) = seen.get(&user.id) {
                    if users[first_idx] != user {
                        return Err(CorpusError::ConflictingDuplicateUser {
                            id: user.id.to_string(),
                            line,
                        });
                    }
                    // Identical restatement of the same user; keep the first.
                } else {
                    seen.insert(user.id.clone(), users.len());
                    users.push(user);
                }
            }
            Err(e) => user_issues.push(LineIssue { line, reason: e.to_string() }),
        }
    }
    fail_if_all_invalid(&paths.users, users.len(), &user_issues)?;
    if users.is_empty() {
        return Err(CorpusError::NoUsers);
    }

    let (comment_rows, mut comment_issues) = read_jsonl_lenient::<CommentRecord>(&paths.comments)?;
    let mut comments = Vec::new();
    for (line, row) in comment_rows {
        let parsed = UserId::new(row.user_id)
            .and_then(|uid| Comment::new(uid, row.timestamp, row.text, row.sentiment));
        match parsed {
            Ok(c) => comments.push(c),
            Err(e) => comment_issues.push(LineIssue { line, reason: e.to_string() }),
        }
    }
    fail_if_all_invalid(&paths.comments, comments.len(), &comment_issues)?;

    let (event_rows, mut event_issues) = read_jsonl_lenient::<EventRecord>(&paths.events)?;
    let mut events = Vec::new();
    for (line, row) in event_rows {
        match EventContext::new(row.time, row.summary, row.source) {
            Ok(e) => events.push(e),
            Err(e) => event_issues.push(LineIssue { line, reason: e.to_string() }),
        }
    }
    fail_if_all_invalid(&paths.events, events.len(), &event_issues)?;

    let (corpus, assembly) = Corpus::assemble(users, comments, events, topic_keywords)?;
    report.user_issues = user_issues;
    report.comment_issues = comment_issues;
    report.event_issues = event_issues;
    report.assembly = assembly;
    Ok((corpus, report))
}

fn fail_if_all_invalid(path: &Path, valid: usize, issues: &[LineIssue]) -> Result<(), CorpusError> {
    if valid == 0 && !issues.is_empty() {
        return Err(CorpusError::AllLinesInvalid { path: path.display().to_string() });
    }
    Ok(())
}

/// Writes a corpus back out in the ingest schemas.
pub fn write_corpus(
    corpus: &Corpus,
    users_path: &Path,
    comments_path: &Path,
    events_path: &Path,
) -> Result<(), CorpusError> {
    let users: Vec<UserRecord> = corpus.users().map(UserRecord::from_user).collect();
    write_jsonl(users_path, &users)?;
    let comments: Vec<CommentRecord> = corpus
        .all_comments()
        .map(|c| CommentRecord {
            user_id: c.user.to_string(),
            timestamp: c.time,
            text: c.text.clone(),
            sentiment: c.sentiment,
        })
        .collect();
    write_jsonl(comments_path, &comments)?;
    let events: Vec<EventRecord> = corpus
        .events()
        .iter()
        .map(|e| EventRecord { time: e.time, summary: e.summary.clone(), source: e.source.clone() })
        .collect();
    write_jsonl(events_path, &events)?;
    Ok(())
}

/// Cohort selection thresholds. Tweet-count and follower bands are
/// inclusive on both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionCriteria {
    pub min_tweets: usize,
    pub max_tweets: usize,
    pub min_followers: u64,
    pub max_followers: u64,
    pub require_keyword: bool,
    pub require_geo: bool,
    pub require_followees: bool,
    pub require_phase_coverage: bool,
    /// `(b0, b1)` splitting the timeline into before `[.., b0)`,
    /// during `[b0, b1)`, and after `[b1, ..)`.
    pub phase_boundaries: (DateTime<Utc>, DateTime<Utc>),
}

impl SelectionCriteria {
    pub fn new(phase_boundaries: (DateTime<Utc>, DateTime<Utc>)) -> Self {
        SelectionCriteria {
            min_tweets: 10,
            max_tweets: 1000,
            min_followers: 100,
            max_followers: 2000,
            require_keyword: true,
            require_geo: true,
            require_followees: true,
            require_phase_coverage: true,
            phase_boundaries,
        }
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if self.min_tweets >= self.max_tweets {
            return Err(CorpusError::BadCriteria("min_tweets must be < max_tweets".into()));
        }
        if self.min_followers >= self.max_followers {
            return Err(CorpusError::BadCriteria("min_followers must be < max_followers".into()));
        }
        if self.phase_boundaries.0 >= self.phase_boundaries.1 {
            return Err(CorpusError::BadCriteria("phase boundaries must be increasing".into()));
        }
        Ok(())
    }
}

/// Selects the users passing every enabled criterion, sorted by id.
pub fn select_users(
    corpus: &Corpus,
    criteria: &SelectionCriteria,
) -> Result<Vec<UserId>, CorpusError> {
    criteria.validate()?;
    let (b0, b1) = criteria.phase_boundaries;
    let keywords = corpus.topic_keywords();
    let mut selected = Vec::new();
    for user in corpus.users() {
        let comments = corpus.comments_of(&user.id);

        if criteria.require_followees && user.followees.is_empty() {
            continue;
        }
        let count = comments.len();
        if count < criteria.min_tweets || count > criteria.max_tweets {
            continue;
        }
        let followers_ok = |n: u64| n >= criteria.min_followers && n <= criteria.max_followers;
        if !followers_ok(user.followers_count) || !followers_ok(user.friends_count) {
            continue;
        }
        if criteria.require_geo && user.location.is_none() {
            continue;
        }
        if criteria.require_keyword && !comments.iter().any(|c| mentions_keyword(&c.text, keywords))
        {
            continue;
        }
        if criteria.require_phase_coverage {
            let before = comments.iter().any(|c| c.time < b0);
            let during = comments.iter().any(|c| c.time >= b0 && c.time < b1);
            let after = comments.iter().any(|c| c.time >= b1);
            if !(before && during && after) {
                continue;
            }
        }
        selected.push(user.id.clone());
    }
    Ok(selected)
}

fn mentions_keyword(text: &str, keywords: &[String]) -> bool {
    let lower = text.to_lowercase();
    keywords.iter().any(|k| lower.contains(k.as_str()))
}

/// Weights for the followee influence score. Influence of a followee
/// comment is `relevance·w_r + interaction·w_i + ln(1+followers)·w_f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfluenceWeights {
    pub relevance: f64,
    pub interaction: f64,
    pub followers: f64,
}

impl Default for InfluenceWeights {
    fn default() -> Self {
        InfluenceWeights { relevance: 0.5, interaction: 0.3, followers: 0.2 }
    }
}

/// Samples up to `k` followee comments posted at or before `t`, ranked by
/// influence: relevance is the fraction of topic keywords in the comment
/// text, interaction the count of `u`'s comments mentioning `@followee`
/// normalized by the max over followees, and follower mass `ln(1+followers)`.
/// Ties break by earlier time, then lexicographic user id.
pub fn followee_sample(
    corpus: &Corpus,
    u: &UserId,
    t: DateTime<Utc>,
    k: usize,
    weights: InfluenceWeights,
) -> Result<Vec<Comment>, CorpusError> {
    let user = corpus
        .user(u)
        .ok_or_else(|| CorpusError::UnknownUser(u.to_string()))?;
    if k == 0 || user.followees.is_empty() {
        return Ok(Vec::new());
    }

    let own = corpus.comments_before(u, t)?;
    let mentions: BTreeMap<&UserId, usize> = user
        .followees
        .iter()
        .map(|f| {
            let tag = format!("@{}", f.as_str()).to_lowercase();
            let n = own.iter().filter(|c| c.text.to_lowercase().contains(&tag)).count();
            (f, n)
        })
        .collect();
    let max_mentions = mentions.values().copied().max().unwrap_or(0);

    let keywords = corpus.topic_keywords();
    let mut scored: Vec<(f64, &Comment, &UserId)> = Vec::new();
    for followee in &user.followees {
        let interaction = if max_mentions == 0 {
            0.0
        } else {
            mentions[followee] as f64 / max_mentions as f64
        };
        let follower_mass = corpus
            .user(followee)
            .map(|f| (1.0 + f.followers_count as f64).ln())
            .unwrap_or(0.0);
        for comment in corpus.comments_before(followee, t)? {
            let relevance = if keywords.is_empty() {
                0.0
            } else {
                let lower = comment.text.to_lowercase();
                keywords.iter().filter(|kw| lower.contains(kw.as_str())).count() as f64
                    / keywords.len() as f64
            };
            let score = weights.relevance * relevance
                + weights.interaction * interaction
                + weights.followers * follower_mass;
            scored.push((score, comment, followee));
        }
    }
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| a.1.time.cmp(&b.1.time))
            .then_with(|| a.2.cmp(b.2))
            .then_with(|| a.1.text.cmp(&b.1.text))
    });
    Ok(scored.into_iter().take(k).map(|(_, c, _)| c.clone()).collect())
}

/// How the target-time ground truth is read off the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroundTruthScheme {
    /// The first comment strictly after t'.
    #[serde(rename = "next")]
    NextComment,
    /// Rounded mean sentiment over comments in (t', t' + window].
    #[serde(rename = "window24")]
    WindowAverage,
}

/// Per-user sentiment at the target time, plus the users that had to be
/// omitted for lack of qualifying comments.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub t_prime: DateTime<Utc>,
    pub scheme: GroundTruthScheme,
    pub window_hours: i64,
    pub entries: BTreeMap<UserId, SentimentScore>,
    pub omitted: Vec<UserId>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroundTruthRecord {
    user_id: UserId,
    t_prime: DateTime<Utc>,
    sentiment: SentimentScore,
    scheme: GroundTruthScheme,
}

impl GroundTruth {
    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        let rows: Vec<GroundTruthRecord> = self
            .entries
            .iter()
            .map(|(u, s)| GroundTruthRecord {
                user_id: u.clone(),
                t_prime: self.t_prime,
                sentiment: *s,
                scheme: self.scheme,
            })
            .collect();
        write_jsonl(path, &rows)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<GroundTruth, CorpusError> {
        let rows: Vec<GroundTruthRecord> = crate::io::read_jsonl_strict(path)?;
        let mut entries = BTreeMap::new();
        let mut t_prime = None;
        let mut scheme = GroundTruthScheme::WindowAverage;
        for row in rows {
            t_prime.get_or_insert(row.t_prime);
            scheme = row.scheme;
            entries.insert(row.user_id, row.sentiment);
        }
        Ok(GroundTruth {
            t_prime: t_prime.unwrap_or_default(),
            scheme,
            window_hours: 24,
            entries,
            omitted: Vec::new(),
        })
    }
}

/// Builds the per-user ground truth at `t_prime`. Every comment consulted
/// must already carry a sentiment label. Users without a qualifying comment
/// are omitted and listed.
pub fn build_ground_truth(
    corpus: &Corpus,
    users: &[UserId],
    t_prime: DateTime<Utc>,
    scheme: GroundTruthScheme,
    window_hours: i64,
) -> Result<GroundTruth, CorpusError> {
    let mut entries = BTreeMap::new();
    let mut omitted = Vec::new();
    let window_end = t_prime + Duration::hours(window_hours);
    for u in users {
        if corpus.user(u).is_none() {
            return Err(CorpusError::UnknownUser(u.to_string()));
        }
        let comments = corpus.comments_of(u);
        let value = match scheme {
            GroundTruthScheme::NextComment => {
                match comments.iter().find(|c| c.time > t_prime) {
                    Some(c) => Some(require_label(c)?),
                    None => None,
                }
            }
            GroundTruthScheme::WindowAverage => {
                let window: Vec<&Comment> = comments
                    .iter()
                    .filter(|c| c.time > t_prime && c.time <= window_end)
                    .collect();
                if window.is_empty() {
                    None
                } else {
                    let mut sum = 0.0;
                    for c in &window {
                        sum += require_label(c)?.value() as f64;
                    }
                    let mean = sum / window.len() as f64;
                    Some(round_to_category(mean)?)
                }
            }
        };
        match value {
            Some(score) => {
                entries.insert(u.clone(), score);
            }
            None => omitted.push(u.clone()),
        }
    }
    if !omitted.is_empty() {
        log::info!("ground truth omits {} users with no qualifying comment", omitted.len());
    }
    Ok(GroundTruth { t_prime, scheme, window_hours, entries, omitted })
}

fn require_label(c: &Comment) -> Result<SentimentScore, CorpusError> {
    c.sentiment.ok_or_else(|| CorpusError::UnlabeledComment {
        user: c.user.to_string(),
        time: c.time,
    })
}

/// Replaces every case-insensitive whole-word occurrence of each rename key
/// in comment texts and event summaries, carrying the matched text's casing
/// pattern onto the replacement. Optionally shifts every timestamp by a
/// fixed offset to relocate the timeline. Topic keywords are renamed too so
/// relevance filters keep working on the anonymized corpus.
pub fn anonymize_event(
    corpus: &Corpus,
    rename: &BTreeMap<String, String>,
    time_shift: Option<Duration>,
) -> Corpus {
    let rules: Vec<(regex::Regex, &str)> = rename
        .iter()
        .filter(|(k, _)| !k.is_empty())
        .map(|(k, v)| {
            let pattern = format!(r"(?i)\b{}\b", regex::escape(k));
            (regex::Regex::new(&pattern).expect("escaped pattern compiles"), v.as_str())
        })
        .collect();

    let rewrite = |text: &str| -> String {
        let mut out = text.to_string();
        for (re, replacement) in &rules {
            out = re
                .replace_all(&out, |caps: &regex::Captures| {
                    carry_case(&caps[0], replacement)
                })
                .into_owned();
        }
        out
    };
    let shift = |t: DateTime<Utc>| time_shift.map(|d| t + d).unwrap_or(t);

    let mut shifted = corpus.map_comments(|c| Comment {
        user: c.user.clone(),
        time: shift(c.time),
        text: rewrite(&c.text),
        sentiment: c.sentiment,
    });
    shifted.events = corpus
        .events
        .iter()
        .map(|e| EventContext {
            time: shift(e.time),
            summary: rewrite(&e.summary),
            source: e.source.clone(),
        })
        .collect();
    shifted.topic_keywords = corpus
        .topic_keywords
        .iter()
        .map(|k| rewrite(k).to_lowercase())
        .collect();
    shifted
}

/// Maps the casing pattern of `matched` onto `replacement`: all-caps stays
/// all-caps, leading capital stays a leading capital, all-lowercase stays
/// lowercase; mixed-case matches take the replacement as written.
fn carry_case(matched: &str, replacement: &str) -> String {
    let letters: Vec<char> = matched.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.is_empty() {
        return replacement.to_string();
    }
    if letters.iter().all(|c| c.is_uppercase()) && letters.len() > 1 {
        return replacement.to_uppercase();
    }
    if letters.iter().all(|c| c.is_lowercase()) {
        return replacement.to_lowercase();
    }
    let first_upper = letters[0].is_uppercase() && letters[1..].iter().all(|c| c.is_lowercase());
    if first_upper {
        let mut chars = replacement.chars();
        return match chars.next() {
            Some(c) => c.to_uppercase().collect::<String>() + &chars.as_str().to_lowercase(),
            None => String::new(),
        };
    }
    replacement.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    pub(crate) fn ts(s: &str) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
    }

    fn uid(s: &str) -> UserId {
        UserId::new(s).unwrap()
    }

    fn user(id: &str, followees: &[&str], followers: u64) -> User {
        User::new(
            uid(id),
            BTreeMap::new(),
            followees.iter().map(|f| uid(f)).collect(),
            followers,
            followers,
            Some(Location { state: "NJ".into(), county: "Monmouth".into() }),
        )
        .unwrap()
    }

    fn comment(user: &str, time: &str, text: &str, sentiment: Option<i64>) -> Comment {
        Comment::new(
            uid(user),
            ts(time),
            text,
            sentiment.map(|v| SentimentScore::new(v).unwrap()),
        )
        .unwrap()
    }

    fn tiny_corpus() -> Corpus {
        let users = vec![user("a", &["b"], 500), user("b", &[], 800)];
        let comments = vec![
            comment("a", "2024-10-20T00:00:00Z", "quiet before the storm", Some(0)),
            comment("a", "2024-10-29T12:00:00Z", "oscar is here", Some(-1)),
            comment("b", "2024-10-28T00:00:00Z", "boarding windows for oscar", Some(-1)),
        ];
        let events = vec![
            EventContext::new(ts("2024-10-29T00:00:00Z"), "Hurricane Oscar makes landfall", "news")
                .unwrap(),
        ];
        Corpus::assemble(users, comments, events, vec!["oscar".into()]).unwrap().0
    }

    #[test]
    fn assemble_drops_dangling_edges_and_orphan_comments() {
        let users = vec![user("a", &["ghost", "b"], 100), user("b", &[], 100)];
        let comments = vec![
            comment("a", "2024-10-20T00:00:00Z", "hello", None),
            comment("nobody", "2024-10-20T00:00:00Z", "orphan", None),
        ];
        let (corpus, report) = Corpus::assemble(users, comments, vec![], vec![]).unwrap();
        assert_eq!(report.dangling_followee_edges_dropped, 1);
        assert_eq!(report.comments_skipped_unknown_user, 1);
        assert_eq!(corpus.user(&uid("a")).unwrap().followees, vec![uid("b")]);
        assert_eq!(corpus.comments_of(&uid("a")).len(), 1);
    }

    #[test]
    fn ingest_minimal_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let users = dir.path().join("users.jsonl");
        let comments = dir.path().join("comments.jsonl");
        let events = dir.path().join("events.jsonl");
        std::fs::write(
            &users,
            r#"{"user_id":"u1","attributes":{},"followees":[],"followers_count":10,"friends_count":10}"#,
        )
        .unwrap();
        std::fs::write(
            &comments,
            concat!(
                r#"{"user_id":"u1","timestamp":"2024-10-20T00:00:00Z","text":"one"}"#,
                "\n",
                r#"{"user_id":"u1","timestamp":"2024-10-21T00:00:00Z","text":"two"}"#,
                "\n",
                r#"{"user_id":"unknown","timestamp":"2024-10-21T00:00:00Z","text":"drop me"}"#,
                "\n",
                r#"{"user_id":"u1","timestamp":"2024-10-22T00:00:00Z","text":"   "}"#,
                "\n",
            ),
        )
        .unwrap();
        std::fs::write(&events, "").unwrap();
        let (corpus, report) = ingest(
            &IngestPaths { users, comments, events },
            vec!["storm".into()],
        )
        .unwrap();
        assert_eq!(corpus.user_count(), 1);
        assert_eq!(corpus.comments_of(&uid("u1")).len(), 2);
        assert_eq!(report.assembly.comments_skipped_unknown_user, 1);
        assert_eq!(report.comment_issues.len(), 1); // blank text
        assert_eq!(report.comment_issues[0].line, 4);
    }

    #[test]
    fn ingest_rejects_conflicting_duplicate_users() {
        let dir = tempfile::tempdir().unwrap();
        let users = dir.path().join("users.jsonl");
        let comments = dir.path().join("comments.jsonl");
        let events = dir.path().join("events.jsonl");
        std::fs::write(
            &users,
            concat!(
                r#"{"user_id":"u1","followers_count":10,"friends_count":10}"#,
                "\n",
                r#"{"user_id":"u1","followers_count":99,"friends_count":10}"#,
                "\n",
            ),
        )
        .unwrap();
        std::fs::write(&comments, "").unwrap();
        std::fs::write(&events, "").unwrap();
        let err = ingest(&IngestPaths { users, comments, events }, vec![]).unwrap_err();
        assert!(matches!(err, CorpusError::ConflictingDuplicateUser { .. }));
    }

    #[test]
    fn ingest_rejects_zero_valid_users() {
        let dir = tempfile::tempdir().unwrap();
        let users = dir.path().join("users.jsonl");
        let comments = dir.path().join("comments.jsonl");
        let events = dir.path().join("events.jsonl");
        std::fs::write(&users, "garbage\n").unwrap();
        std::fs::write(&comments, "").unwrap();
        std::fs::write(&events, "").unwrap();
        let err = ingest(&IngestPaths { users, comments, events }, vec![]).unwrap_err();
        assert!(matches!(err, CorpusError::AllLinesInvalid { .. }));
    }

    #[test]
    fn comments_before_is_inclusive_at_the_cutoff() {
        let users = vec![user("a", &[], 100)];
        let comments = vec![
            comment("a", "2024-10-20T00:00:00Z", "t minus 2", None),
            comment("a", "2024-10-21T00:00:00Z", "t minus 1", None),
            comment("a", "2024-10-23T00:00:00Z", "t plus 1", None),
        ];
        let (corpus, _) = Corpus::assemble(users, comments, vec![], vec![]).unwrap();

        let all = corpus.comments_before(&uid("a"), ts("2024-10-22T00:00:00Z")).unwrap();
        assert_eq!(all.len(), 2);

        let none = corpus.comments_before(&uid("a"), ts("2024-10-19T00:00:00Z")).unwrap();
        assert!(none.is_empty());

        let at = corpus.comments_before(&uid("a"), ts("2024-10-21T00:00:00Z")).unwrap();
        assert_eq!(at.len(), 2);
        assert_eq!(at.last().unwrap().text, "t minus 1");

        assert!(corpus.comments_before(&uid("zz"), ts("2024-10-21T00:00:00Z")).is_err());
    }

    #[test]
    fn comments_before_is_a_monotone_prefix() {
        let corpus = tiny_corpus();
        let early = corpus.comments_before(&uid("a"), ts("2024-10-25T00:00:00Z")).unwrap();
        let late = corpus.comments_before(&uid("a"), ts("2024-11-01T00:00:00Z")).unwrap();
        assert!(late.starts_with(early));
    }

    fn phase_comments(id: &str) -> Vec<Comment> {
        // 10 comments: 4 before, 3 during, 3 after the boundaries below.
        let mut out = Vec::new();
        for (i, time) in [
            "2024-10-20T00:00:00Z",
            "2024-10-21T00:00:00Z",
            "2024-10-22T00:00:00Z",
            "2024-10-23T00:00:00Z",
            "2024-10-29T06:00:00Z",
            "2024-10-30T00:00:00Z",
            "2024-11-01T00:00:00Z",
            "2024-11-05T06:00:00Z",
            "2024-11-06T00:00:00Z",
            "2024-11-07T00:00:00Z",
        ]
        .iter()
        .enumerate()
        {
            let text = if i == 0 { "waiting on oscar".to_string() } else { format!("post {i}") };
            out.push(comment(id, time, &text, None));
        }
        out
    }

    fn boundaries() -> (DateTime<Utc>, DateTime<Utc>) {
        (ts("2024-10-29T00:00:00Z"), ts("2024-11-05T00:00:00Z"))
    }

    #[test]
    fn select_users_applies_every_criterion() {
        let users = vec![
            user("pass", &["other"], 500),
            user("low_followers", &["other"], 50),
            user("few_tweets", &["other"], 500),
            user("no_geo", &["other"], 500),
            user("other", &[], 500),
        ];
        let users = users
            .into_iter()
            .map(|mut u| {
                if u.id.as_str() == "no_geo" {
                    u.location = None;
                }
                u
            })
            .collect();
        let mut comments = Vec::new();
        comments.extend(phase_comments("pass"));
        comments.extend(phase_comments("low_followers"));
        comments.extend(phase_comments("no_geo"));
        comments.push(comment("few_tweets", "2024-10-20T00:00:00Z", "oscar watch", None));
        let (corpus, _) =
            Corpus::assemble(users, comments, vec![], vec!["oscar".into()]).unwrap();

        let selected = select_users(&corpus, &SelectionCriteria::new(boundaries())).unwrap();
        assert_eq!(selected, vec![uid("pass")]);
    }

    #[test]
    fn select_users_band_boundaries_are_inclusive() {
        // Tweet counts {9, 10, 1000, 1001} and follower counts
        // {99, 100, 2000, 2001} sit exactly on the stated bands.
        let mk_user = |id: &str, followers: u64| user(id, &["hub"], followers);
        let mut users =
            vec![mk_user("t9", 500), mk_user("t10", 500), mk_user("f99", 99), mk_user("f100", 100)];
        users.push(user("hub", &[], 500));
        let mut comments = Vec::new();
        let mut add_n = |id: &str, n: usize| {
            // Spread n comments over the three phases.
            comments.push(comment(id, "2024-10-20T00:00:00Z", "before oscar", None));
            comments.push(comment(id, "2024-10-30T00:00:00Z", "during", None));
            for i in 0..n.saturating_sub(2) {
                let day = 5 + (i % 7);
                let secs = i / 7;
                comments.push(comment(
                    id,
                    &format!("2024-11-{day:02}T00:00:{secs:02}Z"),
                    &format!("after {i}"),
                    None,
                ));
            }
        };
        add_n("t9", 9);
        add_n("t10", 10);
        add_n("f99", 12);
        add_n("f100", 12);
        let (corpus, _) =
            Corpus::assemble(users, comments, vec![], vec!["oscar".into()]).unwrap();
        let selected = select_users(&corpus, &SelectionCriteria::new(boundaries())).unwrap();
        assert_eq!(selected, vec![uid("f100"), uid("t10")]);
    }

    #[test]
    fn followee_sample_prefers_keyword_bearing_comments() {
        // Two followees with identical follower counts and no interaction;
        // only the keyword-bearing comment gains relevance 1.0, so it wins:
        // 0.5·1 + 0.2·ln(501) vs 0.5·0 + 0.2·ln(501).
        let users =
            vec![user("u", &["kw", "plain"], 500), user("kw", &[], 500), user("plain", &[], 500)];
        let comments = vec![
            comment("kw", "2024-10-25T00:00:00Z", "oscar update incoming", None),
            comment("plain", "2024-10-24T00:00:00Z", "nice weather today", None),
        ];
        let (corpus, _) =
            Corpus::assemble(users, comments, vec![], vec!["oscar".into()]).unwrap();
        let sample = followee_sample(
            &corpus,
            &uid("u"),
            ts("2024-10-26T00:00:00Z"),
            10,
            InfluenceWeights::default(),
        )
        .unwrap();
        assert_eq!(sample.len(), 2);
        assert_eq!(sample[0].text, "oscar update incoming");

        // Saturation: k larger than available returns everything.
        let sample = followee_sample(
            &corpus,
            &uid("u"),
            ts("2024-10-26T00:00:00Z"),
            99,
            InfluenceWeights::default(),
        )
        .unwrap();
        assert_eq!(sample.len(), 2);

        // Nothing after t leaks in.
        let sample = followee_sample(
            &corpus,
            &uid("u"),
            ts("2024-10-24T12:00:00Z"),
            10,
            InfluenceWeights::default(),
        )
        .unwrap();
        assert_eq!(sample.len(), 1);
        assert_eq!(sample[0].text, "nice weather today");
    }

    #[test]
    fn followee_sample_empty_for_no_followees() {
        let corpus = tiny_corpus();
        let sample = followee_sample(
            &corpus,
            &uid("b"),
            ts("2024-11-01T00:00:00Z"),
            5,
            InfluenceWeights::default(),
        )
        .unwrap();
        assert!(sample.is_empty());
        assert!(followee_sample(
            &corpus,
            &uid("nope"),
            ts("2024-11-01T00:00:00Z"),
            5,
            InfluenceWeights::default()
        )
        .is_err());
    }

    #[test]
    fn ground_truth_window_average_rounds_away_from_zero() {
        let users = vec![user("a", &[], 100)];
        let comments = vec![
            comment("a", "2024-11-05T01:00:00Z", "one", Some(1)),
            comment("a", "2024-11-05T02:00:00Z", "two", Some(2)),
        ];
        let (corpus, _) = Corpus::assemble(users, comments, vec![], vec![]).unwrap();
        let gt = build_ground_truth(
            &corpus,
            &[uid("a")],
            ts("2024-11-05T00:00:00Z"),
            GroundTruthScheme::WindowAverage,
            24,
        )
        .unwrap();
        // mean 1.5 rounds away from zero to 2
        assert_eq!(gt.entries[&uid("a")].value(), 2);
    }

    #[test]
    fn ground_truth_singleton_and_omission() {
        let users = vec![user("a", &[], 100), user("late", &[], 100)];
        let comments = vec![
            comment("a", "2024-11-05T01:00:00Z", "one", Some(2)),
            comment("late", "2024-11-07T00:00:00Z", "way past the window", Some(1)),
        ];
        let (corpus, _) = Corpus::assemble(users, comments, vec![], vec![]).unwrap();
        let gt = build_ground_truth(
            &corpus,
            &[uid("a"), uid("late")],
            ts("2024-11-05T00:00:00Z"),
            GroundTruthScheme::WindowAverage,
            24,
        )
        .unwrap();
        assert_eq!(gt.entries[&uid("a")].value(), 2);
        assert_eq!(gt.omitted, vec![uid("late")]);
    }

    #[test]
    fn ground_truth_next_comment_scheme() {
        let users = vec![user("a", &[], 100)];
        let comments = vec![
            comment("a", "2024-11-04T00:00:00Z", "before", Some(0)),
            comment("a", "2024-11-06T00:00:00Z", "first after", Some(-2)),
            comment("a", "2024-11-07T00:00:00Z", "later", Some(2)),
        ];
        let (corpus, _) = Corpus::assemble(users, comments, vec![], vec![]).unwrap();
        let gt = build_ground_truth(
            &corpus,
            &[uid("a")],
            ts("2024-11-05T00:00:00Z"),
            GroundTruthScheme::NextComment,
            24,
        )
        .unwrap();
        assert_eq!(gt.entries[&uid("a")].value(), -2);
    }

    #[test]
    fn ground_truth_rejects_unlabeled_comments() {
        let users = vec![user("a", &[], 100)];
        let comments = vec![comment("a", "2024-11-05T01:00:00Z", "unlabeled", None)];
        let (corpus, _) = Corpus::assemble(users, comments, vec![], vec![]).unwrap();
        let err = build_ground_truth(
            &corpus,
            &[uid("a")],
            ts("2024-11-05T00:00:00Z"),
            GroundTruthScheme::WindowAverage,
            24,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::UnlabeledComment { .. }));
    }

    #[test]
    fn anonymize_replaces_whole_words_case_insensitively() {
        let users = vec![user("a", &[], 100)];
        let comments = vec![
            comment("a", "2024-10-20T00:00:00Z", "Sandy hit us hard", None),
            comment("a", "2024-10-21T00:00:00Z", "sandy beaches and SANDY winds", None),
            comment("a", "2024-10-22T00:00:00Z", "sandbags everywhere", None),
        ];
        let events =
            vec![EventContext::new(ts("2024-10-19T00:00:00Z"), "Hurricane Sandy forms", "news")
                .unwrap()];
        let (corpus, _) =
            Corpus::assemble(users, comments, events, vec!["sandy".into()]).unwrap();
        let rename: BTreeMap<String, String> = [("Sandy".to_string(), "Oscar".to_string())].into();
        let anon = anonymize_event(&corpus, &rename, None);
        let texts: Vec<&str> =
            anon.comments_of(&uid("a")).iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, vec![
            "Oscar hit us hard",
            "oscar beaches and OSCAR winds",
            "sandbags everywhere",
        ]);
        assert_eq!(anon.events()[0].summary, "Hurricane Oscar forms");
        assert_eq!(anon.topic_keywords(), &["oscar".to_string()]);

        // Identity on an empty rename map.
        let same = anonymize_event(&corpus, &BTreeMap::new(), None);
        assert_eq!(same, corpus);
    }

    #[test]
    fn anonymize_is_idempotent_when_values_share_no_keys() {
        let corpus = tiny_corpus();
        let rename: BTreeMap<String, String> = [("oscar".to_string(), "peak".to_string())].into();
        let once = anonymize_event(&corpus, &rename, None);
        let twice = anonymize_event(&once, &rename, None);
        assert_eq!(once, twice);
    }

    #[test]
    fn anonymize_shifts_timestamps() {
        let corpus = tiny_corpus();
        let shifted = anonymize_event(&corpus, &BTreeMap::new(), Some(Duration::days(365)));
        assert_eq!(
            shifted.comments_of(&uid("a"))[0].time,
            corpus.comments_of(&uid("a"))[0].time + Duration::days(365)
        );
        assert_eq!(shifted.events()[0].time, corpus.events()[0].time + Duration::days(365));
    }

    #[test]
    fn ground_truth_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.jsonl");
        let gt = GroundTruth {
            t_prime: ts("2024-11-05T00:00:00Z"),
            scheme: GroundTruthScheme::WindowAverage,
            window_hours: 24,
            entries: [(uid("a"), SentimentScore::new(2).unwrap())].into(),
            omitted: vec![],
        };
        gt.write(&path).unwrap();
        let back = GroundTruth::read(&path).unwrap();
        assert_eq!(back.entries, gt.entries);
        assert_eq!(back.t_prime, gt.t_prime);
        assert_eq!(back.scheme, gt.scheme);
    }

    #[test]
    fn selection_criteria_validation() {
        let mut c = SelectionCriteria::new(boundaries());
        c.min_tweets = 50;
        c.max_tweets = 10;
        assert!(select_users(&tiny_corpus(), &c).is_err());
        let c = SelectionCriteria::new((
            Utc.with_ymd_and_hms(2024, 11, 5, 0, 0, 0).unwrap(),
            Utc.with_ymd_and_hms(2024, 10, 29, 0, 0, 0).unwrap(),
        ));
        assert!(select_users(&tiny_corpus(), &c).is_err());
    }
}
