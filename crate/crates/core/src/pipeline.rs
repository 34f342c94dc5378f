//! The multi-perspective role-playing forecast: a subjective agent browses
//! followee comments and drafts a future comment; an objective reviewer
//! judges tone/attitude consistency; inconsistent drafts are regenerated
//! from the reviewer's analysis, up to a bounded number of iterations.
//! The final comment is scored onto the sentiment scale and the cohort
//! distributions are aggregated from successful forecasts.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{followee_sample, Corpus, CorpusError, InfluenceWeights};
use crate::domain::{
    polarity_of, Comment, DomainError, EventContext, ForecastResult, Polarity, SentimentScore,
    ToneOfVoice, TraceStep, UserId,
};
use crate::features::FeatureSet;
use crate::gateway::{
    parse_verdict, render_prompt, ChatRequest, Gateway, GatewayError, InstructionKind,
    PromptBundle, Verdict,
};
use crate::io::{write_jsonl, IoError};
use crate::metrics::{MetricsError, SentimentDistribution};
use crate::sentiment::{SentimentError, SentimentScorer};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("pipeline config invalid: {0}")]
    BadConfig(String),
    #[error("t_prime {t_prime} is not after the latest history comment at {latest}")]
    TemporalOrder { t_prime: DateTime<Utc>, latest: DateTime<Utc> },
    #[error("generation returned an empty comment after a retry")]
    EmptyGeneration,
    #[error("review verdict unusable after a retry: {0}")]
    VerdictUnparseable(String),
    #[error("rectify requires the analysis of a failed review")]
    RectifyWithoutAnalysis,
    #[error("no features extracted for user {0}")]
    FeaturesMissing(String),
    #[error("every user in the cohort failed ({0} failures)")]
    AllUsersFailed(usize),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Sentiment(#[from] SentimentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Pipeline knobs. The iteration limit bounds the generate-review-rectify
/// loop; generation runs warm, review runs cold.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub max_iterations: usize,
    pub followee_sample_size: usize,
    pub history_window: usize,
    pub generation_temperature: f64,
    pub review_temperature: f64,
    pub max_tokens: u32,
    pub subjective_model: String,
    pub objective_model: String,
    pub event_name: Option<String>,
    pub influence_weights: InfluenceWeights,
    /// Attribute key that carries the mock-routing persona marker, when the
    /// corpus provides one.
    pub persona_attribute: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_iterations: 3,
            followee_sample_size: 10,
            history_window: 30,
            generation_temperature: 0.7,
            review_temperature: 0.0,
            max_tokens: 256,
            subjective_model: "subjective".into(),
            objective_model: "objective".into(),
            event_name: None,
            influence_weights: InfluenceWeights::default(),
            persona_attribute: "persona".into(),
        }
    }
}

impl PipelineConfig {
    fn validate(&self) -> Result<(), PipelineError> {
        if self.max_iterations < 1 {
            return Err(PipelineError::BadConfig("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything the prompts need for one user, assembled once per forecast.
#[derive(Debug, Clone)]
pub struct UserContext {
    pub user: UserId,
    pub persona_key: Option<String>,
    pub tone: ToneOfVoice,
    pub attitude: crate::domain::Attitude,
    pub attributes: BTreeMap<String, String>,
    /// Recent history at or before t, oldest first.
    pub history: Vec<Comment>,
    /// Event context available at persona-building time (≤ t).
    pub events_at_t: Vec<EventContext>,
    /// Event context including the most recent development before t'.
    pub events_for_generation: Vec<EventContext>,
    pub event_name: Option<String>,
}

impl UserContext {
    fn bundle(&self) -> PromptBundle {
        let mut bundle = PromptBundle::new()
            .tone(self.tone.clone())
            .attitude(self.attitude.clone())
            .attributes(self.attributes.clone())
            .comments(self.history.clone());
        if let Some(key) = &self.persona_key {
            bundle = bundle.persona_key(key.clone());
        }
        if let Some(name) = &self.event_name {
            bundle = bundle.event_name(name.clone());
        }
        bundle
    }
}

fn latest_time(comments: &[Comment]) -> Option<DateTime<Utc>> {
    comments.iter().map(|c| c.time).max()
}

/// Drafts the comment to be posted at `t_prime`: the role-play persona is
/// the system text, the browse-and-comment instruction the user turn.
/// An empty generation is retried once, then fails.
pub fn generate_candidate(
    gateway: &Gateway,
    ctx: &UserContext,
    followees: &[Comment],
    t_prime: DateTime<Utc>,
    config: &PipelineConfig,
) -> Result<String, PipelineError> {
    let history_latest = latest_time(&ctx.history).into_iter().chain(latest_time(followees));
    if let Some(latest) = history_latest.max() {
        if t_prime <= latest {
            return Err(PipelineError::TemporalOrder { t_prime, latest });
        }
    }
    let system = render_prompt(InstructionKind::RolePlay, &ctx.bundle().events(ctx.events_at_t.clone()))?;
    let browse = render_prompt(
        InstructionKind::BrowseComment,
        &ctx.bundle()
            .followee_comments(followees.to_vec())
            .events(ctx.events_for_generation.clone())
            .t_prime(t_prime),
    )?;
    let request = ChatRequest::single_turn(
        system.rendered_text,
        browse.rendered_text,
        config.generation_temperature,
        config.max_tokens,
        config.subjective_model.clone(),
        None,
    )?;
    let text = gateway.complete(&request)?.text.trim().to_string();
    if !text.is_empty() {
        return Ok(text);
    }
    log::warn!("empty generation for {}; retrying once", ctx.user);
    let text = gateway.complete(&request)?.text.trim().to_string();
    if text.is_empty() {
        return Err(PipelineError::EmptyGeneration);
    }
    Ok(text)
}

/// Reviews a candidate against the user's tone, attitude, and history.
/// Runs at the review temperature (cold); a malformed verdict gets one
/// retry, then fails with the trace preserved by the caller.
pub fn review_candidate(
    gateway: &Gateway,
    ctx: &UserContext,
    candidate: &str,
    config: &PipelineConfig,
) -> Result<Verdict, PipelineError> {
    let prompt =
        render_prompt(InstructionKind::ObjectiveReview, &ctx.bundle().candidate(candidate))?;
    let request = ChatRequest::single_turn(
        "",
        prompt.rendered_text,
        config.review_temperature,
        config.max_tokens,
        config.objective_model.clone(),
        None,
    )?;
    let first = gateway.complete(&request)?.text;
    match parse_verdict(&first) {
        Ok(verdict) => Ok(verdict),
        Err(first_err) => {
            log::warn!("verdict malformed for {} ({first_err}); retrying once", ctx.user);
            let second = gateway.complete(&request)?.text;
            parse_verdict(&second)
                .map_err(|e| PipelineError::VerdictUnparseable(e.to_string()))
        }
    }
}

/// Regenerates a candidate from the reviewer's analysis and the rejected
/// draft. Only legal after a failed review.
pub fn rectify(
    gateway: &Gateway,
    ctx: &UserContext,
    analysis: &str,
    previous: &str,
    config: &PipelineConfig,
) -> Result<String, PipelineError> {
    if analysis.trim().is_empty() {
        return Err(PipelineError::RectifyWithoutAnalysis);
    }
    let prompt = render_prompt(
        InstructionKind::Rectify,
        &ctx.bundle().analysis(analysis).candidate(previous),
    )?;
    let request = ChatRequest::single_turn(
        "",
        prompt.rendered_text,
        config.generation_temperature,
        config.max_tokens,
        config.subjective_model.clone(),
        None,
    )?;
    let text = gateway.complete(&request)?.text.trim().to_string();
    if !text.is_empty() {
        if text == previous {
            log::warn!("rectification for {} regenerated the identical comment", ctx.user);
        }
        return Ok(text);
    }
    log::warn!("empty rectification for {}; retrying once", ctx.user);
    let text = gateway.complete(&request)?.text.trim().to_string();
    if text.is_empty() {
        return Err(PipelineError::EmptyGeneration);
    }
    Ok(text)
}

/// Assembles the prompt context for one user at cutoff `t`.
pub fn build_user_context(
    corpus: &Corpus,
    features: &FeatureSet,
    u: &UserId,
    t: DateTime<Utc>,
    t_prime: DateTime<Utc>,
    config: &PipelineConfig,
) -> Result<UserContext, PipelineError> {
    let user = corpus
        .user(u)
        .ok_or_else(|| CorpusError::UnknownUser(u.to_string()))?;
    let history_full = corpus.comments_before(u, t)?;
    let start = history_full.len().saturating_sub(config.history_window);
    let history = history_full[start..].to_vec();
    Ok(UserContext {
        user: u.clone(),
        persona_key: user.attributes.get(&config.persona_attribute).cloned(),
        tone: features.tone.clone(),
        attitude: features.attitude.clone(),
        attributes: user.attributes.clone(),
        history,
        events_at_t: corpus.events_until(t).to_vec(),
        events_for_generation: corpus.events_before(t_prime).to_vec(),
        event_name: config.event_name.clone(),
    })
}

/// Runs the full loop for one user: generate, review, rectify while
/// inconsistent, at most `max_iterations` candidates. When the budget runs
/// out on an inconsistent draft, the last candidate ships with
/// `converged = false` so cohort coverage stays complete.
#[allow(clippy::too_many_arguments)]
pub fn forecast_user(
    gateway: &Gateway,
    corpus: &Corpus,
    scorer: &dyn SentimentScorer,
    features: &FeatureSet,
    u: &UserId,
    t: DateTime<Utc>,
    t_prime: DateTime<Utc>,
    config: &PipelineConfig,
) -> Result<ForecastResult, PipelineError> {
    config.validate()?;
    if t >= t_prime {
        return Err(PipelineError::TemporalOrder { t_prime, latest: t });
    }
    let ctx = build_user_context(corpus, features, u, t, t_prime, config)?;
    let followees = followee_sample(
        corpus,
        u,
        t,
        config.followee_sample_size,
        config.influence_weights,
    )?;

    let mut trace: Vec<TraceStep> = Vec::new();
    let mut candidate = generate_candidate(gateway, &ctx, &followees, t_prime, config)?;
    loop {
        let verdict = review_candidate(gateway, &ctx, &candidate, config)?;
        trace.push(TraceStep {
            candidate: candidate.clone(),
            consistent: verdict.consistent,
            analysis: verdict.analysis.clone(),
        });
        if verdict.consistent || trace.len() >= config.max_iterations {
            break;
        }
        candidate = rectify(gateway, &ctx, &verdict.analysis, &candidate, config)?;
    }

    let sentiment = scorer.score(&candidate)?;
    Ok(ForecastResult::new(
        u.clone(),
        t_prime,
        candidate,
        sentiment,
        polarity_of(sentiment),
        ctx.tone,
        ctx.attitude,
        trace,
    )?)
}

/// A per-user failure inside a cohort run; the cohort itself carries on.
#[derive(Debug, Clone, Serialize)]
pub struct UserFailure {
    pub user: UserId,
    pub error: String,
}

/// Cohort-level output: per-user results sorted by user id, isolated
/// failures, the aggregate distributions over successes, and the fraction
/// of the cohort they cover.
#[derive(Debug)]
pub struct CohortForecast {
    pub results: Vec<ForecastResult>,
    pub failures: Vec<UserFailure>,
    pub sentiment_distribution: SentimentDistribution,
    pub polarity_distribution: SentimentDistribution,
    pub coverage: f64,
}

/// Fans the per-user forecasts out over `parallelism` workers. Users are
/// independent; the gateway's in-flight cap still bounds completion
/// concurrency below whatever is chosen here.
#[allow(clippy::too_many_arguments)]
pub fn forecast_cohort(
    gateway: &Gateway,
    corpus: &Corpus,
    scorer: &dyn SentimentScorer,
    features: &BTreeMap<UserId, FeatureSet>,
    users: &[UserId],
    t: DateTime<Utc>,
    t_prime: DateTime<Utc>,
    config: &PipelineConfig,
    parallelism: usize,
) -> Result<CohortForecast, PipelineError> {
    config.validate()?;
    if users.is_empty() {
        return Err(PipelineError::BadConfig("cohort must be non-empty".into()));
    }
    let outcomes: Mutex<Vec<(UserId, Result<ForecastResult, PipelineError>)>> =
        Mutex::new(Vec::with_capacity(users.len()));
    let cursor = AtomicUsize::new(0);
    let workers = parallelism.clamp(1, users.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = cursor.fetch_add(1, Ordering::SeqCst);
                if index >= users.len() {
                    break;
                }
                let u = &users[index];
                let outcome = match features.get(u) {
                    Some(feature_set) => forecast_user(
                        gateway,
                        corpus,
                        scorer,
                        feature_set,
                        u,
                        t,
                        t_prime,
                        config,
                    ),
                    None => Err(PipelineError::FeaturesMissing(u.to_string())),
                };
                outcomes.lock().unwrap().push((u.clone(), outcome));
            });
        }
    });

    let mut outcomes = outcomes.into_inner().unwrap();
    outcomes.sort_by(|a, b| a.0.cmp(&b.0));

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (user, outcome) in outcomes {
        match outcome {
            Ok(result) => results.push(result),
            Err(error) => failures.push(UserFailure { user, error: error.to_string() }),
        }
    }
    if results.is_empty() {
        return Err(PipelineError::AllUsersFailed(failures.len()));
    }

    let scores: Vec<SentimentScore> = results.iter().map(|r| r.sentiment).collect();
    let polarities: Vec<Polarity> = results.iter().map(|r| r.polarity).collect();
    Ok(CohortForecast {
        coverage: results.len() as f64 / users.len() as f64,
        sentiment_distribution: SentimentDistribution::from_scores(&scores)?,
        polarity_distribution: SentimentDistribution::from_polarities(&polarities)?,
        results,
        failures,
    })
}

/// One line of forecasts.jsonl.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub user_id: UserId,
    pub t_prime: DateTime<Utc>,
    pub comment: String,
    pub sentiment: SentimentScore,
    pub polarity: Polarity,
    pub tone: [String; 3],
    pub attitude: String,
    pub iterations: usize,
    pub converged: bool,
}

impl ForecastRecord {
    pub fn from_result(result: &ForecastResult) -> ForecastRecord {
        ForecastRecord {
            user_id: result.user.clone(),
            t_prime: result.t_prime,
            comment: result.comment.clone(),
            sentiment: result.sentiment,
            polarity: result.polarity,
            tone: result.tone.adjectives().clone(),
            attitude: result.attitude.statement().to_string(),
            iterations: result.iterations_used,
            converged: result.converged,
        }
    }
}

/// One line of the flag-gated trace file.
#[derive(Debug, Serialize, Deserialize)]
pub struct TraceRecord {
    pub user_id: UserId,
    pub step: usize,
    pub candidate: String,
    pub consistent: bool,
    pub analysis: String,
}

pub fn write_forecasts(results: &[ForecastResult], path: &Path) -> Result<(), PipelineError> {
    let records: Vec<ForecastRecord> = results.iter().map(ForecastRecord::from_result).collect();
    write_jsonl(path, &records)?;
    Ok(())
}

pub fn write_traces(results: &[ForecastResult], path: &Path) -> Result<(), PipelineError> {
    let mut records = Vec::new();
    for result in results {
        for (i, step) in result.trace.iter().enumerate() {
            records.push(TraceRecord {
                user_id: result.user.clone(),
                step: i + 1,
                candidate: step.candidate.clone(),
                consistent: step.consistent,
                analysis: step.analysis.clone(),
            });
        }
    }
    write_jsonl(path, &records)?;
    Ok(())
}

pub fn read_forecasts(path: &Path) -> Result<Vec<ForecastRecord>, PipelineError> {
    Ok(crate::io::read_jsonl_strict(path)?)
}
