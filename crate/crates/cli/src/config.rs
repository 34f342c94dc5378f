//! Run configuration: a TOML file of plain key-value sections, every key
//! overridable, with defaults wired for the offline mock demo.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use serde::Deserialize;

use senticast_core::corpus::{GroundTruthScheme, SelectionCriteria};
use senticast_core::pipeline::PipelineConfig;

fn default_seed() -> u64 {
    42
}
fn default_concurrency() -> usize {
    4
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_jsd_log_base() -> f64 {
    2.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Fixed at 2; present so the choice of logarithm is explicit in every
    /// run config.
    #[serde(default = "default_jsd_log_base")]
    pub jsd_log_base: f64,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub scorer: ScorerSection,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub event: EventSection,
    #[serde(default)]
    pub selection: SelectionSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub finetune: FinetuneSection,
    #[serde(default)]
    pub anonymize: Option<AnonymizeSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    /// "mock" or "remote"; exactly one backend is active per run.
    #[serde(default = "default_backend_kind")]
    pub kind: String,
    /// Mock script path; defaults to {out_dir}/mockscript.jsonl.
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default)]
    pub base_url: Option<String>,
    /// Environment variable holding the bearer token for remote runs.
    #[serde(default = "default_auth_env")]
    pub auth_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_backend_kind() -> String {
    "mock".into()
}
fn default_auth_env() -> String {
    "SENTICAST_API_TOKEN".into()
}
fn default_timeout_secs() -> u64 {
    60
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: default_backend_kind(),
            script: None,
            base_url: None,
            auth_env: default_auth_env(),
            timeout_secs: default_timeout_secs(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub max_iterations: usize,
    pub followee_sample_size: usize,
    pub history_window: usize,
    pub generation_temperature: f64,
    pub review_temperature: f64,
    pub max_tokens: u32,
    pub subjective_model: String,
    pub objective_model: String,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let base = PipelineConfig::default();
        PipelineSection {
            max_iterations: base.max_iterations,
            followee_sample_size: base.followee_sample_size,
            history_window: base.history_window,
            generation_temperature: base.generation_temperature,
            review_temperature: base.review_temperature,
            max_tokens: base.max_tokens,
            subjective_model: base.subjective_model,
            objective_model: base.objective_model,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerSection {
    /// "lexicon" or "remote".
    #[serde(default = "default_scorer_kind")]
    pub kind: String,
    /// Lexicon path; defaults to {out_dir}/lexicon.jsonl.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub url: Option<String>,
}

fn default_scorer_kind() -> String {
    "lexicon".into()
}

impl Default for ScorerSection {
    fn default() -> Self {
        ScorerSection { kind: default_scorer_kind(), lexicon: None, url: None }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub users: Option<PathBuf>,
    pub comments: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub labeled_comments: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub selected_users: Option<PathBuf>,
    pub forecasts: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub seeds: Option<PathBuf>,
    pub finetune: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventSection {
    pub name: String,
    pub keywords: Vec<String>,
    /// Forecast cutoff t: history is everything at or before this instant.
    pub t: DateTime<Utc>,
    /// Time of interest t' > t.
    pub t_prime: DateTime<Utc>,
    /// "window" or "next".
    pub ground_truth_scheme: String,
    pub window_hours: i64,
}

impl Default for EventSection {
    fn default() -> Self {
        let parse = |s: &str| {
            DateTime::parse_from_rfc3339(s).expect("valid default time").with_timezone(&Utc)
        };
        EventSection {
            name: "Oscar".into(),
            keywords: vec!["oscar".into(), "storm".into()],
            t: parse("2024-11-05T00:00:00Z"),
            t_prime: parse("2024-11-05T00:30:00Z"),
            ground_truth_scheme: "window".into(),
            window_hours: 24,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSection {
    pub min_tweets: usize,
    pub max_tweets: usize,
    pub min_followers: u64,
    pub max_followers: u64,
    pub require_keyword: bool,
    pub require_geo: bool,
    pub require_followees: bool,
    pub require_phase_coverage: bool,
    /// Phase boundary b0: the event's active phase starts here.
    pub during_from: DateTime<Utc>,
    /// Phase boundary b1: the aftermath starts here.
    pub after_from: DateTime<Utc>,
}

impl Default for SelectionSection {
    fn default() -> Self {
        let parse = |s: &str| {
            DateTime::parse_from_rfc3339(s).expect("valid default time").with_timezone(&Utc)
        };
        SelectionSection {
            min_tweets: 10,
            max_tweets: 1000,
            min_followers: 100,
            max_followers: 2000,
            require_keyword: true,
            require_geo: true,
            require_followees: true,
            require_phase_coverage: true,
            during_from: parse("2024-10-29T00:00:00Z"),
            after_from: parse("2024-11-05T00:00:00Z"),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub self_weight: f64,
    pub steps: usize,
    pub epsilon: Option<f64>,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection { self_weight: 0.5, steps: 10, epsilon: Some(1e-8) }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_users: usize,
    pub comments_per_phase: usize,
    pub include_drifting: bool,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection { n_users: 50, comments_per_phase: 4, include_drifting: false }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub target_count: usize,
    pub max_consistent_fraction: f64,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        FinetuneSection { target_count: 100, max_consistent_fraction: 0.7 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnonymizeSection {
    pub rename: BTreeMap<String, String>,
    #[serde(default)]
    pub time_shift_hours: i64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig = toml::from_str(&raw)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.concurrency < 1 {
            bail!("concurrency must be >= 1");
        }
        if self.pipeline.max_iterations < 1 {
            bail!("pipeline.max_iterations must be >= 1");
        }
        if self.jsd_log_base != 2.0 {
            bail!("jsd_log_base is fixed at 2 (base-2 JSD is part of the report contract)");
        }
        match self.backend.kind.as_str() {
            "mock" => {}
            "remote" => {
                if self.backend.base_url.is_none() {
                    bail!("backend.kind = \"remote\" requires backend.base_url");
                }
            }
            other => bail!("backend.kind must be \"mock\" or \"remote\", got {other:?}"),
        }
        match self.scorer.kind.as_str() {
            "lexicon" => {}
            "remote" => {
                if self.scorer.url.is_none() {
                    bail!("scorer.kind = \"remote\" requires scorer.url");
                }
            }
            other => bail!("scorer.kind must be \"lexicon\" or \"remote\", got {other:?}"),
        }
        match self.event.ground_truth_scheme.as_str() {
            "window" | "next" => {}
            other => bail!("event.ground_truth_scheme must be \"window\" or \"next\", got {other:?}"),
        }
        if self.event.t >= self.event.t_prime {
            bail!("event.t must be before event.t_prime");
        }
        Ok(())
    }

    fn resolved(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out_dir.join(name))
    }

    pub fn users_path(&self) -> PathBuf {
        self.resolved(&self.paths.users, "users.jsonl")
    }
    pub fn comments_path(&self) -> PathBuf {
        self.resolved(&self.paths.comments, "comments.jsonl")
    }
    pub fn events_path(&self) -> PathBuf {
        self.resolved(&self.paths.events, "events.jsonl")
    }
    pub fn labeled_comments_path(&self) -> PathBuf {
        self.resolved(&self.paths.labeled_comments, "comments_labeled.jsonl")
    }
    pub fn features_path(&self) -> PathBuf {
        self.resolved(&self.paths.features, "features.jsonl")
    }
    pub fn selected_users_path(&self) -> PathBuf {
        self.resolved(&self.paths.selected_users, "selected_users.json")
    }
    pub fn forecasts_path(&self) -> PathBuf {
        self.resolved(&self.paths.forecasts, "forecasts.jsonl")
    }
    pub fn trace_path(&self) -> PathBuf {
        self.resolved(&self.paths.trace, "trace.jsonl")
    }
    pub fn ground_truth_path(&self) -> PathBuf {
        self.resolved(&self.paths.ground_truth, "ground_truth.jsonl")
    }
    pub fn report_path(&self) -> PathBuf {
        self.resolved(&self.paths.report, "report.json")
    }
    pub fn seeds_path(&self) -> PathBuf {
        self.resolved(&self.paths.seeds, "seeds.jsonl")
    }
    pub fn finetune_path(&self) -> PathBuf {
        self.resolved(&self.paths.finetune, "finetune.jsonl")
    }
    pub fn mock_script_path(&self) -> PathBuf {
        self.resolved(&self.backend.script, "mockscript.jsonl")
    }
    pub fn lexicon_path(&self) -> PathBuf {
        self.resolved(&self.scorer.lexicon, "lexicon.jsonl")
    }
    pub fn failures_path(&self) -> PathBuf {
        self.out_dir.join("forecast_failures.json")
    }
    pub fn ingest_report_path(&self) -> PathBuf {
        self.out_dir.join("ingest_report.json")
    }
    pub fn finetune_rejects_path(&self) -> PathBuf {
        self.out_dir.join("finetune_rejects.json")
    }

    pub fn selection_criteria(&self) -> SelectionCriteria {
        let s = &self.selection;
        SelectionCriteria {
            min_tweets: s.min_tweets,
            max_tweets: s.max_tweets,
            min_followers: s.min_followers,
            max_followers: s.max_followers,
            require_keyword: s.require_keyword,
            require_geo: s.require_geo,
            require_followees: s.require_followees,
            require_phase_coverage: s.require_phase_coverage,
            phase_boundaries: (s.during_from, s.after_from),
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let p = &self.pipeline;
        PipelineConfig {
            max_iterations: p.max_iterations,
            followee_sample_size: p.followee_sample_size,
            history_window: p.history_window,
            generation_temperature: p.generation_temperature,
            review_temperature: p.review_temperature,
            max_tokens: p.max_tokens,
            subjective_model: p.subjective_model.clone(),
            objective_model: p.objective_model.clone(),
            event_name: Some(self.event.name.clone()),
            ..PipelineConfig::default()
        }
    }

    pub fn ground_truth_scheme(&self) -> GroundTruthScheme {
        match self.event.ground_truth_scheme.as_str() {
            "next" => GroundTruthScheme::NextComment,
            _ => GroundTruthScheme::WindowAverage,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gets_full_defaults() {
        let config: RunConfig = toml::from_str("").unwrap();
        config.validate().unwrap();
        assert_eq!(config.seed, 42);
        assert_eq!(config.pipeline.max_iterations, 3);
        assert_eq!(config.selection.min_tweets, 10);
        assert_eq!(config.users_path(), PathBuf::from("out/users.jsonl"));
    }

    #[test]
    fn explicit_paths_override_out_dir() {
        let config: RunConfig =
            toml::from_str("out_dir = \"work\"\n[paths]\nusers = \"elsewhere/u.jsonl\"").unwrap();
        assert_eq!(config.users_path(), PathBuf::from("elsewhere/u.jsonl"));
        assert_eq!(config.comments_path(), PathBuf::from("work/comments.jsonl"));
    }

    #[test]
    fn remote_backend_requires_base_url() {
        let config: RunConfig = toml::from_str("[backend]\nkind = \"remote\"").unwrap();
        assert!(config.validate().is_err());
        let config: RunConfig =
            toml::from_str("[backend]\nkind = \"remote\"\nbase_url = \"http://x\"").unwrap();
        config.validate().unwrap();
    }

    #[test]
    fn jsd_log_base_is_pinned() {
        let config: RunConfig = toml::from_str("jsd_log_base = 10.0").unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("nonsense_key = 1").is_err());
    }

    #[test]
    fn temporal_order_is_validated() {
        let config: RunConfig = toml::from_str(
            "[event]\nt = \"2024-11-05T00:00:00Z\"\nt_prime = \"2024-11-04T00:00:00Z\"",
        )
        .unwrap();
        assert!(config.validate().is_err());
    }
}
