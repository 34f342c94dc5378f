//! Stage implementations. Each command reads its declared inputs, writes
//! its declared outputs under the configured paths, and drops a manifest
//! beside them.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use senticast_core::baselines::{
    self, BaselineModel, DeGrootWeights, Dynamics, FolloweeGraph,
};
use senticast_core::corpus::{
    anonymize_event, build_ground_truth, ingest, select_users, write_corpus, Corpus, GroundTruth,
    IngestPaths,
};
use senticast_core::domain::{polarity_of, Polarity, SentimentScore, UserId};
use senticast_core::features::{extract_features, FeatureConfig, FeatureStore};
use senticast_core::finetune::{
    build_dataset, emit_jsonl, read_seeds, DatasetConfig, ReviewInput,
};
use senticast_core::gateway::{
    ChatBackend, Gateway, MockBackend, RemoteBackend, ReqwestTransport, RetryPolicy,
};
use senticast_core::io::write_jsonl;
use senticast_core::metrics::build_report;
use senticast_core::pipeline::{forecast_cohort, read_forecasts, write_forecasts, write_traces};
use senticast_core::sentiment::{label_corpus, Lexicon, RemoteScorer, SentimentScorer};
use senticast_core::synth::{synthesize, Timeline};

use crate::config::RunConfig;
use crate::manifest::ManifestBuilder;

fn ensure_out_dir(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir)
        .with_context(|| format!("cannot create {}", config.out_dir.display()))
}

fn require_stage_input(path: &Path, produced_by: &str) -> Result<()> {
    if !path.exists() {
        bail!(
            "{} is missing; run `senticast {produced_by}` first (or point the config at an \
             existing file)",
            path.display()
        );
    }
    Ok(())
}

fn load_corpus(config: &RunConfig, labeled: bool) -> Result<Corpus> {
    let comments = if labeled {
        let path = config.labeled_comments_path();
        require_stage_input(&path, "label")?;
        path
    } else {
        config.comments_path()
    };
    let paths = IngestPaths {
        users: config.users_path(),
        comments,
        events: config.events_path(),
    };
    let (corpus, report) = ingest(&paths, config.event.keywords.clone())?;
    let skipped =
        report.user_issues.len() + report.comment_issues.len() + report.event_issues.len();
    if skipped > 0 {
        log::warn!("ingest skipped {skipped} malformed lines");
    }
    Ok(corpus)
}

fn build_backend(config: &RunConfig) -> Result<Arc<dyn ChatBackend>> {
    match config.backend.kind.as_str() {
        "mock" => {
            let path = config.mock_script_path();
            require_stage_input(&path, "synth")?;
            Ok(Arc::new(MockBackend::load(&path)?))
        }
        _ => {
            let base_url = config
                .backend
                .base_url
                .clone()
                .ok_or_else(|| anyhow!("remote backend requires base_url"))?;
            let token = std::env::var(&config.backend.auth_env).ok();
            let transport =
                ReqwestTransport::new(Duration::from_secs(config.backend.timeout_secs))
                    .map_err(|e| anyhow!("http client: {e}"))?;
            Ok(Arc::new(RemoteBackend::new(
                Box::new(transport),
                base_url,
                token,
                RetryPolicy::default(),
            )))
        }
    }
}

fn build_scorer(config: &RunConfig) -> Result<Box<dyn SentimentScorer>> {
    match config.scorer.kind.as_str() {
        "lexicon" => {
            let path = config.lexicon_path();
            require_stage_input(&path, "synth")?;
            Ok(Box::new(Lexicon::load(&path)?))
        }
        _ => {
            let url =
                config.scorer.url.clone().ok_or_else(|| anyhow!("remote scorer requires url"))?;
            let token = std::env::var(&config.backend.auth_env).ok();
            let transport =
                ReqwestTransport::new(Duration::from_secs(config.backend.timeout_secs))
                    .map_err(|e| anyhow!("http client: {e}"))?;
            Ok(Box::new(RemoteScorer::new(
                Box::new(transport),
                url,
                token,
                RetryPolicy::default(),
            )))
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SelectedUsers {
    users: Vec<UserId>,
}

fn load_selected_users(config: &RunConfig) -> Result<Vec<UserId>> {
    let path = config.selected_users_path();
    require_stage_input(&path, "select")?;
    let raw = std::fs::read_to_string(&path)?;
    let selected: SelectedUsers = serde_json::from_str(&raw)
        .with_context(|| format!("cannot parse {}", path.display()))?;
    Ok(selected.users)
}

pub fn cmd_synth(config: &RunConfig, config_path: &Path) -> Result<()> {
    ensure_out_dir(config)?;
    let mut manifest =
        ManifestBuilder::start("synth", config_path, config.seed, &config.out_dir)?;
    let timeline = Timeline::hurricane(&config.event.name);
    let output = synthesize(
        config.synth.n_users,
        &timeline,
        config.synth.comments_per_phase,
        config.synth.include_drifting,
        config.seed,
    )?;

    let users = config.users_path();
    let comments = config.comments_path();
    let events = config.events_path();
    write_corpus(&output.corpus, &users, &comments, &events)?;
    let script = config.mock_script_path();
    write_jsonl(&script, &output.mock_script)?;
    let lexicon = config.lexicon_path();
    output.lexicon.write(&lexicon)?;

    for path in [&users, &comments, &events, &script, &lexicon] {
        manifest.output(path)?;
    }
    manifest.finish()?;
    println!(
        "synthesized {} users, {} comments, mock script with {} entries",
        output.corpus.user_count(),
        output.corpus.all_comments().count(),
        output.mock_script.len()
    );
    println!("forecast cutoff t = {}, target t' = {}", output.t, output.t_prime);
    Ok(())
}

pub fn cmd_ingest(config: &RunConfig, config_path: &Path) -> Result<()> {
    ensure_out_dir(config)?;
    let mut manifest =
        ManifestBuilder::start("ingest", config_path, config.seed, &config.out_dir)?;
    let paths = IngestPaths {
        users: config.users_path(),
        comments: config.comments_path(),
        events: config.events_path(),
    };
    for path in [&paths.users, &paths.comments, &paths.events] {
        manifest.input(path)?;
    }
    let (corpus, report) = ingest(&paths, config.event.keywords.clone())?;

    let report_path = config.ingest_report_path();
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    manifest.output(&report_path)?;

    if let Some(anon) = &config.anonymize {
        let shift = (anon.time_shift_hours != 0)
            .then(|| chrono::Duration::hours(anon.time_shift_hours));
        let anonymized = anonymize_event(&corpus, &anon.rename, shift);
        let dir = config.out_dir.join("anonymized");
        std::fs::create_dir_all(&dir)?;
        let users = dir.join("users.jsonl");
        let comments = dir.join("comments.jsonl");
        let events = dir.join("events.jsonl");
        write_corpus(&anonymized, &users, &comments, &events)?;
        for path in [&users, &comments, &events] {
            manifest.output(path)?;
        }
        println!("anonymized corpus written to {}", dir.display());
    }
    manifest.finish()?;
    println!(
        "ingested {} users, {} comments, {} events ({} lines skipped)",
        corpus.user_count(),
        corpus.all_comments().count(),
        corpus.events().len(),
        report.user_issues.len() + report.comment_issues.len() + report.event_issues.len(),
    );
    Ok(())
}

pub fn cmd_select(config: &RunConfig, config_path: &Path) -> Result<()> {
    ensure_out_dir(config)?;
    let mut manifest =
        ManifestBuilder::start("select", config_path, config.seed, &config.out_dir)?;
    manifest.input(&config.users_path())?;
    manifest.input(&config.comments_path())?;
    let corpus = load_corpus(config, false)?;
    let users = select_users(&corpus, &config.selection_criteria())?;
    let path = config.selected_users_path();
    std::fs::write(&path, serde_json::to_string_pretty(&SelectedUsers { users: users.clone() })?)?;
    manifest.output(&path)?;
    manifest.finish()?;
    println!("selected {} of {} users", users.len(), corpus.user_count());
    Ok(())
}

pub fn cmd_label(config: &RunConfig, config_path: &Path) -> Result<()> {
    ensure_out_dir(config)?;
    let mut manifest =
        ManifestBuilder::start("label", config_path, config.seed, &config.out_dir)?;
    manifest.input(&config.comments_path())?;
    let corpus = load_corpus(config, false)?;
    let scorer = build_scorer(config)?;
    let labeled = label_corpus(scorer.as_ref(), &corpus)?;

    // Only the comments file changes; users and events pass through.
    let tmp_users = config.out_dir.join(".label_users.jsonl");
    let tmp_events = config.out_dir.join(".label_events.jsonl");
    let labeled_path = config.labeled_comments_path();
    write_corpus(&labeled, &tmp_users, &labeled_path, &tmp_events)?;
    std::fs::remove_file(&tmp_users).ok();
    std::fs::remove_file(&tmp_events).ok();

    manifest.output(&labeled_path)?;
    manifest.finish()?;
    println!(
        "labeled {} comments into {}",
        labeled.all_comments().count(),
        labeled_path.display()
    );
    Ok(())
}

pub fn cmd_extract(config: &RunConfig, config_path: &Path) -> Result<()> {
    ensure_out_dir(config)?;
    let mut manifest =
        ManifestBuilder::start("extract", config_path, config.seed, &config.out_dir)?;
    manifest.input(&config.comments_path())?;
    let corpus = load_corpus(config, false)?;
    let selected = load_selected_users(config)?;
    let gateway = Gateway::new(build_backend(config)?, config.concurrency);

    let features_path = config.features_path();
    let mut store = if features_path.exists() {
        FeatureStore::load(&features_path)?
    } else {
        FeatureStore::new()
    };

    let t = config.event.t;
    let feature_config = FeatureConfig {
        model_tag: config.pipeline.subjective_model.clone(),
        temperature: config.pipeline.generation_temperature,
        max_tokens: config.pipeline.max_tokens,
        history_window: config.pipeline.history_window,
        event_name: Some(config.event.name.clone()),
        ..FeatureConfig::default()
    };
    let mut computed = 0usize;
    let mut cached = 0usize;
    for user_id in &selected {
        if store.get(user_id, t).is_some() {
            cached += 1;
            continue;
        }
        let user = corpus
            .user(user_id)
            .ok_or_else(|| anyhow!("selected user {user_id} not in corpus"))?;
        let persona = user.attributes.get("persona").map(|s| s.as_str());
        let history = corpus.comments_before(user_id, t)?;
        let events = corpus.events_until(t);
        let features = extract_features(&gateway, persona, history, events, &feature_config)
            .with_context(|| format!("feature extraction failed for {user_id}"))?;
        store.insert(user_id.clone(), t, features);
        computed += 1;
    }
    store.save(&features_path)?;
    manifest.output(&features_path)?;
    manifest.finish()?;
    println!("features ready for {} users ({computed} computed, {cached} cached)", selected.len());
    Ok(())
}

pub fn cmd_forecast(config: &RunConfig, config_path: &Path, trace: bool) -> Result<()> {
    ensure_out_dir(config)?;
    let mut manifest =
        ManifestBuilder::start("forecast", config_path, config.seed, &config.out_dir)?;
    manifest.input(&config.comments_path())?;
    let corpus = load_corpus(config, false)?;
    let selected = load_selected_users(config)?;

    let features_path = config.features_path();
    if !features_path.exists() {
        bail!(
            "features missing: {} does not exist; run `senticast extract` first",
            features_path.display()
        );
    }
    manifest.input(&features_path)?;
    let store = FeatureStore::load(&features_path)?;
    let features = store.at(config.event.t);

    let gateway = Gateway::new(build_backend(config)?, config.concurrency);
    let scorer = build_scorer(config)?;
    let cohort = forecast_cohort(
        &gateway,
        &corpus,
        scorer.as_ref(),
        &features,
        &selected,
        config.event.t,
        config.event.t_prime,
        &config.pipeline_config(),
        config.concurrency,
    )?;

    let forecasts_path = config.forecasts_path();
    write_forecasts(&cohort.results, &forecasts_path)?;
    manifest.output(&forecasts_path)?;

    let failures_path = config.failures_path();
    std::fs::write(&failures_path, serde_json::to_string_pretty(&cohort.failures)?)?;
    manifest.output(&failures_path)?;

    if trace {
        let trace_path = config.trace_path();
        write_traces(&cohort.results, &trace_path)?;
        manifest.output(&trace_path)?;
    }
    manifest.finish()?;
    println!(
        "forecast {} users ({} failures, coverage {:.3})",
        cohort.results.len(),
        cohort.failures.len(),
        cohort.coverage
    );
    print_distribution("sentiment", &cohort.sentiment_distribution.probabilities, &[
        "-2", "-1", "0", "+1", "+2",
    ]);
    print_distribution("polarity", &cohort.polarity_distribution.probabilities, &[
        "-1", "0", "+1",
    ]);
    Ok(())
}

fn print_distribution(name: &str, probabilities: &[f64], labels: &[&str]) {
    let cells: Vec<String> = labels
        .iter()
        .zip(probabilities)
        .map(|(label, p)| format!("{label}: {p:.3}"))
        .collect();
    println!("{name:>9}  {}", cells.join("  "));
}

pub fn cmd_baseline(config: &RunConfig, config_path: &Path, model: BaselineModel) -> Result<()> {
    ensure_out_dir(config)?;
    let name = match model {
        BaselineModel::Voter => "voter",
        BaselineModel::DeGroot => "degroot",
    };
    let mut manifest = ManifestBuilder::start(
        &format!("baseline_{name}"),
        config_path,
        config.seed,
        &config.out_dir,
    )?;
    manifest.input(&config.labeled_comments_path())?;
    let corpus = load_corpus(config, true)?;
    let selected = load_selected_users(config)?;

    let graph = FolloweeGraph::from_corpus(&corpus, &selected);
    let initial = baselines::init_state(&corpus, &selected, config.event.t, config.seed);
    let outcome = match model {
        BaselineModel::Voter => baselines::run(
            Dynamics::Voter { graph: &graph },
            initial,
            config.baseline.steps,
            None,
        )?,
        BaselineModel::DeGroot => {
            let weights = DeGrootWeights::from_graph(&graph, config.baseline.self_weight)?;
            baselines::run(
                Dynamics::DeGroot { weights: &weights },
                initial,
                config.baseline.steps,
                config.baseline.epsilon,
            )?
        }
    };

    let scores = baselines::categorical_scores(&outcome.state)?;
    let records: Vec<BaselineRecord> = outcome
        .state
        .opinions
        .keys()
        .zip(&scores)
        .map(|(user, score)| BaselineRecord {
            user_id: user.clone(),
            t_prime: config.event.t_prime,
            sentiment: *score,
            polarity: polarity_of(*score),
            model,
        })
        .collect();
    let path = config.out_dir.join(format!("baseline_{name}.jsonl"));
    write_jsonl(&path, &records)?;
    manifest.output(&path)?;
    manifest.finish()?;
    println!(
        "{name} baseline: {} users, {} steps taken",
        records.len(),
        outcome.steps_taken
    );
    print_distribution("sentiment", &outcome.sentiment_distribution.probabilities, &[
        "-2", "-1", "0", "+1", "+2",
    ]);
    Ok(())
}

/// Baseline output mirrors the forecast records' sentiment fields; there is
/// no generated comment and no tone/attitude for a dynamics model.
#[derive(Debug, Serialize, Deserialize)]
struct BaselineRecord {
    user_id: UserId,
    t_prime: chrono::DateTime<chrono::Utc>,
    sentiment: SentimentScore,
    polarity: Polarity,
    model: BaselineModel,
}

#[derive(Debug, Deserialize)]
struct PredictionRecord {
    user_id: UserId,
    sentiment: SentimentScore,
}

pub fn cmd_evaluate(
    config: &RunConfig,
    config_path: &Path,
    predictions: Option<&Path>,
) -> Result<()> {
    ensure_out_dir(config)?;
    let mut manifest =
        ManifestBuilder::start("evaluate", config_path, config.seed, &config.out_dir)?;
    let default_predictions = config.forecasts_path();
    let predictions_path = predictions.unwrap_or(&default_predictions);
    require_stage_input(predictions_path, "forecast")?;
    manifest.input(predictions_path)?;

    let corpus = load_corpus(config, true)?;
    let selected = load_selected_users(config)?;

    let rows: Vec<PredictionRecord> =
        senticast_core::io::read_jsonl_strict(predictions_path)?;
    let predictions_map: BTreeMap<UserId, SentimentScore> =
        rows.into_iter().map(|r| (r.user_id, r.sentiment)).collect();

    let truth = build_ground_truth(
        &corpus,
        &selected,
        config.event.t_prime,
        config.ground_truth_scheme(),
        config.event.window_hours,
    )?;
    let truth_path = config.ground_truth_path();
    truth.write(&truth_path)?;
    manifest.output(&truth_path)?;

    let locations: BTreeMap<UserId, senticast_core::domain::Location> = corpus
        .users()
        .filter_map(|u| u.location.clone().map(|l| (u.id.clone(), l)))
        .collect();
    let report = build_report(&predictions_map, &truth.entries, &locations, selected.len())?;

    let report_path = config.report_path();
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    manifest.output(&report_path)?;
    manifest.finish()?;

    println!(
        "evaluated {} users (coverage {:.3}): accuracy {:.4}, macro F1 {:.4}, \
         JSD sentiment {:.6}, JSD polarity {:.6}",
        report.n,
        report.coverage,
        report.accuracy,
        report.macro_f1,
        report.jsd_sentiment,
        report.jsd_polarity
    );
    let mut truth_scores: Vec<SentimentScore> = Vec::new();
    let mut pred_scores: Vec<SentimentScore> = Vec::new();
    for (user, score) in &truth.entries {
        if let Some(pred) = predictions_map.get(user) {
            truth_scores.push(*score);
            pred_scores.push(*pred);
        }
    }
    if let (Ok(t_dist), Ok(p_dist)) = (
        senticast_core::metrics::SentimentDistribution::from_scores(&truth_scores),
        senticast_core::metrics::SentimentDistribution::from_scores(&pred_scores),
    ) {
        print_distribution("forecast", &p_dist.probabilities, &["-2", "-1", "0", "+1", "+2"]);
        print_distribution("truth", &t_dist.probabilities, &["-2", "-1", "0", "+1", "+2"]);
    }
    for (group, figures) in &report.per_group {
        println!(
            "  group {group:<16} n={:<4} accuracy {:.4}  jsd {:.6}",
            figures.n, figures.accuracy, figures.jsd_sentiment
        );
    }
    Ok(())
}

pub fn cmd_build_finetune(config: &RunConfig, config_path: &Path) -> Result<()> {
    ensure_out_dir(config)?;
    let mut manifest =
        ManifestBuilder::start("build_finetune", config_path, config.seed, &config.out_dir)?;
    let seeds_path = config.seeds_path();
    require_stage_input(&seeds_path, "synth (or provide expert seeds)")?;
    manifest.input(&seeds_path)?;
    let seeds = read_seeds(&seeds_path)?;

    let forecasts_path = config.forecasts_path();
    require_stage_input(&forecasts_path, "forecast")?;
    manifest.input(&forecasts_path)?;
    let forecasts = read_forecasts(&forecasts_path)?;

    let corpus = load_corpus(config, false)?;
    let mut inputs = Vec::new();
    for record in &forecasts {
        let user = corpus
            .user(&record.user_id)
            .ok_or_else(|| anyhow!("forecast user {} not in corpus", record.user_id))?;
        let history = corpus
            .comments_before(&record.user_id, config.event.t)?
            .to_vec();
        inputs.push(ReviewInput {
            persona_key: user.attributes.get("persona").cloned(),
            tone: senticast_core::domain::ToneOfVoice::new(&record.tone)?,
            attitude: senticast_core::domain::Attitude::new(record.attitude.clone())?,
            history,
            candidate: record.comment.clone(),
        });
    }

    let gateway = Gateway::new(build_backend(config)?, config.concurrency);
    let dataset_config = DatasetConfig {
        target_count: config.finetune.target_count,
        max_consistent_fraction: config.finetune.max_consistent_fraction,
        shuffle_seed: config.seed,
        model_tag: config.pipeline.objective_model.clone(),
        temperature: config.pipeline.review_temperature,
        max_tokens: config.pipeline.max_tokens,
    };
    let (pairs, rejected) = build_dataset(&gateway, &seeds, &inputs, &dataset_config)?;

    let finetune_path = config.finetune_path();
    emit_jsonl(&pairs, &finetune_path)?;
    manifest.output(&finetune_path)?;
    let rejects_path = config.finetune_rejects_path();
    std::fs::write(&rejects_path, serde_json::to_string_pretty(&rejected)?)?;
    manifest.output(&rejects_path)?;
    manifest.finish()?;
    println!("built {} review pairs ({} rejected)", pairs.len(), rejected.len());
    Ok(())
}

/// Ground-truth construction exposed for scripted use; evaluate calls this
/// internally.
pub fn ground_truth_for(config: &RunConfig) -> Result<GroundTruth> {
    let corpus = load_corpus(config, true)?;
    let selected = load_selected_users(config)?;
    Ok(build_ground_truth(
        &corpus,
        &selected,
        config.event.t_prime,
        config.ground_truth_scheme(),
        config.event.window_hours,
    )?)
}
