//! Builds the objective-reviewer fine-tuning dataset: expands seed expert
//! consistency analyses into prompt/completion review pairs via the gateway
//! and emits training JSONL for an external trainer. No training happens
//! here; the artifact's contribution ends at the dataset file.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Attitude, Comment, DomainError, ToneOfVoice};
use crate::gateway::{
    parse_verdict, render_prompt, ChatRequest, Gateway, GatewayError, InstructionKind,
    PromptBundle,
};
use crate::io::{read_jsonl_strict, write_jsonl, IoError};

#[derive(Debug, thiserror::Error)]
pub enum FinetuneError {
    #[error("at least one expert seed is required")]
    NoSeeds,
    #[error("at least one review input is required")]
    NoInputs,
    #[error("no valid review pairs were produced ({rejected} rejected)")]
    NoValidPairs { rejected: usize },
    #[error("cannot emit an empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// One expert-annotated review: the raw material for few-shot exemplars.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpertSeed {
    /// Short excerpt of the user history the expert saw.
    pub history: String,
    pub tone: [String; 3],
    pub attitude: String,
    /// The generated comment the expert judged.
    pub comment: String,
    /// true = consistent.
    pub verdict: bool,
    pub analysis: String,
}

impl ExpertSeed {
    fn verdict_line(&self) -> &'static str {
        if self.verdict {
            "CONSISTENT"
        } else {
            "INCONSISTENT"
        }
    }
}

pub fn read_seeds(path: &Path) -> Result<Vec<ExpertSeed>, FinetuneError> {
    Ok(read_jsonl_strict(path)?)
}

/// One review task to expand into a training pair.
#[derive(Debug, Clone)]
pub struct ReviewInput {
    pub persona_key: Option<String>,
    pub tone: ToneOfVoice,
    pub attitude: Attitude,
    pub history: Vec<Comment>,
    pub candidate: String,
}

/// A training pair; the completion always re-parses as a verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewPair {
    pub prompt: String,
    pub completion: String,
}

/// A rejected completion and why.
#[derive(Debug, Clone, Serialize)]
pub struct RejectedPair {
    pub input_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub target_count: usize,
    /// Cap on the consistent share of the dataset, enforced by rejecting
    /// surplus consistent pairs.
    pub max_consistent_fraction: f64,
    pub shuffle_seed: u64,
    pub model_tag: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            target_count: 100,
            max_consistent_fraction: 0.7,
            shuffle_seed: 0,
            model_tag: "objective".into(),
            temperature: 0.0,
            max_tokens: 256,
        }
    }
}

fn few_shot_block(seeds: &[ExpertSeed]) -> String {
    let mut out = String::from(
        "Expert-annotated examples of consistency reviews, in the exact output format:\n\n",
    );
    for (i, seed) in seeds.iter().enumerate() {
        let _ = write!(
            out,
            "--- Example {} ---\nUser history excerpt: {}\nTone of voice: {}\nAttitude: {}\n\
             Comment under review: {}\n{}\n{}\n\n",
            i + 1,
            seed.history,
            seed.tone.join(", "),
            seed.attitude,
            seed.comment,
            seed.verdict_line(),
            seed.analysis
        );
    }
    out
}

/// Renders the full training prompt for one input: few-shot expert
/// exemplars followed by the objective-review instruction.
pub fn render_review_prompt(
    seeds: &[ExpertSeed],
    input: &ReviewInput,
) -> Result<String, FinetuneError> {
    let mut bundle = PromptBundle::new()
        .tone(input.tone.clone())
        .attitude(input.attitude.clone())
        .comments(input.history.clone())
        .candidate(input.candidate.clone());
    if let Some(key) = &input.persona_key {
        bundle = bundle.persona_key(key.clone());
    }
    let instruction = render_prompt(InstructionKind::ObjectiveReview, &bundle)?;
    Ok(format!("{}{}", few_shot_block(seeds), instruction.rendered_text))
}

/// Expands inputs into validated review pairs: one completion per input,
/// kept only when it parses as a verdict and fits the class-balance cap,
/// until `target_count` pairs exist or inputs run out. The output order is
/// a fixed-seed shuffle, so reruns are byte-identical.
pub fn build_dataset(
    gateway: &Gateway,
    seeds: &[ExpertSeed],
    inputs: &[ReviewInput],
    config: &DatasetConfig,
) -> Result<(Vec<ReviewPair>, Vec<RejectedPair>), FinetuneError> {
    if seeds.is_empty() {
        return Err(FinetuneError::NoSeeds);
    }
    if inputs.is_empty() {
        return Err(FinetuneError::NoInputs);
    }
    let max_consistent =
        (config.max_consistent_fraction * config.target_count as f64).ceil() as usize;

    let mut pairs = Vec::new();
    let mut rejected = Vec::new();
    let mut consistent_count = 0usize;
    for (index, input) in inputs.iter().enumerate() {
        if pairs.len() >= config.target_count {
            break;
        }
        let prompt = render_review_prompt(seeds, input)?;
        let request = ChatRequest::single_turn(
            "",
            prompt.clone(),
            config.temperature,
            config.max_tokens,
            config.model_tag.clone(),
            None,
        )?;
        let completion = match gateway.complete(&request) {
            Ok(response) => response.text,
            Err(e) => {
                rejected.push(RejectedPair { input_index: index, reason: e.to_string() });
                continue;
            }
        };
        match parse_verdict(&completion) {
            Ok(verdict) => {
                if verdict.consistent && consistent_count >= max_consistent {
                    rejected.push(RejectedPair {
                        input_index: index,
                        reason: "consistent-class budget exhausted".into(),
                    });
                    continue;
                }
                if verdict.consistent {
                    consistent_count += 1;
                }
                pairs.push(ReviewPair { prompt, completion });
            }
            Err(e) => {
                rejected.push(RejectedPair { input_index: index, reason: e.to_string() })
            }
        }
    }
    if pairs.is_empty() {
        return Err(FinetuneError::NoValidPairs { rejected: rejected.len() });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.shuffle_seed);
    pairs.shuffle(&mut rng);
    Ok((pairs, rejected))
}

/// Writes `{"prompt", "completion"}` lines, UTF-8, LF endings.
pub fn emit_jsonl(pairs: &[ReviewPair], path: &Path) -> Result<(), FinetuneError> {
    if pairs.is_empty() {
        return Err(FinetuneError::EmptyDataset);
    }
    write_jsonl(path, pairs)?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<ReviewPair>, FinetuneError> {
    Ok(read_jsonl_strict(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::UserId;
    use crate::gateway::{MockBackend, MockScriptEntry};
    use chrono::TimeZone;
    use std::sync::Arc;

    fn seed(verdict: bool) -> ExpertSeed {
        ExpertSeed {
            history: "short excerpt".into(),
            tone: ["calm".into(), "dry".into(), "wry".into()],
            attitude: "steady".into(),
            comment: "sample comment".into(),
            verdict,
            analysis: "Tone holds; stance unchanged.".into(),
        }
    }

    fn input(persona: &str) -> ReviewInput {
        let t = chrono::Utc.with_ymd_and_hms(2024, 10, 20, 0, 0, 0).unwrap();
        ReviewInput {
            persona_key: Some(persona.into()),
            tone: ToneOfVoice::new(&["calm", "dry", "wry"]).unwrap(),
            attitude: Attitude::new("steady").unwrap(),
            history: vec![Comment::new(UserId::new("u").unwrap(), t, "old post", None).unwrap()],
            candidate: "new draft".into(),
        }
    }

    fn gateway_with(entries: Vec<MockScriptEntry>) -> Gateway {
        Gateway::new(Arc::new(MockBackend::from_entries(entries)), 4)
    }

    fn review_entry(persona: &str, response: &str) -> MockScriptEntry {
        MockScriptEntry {
            kind: InstructionKind::ObjectiveReview,
            persona: persona.into(),
            response: response.into(),
        }
    }

    #[test]
    fn happy_path_produces_one_pair_per_input() {
        let gateway = gateway_with(vec![
            review_entry("a", "CONSISTENT\nHolds the voice."),
            review_entry("b", "INCONSISTENT\nDrifts florid."),
        ]);
        let (pairs, rejected) = build_dataset(
            &gateway,
            &[seed(true)],
            &[input("a"), input("b")],
            &DatasetConfig::default(),
        )
        .unwrap();
        assert_eq!(pairs.len(), 2);
        assert!(rejected.is_empty());
        for pair in &pairs {
            assert!(parse_verdict(&pair.completion).is_ok());
            assert!(pair.prompt.contains("Example 1"));
        }
    }

    #[test]
    fn invalid_completions_are_rejected_and_logged() {
        let gateway = gateway_with(vec![
            review_entry("a", "MAYBE\nnot a verdict"),
            review_entry("b", "CONSISTENT\nFine."),
        ]);
        let (pairs, rejected) = build_dataset(
            &gateway,
            &[seed(true)],
            &[input("a"), input("b")],
            &DatasetConfig::default(),
        )
        .unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(rejected.len(), 1);
        assert_eq!(rejected[0].input_index, 0);
    }

    #[test]
    fn target_count_caps_the_dataset() {
        let entries: Vec<MockScriptEntry> = (0..10)
            .map(|i| review_entry(&format!("p{i}"), "INCONSISTENT\nDrifts."))
            .collect();
        let gateway = gateway_with(entries);
        let inputs: Vec<ReviewInput> = (0..10).map(|i| input(&format!("p{i}"))).collect();
        let config = DatasetConfig { target_count: 1, ..DatasetConfig::default() };
        let (pairs, _) = build_dataset(&gateway, &[seed(false)], &inputs, &config).unwrap();
        assert_eq!(pairs.len(), 1);
    }

    #[test]
    fn consistent_share_is_capped() {
        let entries: Vec<MockScriptEntry> = (0..10)
            .map(|i| review_entry(&format!("p{i}"), "CONSISTENT\nFine."))
            .collect();
        let gateway = gateway_with(entries);
        let inputs: Vec<ReviewInput> = (0..10).map(|i| input(&format!("p{i}"))).collect();
        let config = DatasetConfig {
            target_count: 10,
            max_consistent_fraction: 0.5,
            ..DatasetConfig::default()
        };
        let (pairs, rejected) = build_dataset(&gateway, &[seed(true)], &inputs, &config).unwrap();
        assert_eq!(pairs.len(), 5);
        assert_eq!(rejected.len(), 5);
        assert!(rejected.iter().all(|r| r.reason.contains("budget")));
    }

    #[test]
    fn zero_valid_pairs_is_an_error() {
        let gateway = gateway_with(vec![review_entry("a", "nonsense")]);
        let err = build_dataset(
            &gateway,
            &[seed(true)],
            &[input("a")],
            &DatasetConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, FinetuneError::NoValidPairs { rejected: 1 }));
        assert!(build_dataset(&gateway, &[], &[input("a")], &DatasetConfig::default()).is_err());
        assert!(build_dataset(&gateway, &[seed(true)], &[], &DatasetConfig::default()).is_err());
    }

    #[test]
    fn emission_is_deterministic_under_a_fixed_seed() {
        let dir = tempfile::tempdir().unwrap();
        let make = || {
            let entries: Vec<MockScriptEntry> = (0..6)
                .map(|i| {
                    let verdict =
                        if i % 2 == 0 { "CONSISTENT\nFine." } else { "INCONSISTENT\nDrifts." };
                    review_entry(&format!("p{i}"), verdict)
                })
                .collect();
            let gateway = gateway_with(entries);
            let inputs: Vec<ReviewInput> = (0..6).map(|i| input(&format!("p{i}"))).collect();
            let config = DatasetConfig { shuffle_seed: 99, ..DatasetConfig::default() };
            build_dataset(&gateway, &[seed(true), seed(false)], &inputs, &config).unwrap().0
        };
        let first = make();
        let second = make();
        assert_eq!(first, second);

        let path_a = dir.path().join("a.jsonl");
        let path_b = dir.path().join("b.jsonl");
        emit_jsonl(&first, &path_a).unwrap();
        emit_jsonl(&second, &path_b).unwrap();
        assert_eq!(std::fs::read(&path_a).unwrap(), std::fs::read(&path_b).unwrap());

        let back = read_pairs(&path_a).unwrap();
        assert_eq!(back, first);
        assert_eq!(std::fs::read_to_string(&path_a).unwrap().lines().count(), 6);
    }

    #[test]
    fn emit_rejects_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            emit_jsonl(&[], &dir.path().join("x.jsonl")),
            Err(FinetuneError::EmptyDataset)
        ));
    }

    #[test]
    fn seeds_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seeds.jsonl");
        let seeds = vec![seed(true), seed(false)];
        write_jsonl(&path, &seeds).unwrap();
        let back = read_seeds(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back[0].verdict);
        assert!(!back[1].verdict);
    }
}
