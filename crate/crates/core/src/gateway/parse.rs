//! Strict parsers for model output: tone triples and review verdicts.
//! Models that cannot follow the format get one retry upstream, then the
//! failure surfaces; nothing is silently defaulted.

use super::{GatewayError, Verdict};
use crate::domain::ToneOfVoice;

/// Parses "three descriptive adjectives" output: splits on commas and
/// newlines, trims whitespace and edge punctuation, lowercases, and accepts
/// exactly three tokens.
pub fn parse_tone(text: &str) -> Result<ToneOfVoice, GatewayError> {
    let tokens: Vec<String> = text
        .split(|c| c == ',' || c == '\n')
        .map(|piece| {
            piece
                .trim()
                .trim_matches(|c: char| c.is_ascii_punctuation())
                .trim()
                .to_string()
        })
        .filter(|piece| !piece.is_empty())
        .collect();
    if tokens.len() != 3 {
        return Err(GatewayError::BadTone(format!(
            "expected 3 adjectives, found {} in {text:?}",
            tokens.len()
        )));
    }
    ToneOfVoice::new(&tokens).map_err(|e| GatewayError::BadTone(e.to_string()))
}

/// Parses a review: the first non-blank line must be exactly CONSISTENT or
/// INCONSISTENT (case-insensitive); everything after it is the analysis,
/// which must be non-blank.
pub fn parse_verdict(text: &str) -> Result<Verdict, GatewayError> {
    let mut lines = text.lines();
    let verdict_line = loop {
        match lines.next() {
            Some(line) if line.trim().is_empty() => continue,
            Some(line) => break line.trim(),
            None => return Err(GatewayError::BadVerdict("empty output".into())),
        }
    };
    let consistent = if verdict_line.eq_ignore_ascii_case("consistent") {
        true
    } else if verdict_line.eq_ignore_ascii_case("inconsistent") {
        false
    } else {
        return Err(GatewayError::BadVerdict(format!(
            "first line must be CONSISTENT or INCONSISTENT, got {verdict_line:?}"
        )));
    };
    let analysis = lines.collect::<Vec<_>>().join("\n").trim().to_string();
    if analysis.is_empty() {
        return Err(GatewayError::BadVerdict("verdict has no analysis".into()));
    }
    Ok(Verdict { consistent, analysis })
}
