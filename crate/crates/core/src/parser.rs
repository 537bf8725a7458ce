//! Pulls `{"score": [...], "reasoning": "..."}` out of free-form model replies.
//!
//! Parsing never fails outward: refusals become `Dropped`, anything that does
//! not yield an in-range score list of the expected length becomes
//! `PenaltyFilled` with seeded uniform integers in 0..=10.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::backend::{RawReply, ReplyStatus};
use crate::task::AspectKind;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("no brace-delimited block in reply")]
    NoBlock,
    #[error("block has no \"score\" field")]
    MissingScore,
    #[error("expected {expected} sub-score(s), found {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("score {0} is outside [0, 10]")]
    OutOfRange(f64),
    #[error("score entry `{0}` is not numeric")]
    NotNumeric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Parsed,
    PenaltyFilled,
    Dropped,
}

impl ParseStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseStatus::Parsed => "parsed",
            ParseStatus::PenaltyFilled => "penalty_filled",
            ParseStatus::Dropped => "dropped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedRating {
    pub instance_id: String,
    pub aspect: AspectKind,
    pub sub_scores: Vec<f64>,
    pub rationale: String,
    pub status: ParseStatus,
    /// The brace block the scores were read from, if any.
    pub raw_excerpt: String,
    /// Why the reply was dropped or penalty-filled.
    pub failure: Option<String>,
}

/// First balanced `{...}` block in the reply. Code fences and surrounding
/// prose are skipped; braces inside JSON strings do not count.
pub fn extract_candidate_block(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut search_from = 0;
    while let Some(rel) = text[search_from..].find('{') {
        let start = search_from + rel;
        if let Some(end) = balanced_end(bytes, start) {
            return Some(&text[start..=end]);
        }
        search_from = start + 1;
    }
    None
}

fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            b'`' if bytes[i..].starts_with(b"```") => return None,
            _ => {}
        }
    }
    None
}

fn trailing_comma() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r",\s*([}\]])").unwrap())
}

fn score_field() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?is)["']?\bscore["']?\s*[:=]\s*(\[[^\]]*\]|[^,}\s]+)"#).unwrap())
}

fn reasoning_field() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?is)["']?\breasoning["']?\s*[:=]\s*"((?:[^"\\]|\\.)*)""#).unwrap())
}

/// Strict JSON first, then common repairs (trailing commas, curly or single quotes).
fn parse_json_lenient(block: &str) -> Option<Value> {
    if let Ok(v) = serde_json::from_str(block) {
        return Some(v);
    }
    let mut repaired = block.replace(['\u{201c}', '\u{201d}'], "\"");
    if !repaired.contains('"') {
        repaired = repaired.replace('\'', "\"");
    }
    let repaired = trailing_comma().replace_all(&repaired, "$1");
    serde_json::from_str(&repaired).ok()
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, name: &str) -> Option<&'a Value> {
    obj.get(name)
        .or_else(|| obj.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v))
}

fn number(v: &Value) -> Result<f64, ParseError> {
    let n = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    match n {
        Some(x) if x.is_finite() => Ok(x),
        _ => Err(ParseError::NotNumeric(v.to_string())),
    }
}

fn number_token(tok: &str) -> Result<f64, ParseError> {
    let t = tok.trim().trim_matches(|c| c == '"' || c == '\'');
    match t.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(ParseError::NotNumeric(tok.trim().to_string())),
    }
}

enum RawScores {
    Scalar(f64),
    List(Vec<f64>),
}

fn scores_from_json(obj: &serde_json::Map<String, Value>) -> Result<RawScores, ParseError> {
    match field(obj, "score").ok_or(ParseError::MissingScore)? {
        Value::Array(items) => Ok(RawScores::List(items.iter().map(number).collect::<Result<_, _>>()?)),
        other => Ok(RawScores::Scalar(number(other)?)),
    }
}

fn scores_from_regex(block: &str) -> Result<RawScores, ParseError> {
    let caps = score_field().captures(block).ok_or(ParseError::MissingScore)?;
    let raw = caps.get(1).map_or("", |m| m.as_str());
    if let Some(inner) = raw.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        let items: Vec<&str> = inner.split(',').filter(|s| !s.trim().is_empty()).collect();
        Ok(RawScores::List(items.into_iter().map(number_token).collect::<Result<_, _>>()?))
    } else {
        Ok(RawScores::Scalar(number_token(raw)?))
    }
}

fn unescape(s: &str) -> String {
    serde_json::from_str::<String>(&format!("\"{s}\"")).unwrap_or_else(|_| s.to_string())
}

/// Reads the score list and reasoning. A bare number is accepted when one
/// sub-score is expected. Values outside [0, 10] are errors, not clamped.
pub fn parse_scores(text: &str, expected_arity: usize) -> Result<(Vec<f64>, String), ParseError> {
    let block = extract_candidate_block(text).ok_or(ParseError::NoBlock)?;
    let (raw, rationale) = match parse_json_lenient(block) {
        Some(Value::Object(obj)) => {
            let rationale = match field(&obj, "reasoning") {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Null) | None => String::new(),
                Some(other) => other.to_string(),
            };
            (scores_from_json(&obj)?, rationale)
        }
        _ => {
            let rationale = reasoning_field()
                .captures(block)
                .and_then(|c| c.get(1))
                .map(|m| unescape(m.as_str()))
                .unwrap_or_default();
            (scores_from_regex(block)?, rationale)
        }
    };
    let scores = match raw {
        RawScores::Scalar(v) if expected_arity == 1 => vec![v],
        RawScores::Scalar(_) => {
            return Err(ParseError::ArityMismatch {
                expected: expected_arity,
                found: 1,
            })
        }
        RawScores::List(v) => v,
    };
    if scores.len() != expected_arity {
        return Err(ParseError::ArityMismatch {
            expected: expected_arity,
            found: scores.len(),
        });
    }
    if let Some(bad) = scores.iter().find(|v| !(0.0..=10.0).contains(*v)) {
        return Err(ParseError::OutOfRange(*bad));
    }
    Ok((scores, rationale))
}

/// Seeded uniform integers in 0..=10, one per expected sub-score. The
/// stream depends only on (seed, instance, aspect).
pub fn penalty_fill(expected_arity: usize, seed: u64, instance_id: &str, aspect: AspectKind) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(b"penalty-fill\0");
    h.update(seed.to_le_bytes());
    h.update((instance_id.len() as u64).to_le_bytes());
    h.update(instance_id.as_bytes());
    h.update(aspect.as_str().as_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    (0..expected_arity).map(|_| f64::from(rng.random_range(0u8..=10))).collect()
}

/// Turns any reply into a rating.
pub fn parse_reply(reply: &RawReply, expected_arity: usize, seed: u64) -> ParsedRating {
    let mut rating = ParsedRating {
        instance_id: reply.instance_id.clone(),
        aspect: reply.aspect,
        sub_scores: Vec::new(),
        rationale: String::new(),
        status: ParseStatus::Dropped,
        raw_excerpt: extract_candidate_block(&reply.text).unwrap_or_default().to_string(),
        failure: None,
    };
    if reply.status == ReplyStatus::Refused {
        rating.failure = Some("refused".to_string());
        return rating;
    }
    match parse_scores(&reply.text, expected_arity) {
        Ok((scores, rationale)) => {
            rating.sub_scores = scores;
            rating.rationale = rationale;
            rating.status = ParseStatus::Parsed;
        }
        Err(e) => {
            rating.sub_scores = penalty_fill(expected_arity, seed, &reply.instance_id, reply.aspect);
            rating.status = ParseStatus::PenaltyFilled;
            rating.failure = Some(e.to_string());
        }
    }
    rating
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reply(text: &str, status: ReplyStatus) -> RawReply {
        RawReply {
            instance_id: "uid7".into(),
            aspect: AspectKind::Sc,
            text: text.into(),
            status,
            request_fingerprint: String::new(),
            latency_ms: 0,
        }
    }

    #[test]
    fn extracts_from_prose() {
        assert_eq!(
            extract_candidate_block(r#"Sure! {"score": [7], "reasoning": "good"}"#),
            Some(r#"{"score": [7], "reasoning": "good"}"#)
        );
        assert_eq!(extract_candidate_block("no braces here"), None);
    }

    #[test]
    fn extracts_inside_fences() {
        let text = "Here you go:\n```json\n{\"score\": [4, 6],\n \"reasoning\": \"ok\"}\n```\nThanks";
        assert_eq!(
            extract_candidate_block(text),
            Some("{\"score\": [4, 6],\n \"reasoning\": \"ok\"}")
        );
    }

    #[test]
    fn braces_in_strings_are_ignored() {
        let text = r#"{"score": [5], "reasoning": "the {left} brace }"} tail"#;
        assert_eq!(extract_candidate_block(text), Some(&text[..text.len() - 5]));
    }

    #[test]
    fn unbalanced_prefix_is_skipped() {
        let text = r#"Note { unfinished ``` {"score": [3]}"#;
        assert_eq!(extract_candidate_block(text), Some(r#"{"score": [3]}"#));
    }

    #[test]
    fn conforming_reply() {
        assert_eq!(
            parse_scores(r#"{"score":[6,9],"reasoning":"minor artifacts"}"#, 2).unwrap(),
            (vec![6.0, 9.0], "minor artifacts".to_string())
        );
        assert_eq!(parse_scores(r#"{"score":[0,0]}"#, 2).unwrap(), (vec![0.0, 0.0], String::new()));
    }

    #[test]
    fn failures() {
        assert_eq!(parse_scores(r#"{"score":[15],"reasoning":"x"}"#, 1), Err(ParseError::OutOfRange(15.0)));
        assert_eq!(
            parse_scores(r#"{"score":[1,2,3]}"#, 2),
            Err(ParseError::ArityMismatch { expected: 2, found: 3 })
        );
        assert_eq!(
            parse_scores(r#"{"score":7}"#, 2),
            Err(ParseError::ArityMismatch { expected: 2, found: 1 })
        );
        assert!(matches!(parse_scores(r#"{"score":["high", 3]}"#, 2), Err(ParseError::NotNumeric(_))));
        assert_eq!(parse_scores(r#"{"reasoning":"x"}"#, 1), Err(ParseError::MissingScore));
        assert_eq!(parse_scores("", 1), Err(ParseError::NoBlock));
    }

    #[test]
    fn lenient_forms() {
        assert_eq!(parse_scores(r#"{"score": 7.5, "reasoning": "r"}"#, 1).unwrap().0, vec![7.5]);
        assert_eq!(parse_scores(r#"{"score": [7, 8,], "reasoning": "r",}"#, 2).unwrap().0, vec![7.0, 8.0]);
        assert_eq!(
            parse_scores("{'score': [3, 4], 'reasoning': 'single quoted'}", 2).unwrap(),
            (vec![3.0, 4.0], "single quoted".to_string())
        );
        assert_eq!(parse_scores(r#"{"Score": ["8", "9"]}"#, 2).unwrap().0, vec![8.0, 9.0]);
        // Not JSON at all but the fields are recognisable.
        assert_eq!(
            parse_scores(r#"{score: [2, 5], reasoning: "it \"works\""}"#, 2).unwrap(),
            (vec![2.0, 5.0], "it \"works\"".to_string())
        );
    }

    #[test]
    fn penalty_is_deterministic() {
        let a = penalty_fill(2, 42, "uid7", AspectKind::Sc);
        assert_eq!(a, penalty_fill(2, 42, "uid7", AspectKind::Sc));
        assert_eq!(a.len(), 2);
        assert_ne!(
            (0..20).map(|s| penalty_fill(3, s, "uid7", AspectKind::Sc)).collect::<Vec<_>>(),
            (0..20).map(|s| penalty_fill(3, s, "uid7", AspectKind::Pq)).collect::<Vec<_>>()
        );
        let single = penalty_fill(1, 99, "x", AspectKind::Pq);
        assert_eq!(single.len(), 1);
        assert!((0.0..=10.0).contains(&single[0]));
    }

    #[test]
    fn penalty_is_uniform() {
        const DRAWS: usize = 100_000;
        let mut counts = [0usize; 11];
        for i in 0..DRAWS {
            let v = penalty_fill(1, 7, &format!("uid{i}"), AspectKind::Sc)[0];
            counts[v as usize] += 1;
        }
        let p = 1.0 / 11.0;
        let sigma = (p * (1.0 - p) / DRAWS as f64).sqrt();
        for (value, c) in counts.iter().enumerate() {
            let freq = *c as f64 / DRAWS as f64;
            assert!((freq - p).abs() <= 3.0 * sigma, "value {value}: freq {freq}");
        }
        let expected = DRAWS as f64 * p;
        let chi2: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
        // 99.9th percentile of chi-square with 10 degrees of freedom.
        assert!(chi2 < 29.59, "chi2 = {chi2}");
    }

    #[test]
    fn parse_reply_statuses() {
        let refused = parse_reply(
            &reply("I am sorry, but I cannot process these images as they contain real people.", ReplyStatus::Refused),
            1,
            0,
        );
        assert_eq!(refused.status, ParseStatus::Dropped);
        assert!(refused.sub_scores.is_empty());

        let ok = parse_reply(&reply(r#"{"score": [9], "reasoning": "fine"}"#, ReplyStatus::Ok), 1, 0);
        assert_eq!(ok.status, ParseStatus::Parsed);
        assert_eq!(ok.sub_scores, vec![9.0]);
        assert_eq!(ok.rationale, "fine");

        let junk = reply("asdf qwerty", ReplyStatus::Ok);
        let g1 = parse_reply(&junk, 2, 42);
        assert_eq!(g1.status, ParseStatus::PenaltyFilled);
        assert_eq!(g1.sub_scores, penalty_fill(2, 42, "uid7", AspectKind::Sc));
        assert_eq!(g1, parse_reply(&junk, 2, 42));
    }

    proptest! {
        #[test]
        fn parse_reply_is_total_and_in_range(text in ".{0,200}", arity in 1usize..4, seed in any::<u64>()) {
            let r = parse_reply(&reply(&text, ReplyStatus::Ok), arity, seed);
            prop_assert_ne!(r.status, ParseStatus::Dropped);
            prop_assert_eq!(r.sub_scores.len(), arity);
            prop_assert!(r.sub_scores.iter().all(|v| (0.0..=10.0).contains(v)));
            prop_assert_eq!(&r, &parse_reply(&reply(&text, ReplyStatus::Ok), arity, seed));
        }

        #[test]
        fn well_formed_replies_round_trip(scores in prop::collection::vec(0u8..=10, 1..4), why in "[a-z ]{0,30}") {
            let text = serde_json::json!({"score": scores, "reasoning": why}).to_string();
            let (parsed, rationale) = parse_scores(&format!("Result:\n{text}\n"), scores.len()).unwrap();
            prop_assert_eq!(parsed, scores.iter().map(|v| f64::from(*v)).collect::<Vec<_>>());
            prop_assert_eq!(rationale, why);
        }
    }
}
