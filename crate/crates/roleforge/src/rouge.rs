//! Rouge-L overlap scoring built from scratch: tokenization, longest
//! common subsequence by dynamic programming, and corpus-level reporting.
//!
//! For token sequences `ref` and `cand` with `lcs` their LCS length:
//!
//! ```text
//! R = lcs / |ref|        P = lcs / |cand|
//! F = (1 + beta^2) * R * P / (R + beta^2 * P)
//! ```
//!
//! with zero substituted when a denominator is zero. `beta` weighs recall
//! over precision; reports carry it so numbers are self-describing.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Benchmark;

#[derive(Debug, Error)]
pub enum RougeError {
    #[error("no prediction for benchmark question `{0}`")]
    MissingPrediction(String),
    #[error("cannot merge reports with differing settings: beta {0} vs {1}")]
    MixedBeta(f64, f64),
    #[error("cannot merge reports with differing token modes: {0} vs {1}")]
    MixedMode(TokenMode, TokenMode),
    #[error("model `{0}` appears in more than one report")]
    DuplicateModel(String),
}

/// Tokenization scheme. `Mixed` is the default: CJK codepoints become
/// single-char tokens while other runs split on whitespace, which handles
/// dialogue that mixes scripts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TokenMode {
    Word,
    CjkChar,
    #[default]
    Mixed,
}

impl TokenMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenMode::Word => "word",
            TokenMode::CjkChar => "cjk_char",
            TokenMode::Mixed => "mixed",
        }
    }
}

impl fmt::Display for TokenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TokenMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "word" => Ok(TokenMode::Word),
            "cjk_char" | "cjk-char" => Ok(TokenMode::CjkChar),
            "mixed" => Ok(TokenMode::Mixed),
            other => Err(format!(
                "unknown token mode `{other}` (expected word|cjk_char|mixed)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub mode: TokenMode,
}

/// Scores for one candidate/reference pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub lcs: usize,
    pub recall: f64,
    pub precision: f64,
    pub f: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub question_id: String,
    #[serde(flatten)]
    pub score: RougeScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model_id: String,
    /// Mean F over the benchmark, times 100, rounded half-up to 4 places.
    pub mean_f_x100: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RougeReport {
    pub beta: f64,
    pub mode: TokenMode,
    pub rows: Vec<ModelRow>,
    pub pair_scores: BTreeMap<String, Vec<PairScore>>,
}

impl RougeReport {
    /// Combines single-model reports into one table, preserving row order.
    pub fn merge(reports: Vec<RougeReport>) -> Result<RougeReport, RougeError> {
        let mut iter = reports.into_iter();
        let mut merged = match iter.next() {
            Some(first) => first,
            None => {
                return Ok(RougeReport {
                    beta: DEFAULT_BETA,
                    mode: TokenMode::default(),
                    rows: Vec::new(),
                    pair_scores: BTreeMap::new(),
                })
            }
        };
        for report in iter {
            if report.beta != merged.beta {
                return Err(RougeError::MixedBeta(merged.beta, report.beta));
            }
            if report.mode != merged.mode {
                return Err(RougeError::MixedMode(merged.mode, report.mode));
            }
            for row in report.rows {
                if merged.rows.iter().any(|r| r.model_id == row.model_id) {
                    return Err(RougeError::DuplicateModel(row.model_id));
                }
                merged.rows.push(row);
            }
            merged.pair_scores.extend(report.pair_scores);
        }
        Ok(merged)
    }
}

pub const DEFAULT_BETA: f64 = 1.2;

///// CJK scripts whose codepoints tokenize as single characters: unified
/// ideographs (with extensions A and B..F ranges in the supplementary
/// plane), compatibility ideographs, kana, and hangul syllables.
fn is_cjk(c: char) -> bool {
    matches!(u32::from(c),
        0x4E00..=0x9FFF
            | 0x3400..=0x4DBF
            | 0x20000..=0x2A6DF
            | 0x2A700..=0x2EBEF
            | 0xF900..=0xFAFF
            | 0x3040..=0x309F
            | 0x30A0..=0x30FF
            | 0xAC00..=0xD7AF)
}

/// Splits text into tokens per `mode`. Non-CJK word tokens are lowercased
/// and stripped of leading/trailing punctuation; empty results are
/// dropped, so no token is ever the empty string.
pub fn tokenize(text: &str, mode: TokenMode) -> TokenSequence {
    let tokens = match mode {
        TokenMode::Word => text
            .split_whitespace()
            .filter_map(normalize_word)
            .collect(),
        TokenMode::CjkChar => text
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(|c| c.to_lowercase())
            .map(String::from)
            .collect(),
        TokenMode::Mixed => {
            let mut tokens = Vec::new();
            let mut run = String::new();
            for c in text.chars() {
                if is_cjk(c) {
                    flush_run(&mut run, &mut tokens);
                    tokens.push(c.to_string());
                } else if c.is_whitespace() {
                    flush_run(&mut run, &mut tokens);
                } else {
                    run.push(c);
                }
            }
            flush_run(&mut run, &mut tokens);
            tokens
        }
    };
    TokenSequence { tokens, mode }
}

fn flush_run(run: &mut String, tokens: &mut Vec<String>) {
    if !run.is_empty() {
        if let Some(word) = normalize_word(run) {
            tokens.push(word);
        }
        run.clear();
    }
}

fn normalize_word(raw: &str) -> Option<String> {
    let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
    if trimmed.is_empty() {
        None
    } else {
        Some(trimmed.to_lowercase())
    }
}

/// LCS length by dynamic programming, O(|a|·|b|) time and O(min) space.
pub fn lcs_len(a: &TokenSequence, b: &TokenSequence) -> usize {
    lcs_len_tokens(&a.tokens, &b.tokens)
}

pub(crate) fn lcs_len_tokens<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// Tokenizes both texts and applies the R/P/F formulas.
pub fn rouge_l(candidate: &str, reference: &str, beta: f64, mode: TokenMode) -> RougeScore {
    let cand = tokenize(candidate, mode);
    let reference = tokenize(reference, mode);
    let lcs = lcs_len(&cand, &reference);
    let recall = ratio(lcs, reference.tokens.len());
    let precision = ratio(lcs, cand.tokens.len());
    let denominator = recall + beta * beta * precision;
    let f = if denominator == 0.0 {
        0.0
    } else {
        (1.0 + beta * beta) * recall * precision / denominator
    };
    RougeScore {
        lcs,
        recall,
        precision,
        f,
        beta,
    }
}

fn ratio(numerator: usize, denominator: usize) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

/// Half-up rounding to 4 decimal places.
fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

/// Scores one model's predictions against every benchmark entry.
///
/// Every benchmark question must have a prediction; predictions for
/// unknown question ids are ignored with a logged warning.
pub fn score_model(
    model_id: &str,
    predictions: &BTreeMap<String, String>,
    benchmark: &Benchmark,
    beta: f64,
    mode: TokenMode,
) -> Result<RougeReport, RougeError> {
    let known: std::collections::BTreeSet<&str> = benchmark
        .entries
        .iter()
        .map(|e| e.question_id.as_str())
        .collect();
    for extra in predictions.keys().filter(|k| !known.contains(k.as_str())) {
        log::warn!("prediction for unknown question `{extra}` ignored");
    }
    let mut pair_scores = Vec::with_capacity(benchmark.entries.len());
    let mut sum = 0.0;
    for entry in &benchmark.entries {
        let prediction = predictions
            .get(&entry.question_id)
            .ok_or_else(|| RougeError::MissingPrediction(entry.question_id.clone()))?;
        let score = rouge_l(prediction, &entry.reference_answer, beta, mode);
        sum += score.f;
        pair_scores.push(PairScore {
            question_id: entry.question_id.clone(),
            score,
        });
    }
    let mean = if pair_scores.is_empty() {
        0.0
    } else {
        sum / pair_scores.len() as f64
    };
    let mut map = BTreeMap::new();
    map.insert(model_id.to_string(), pair_scores);
    Ok(RougeReport {
        beta,
        mode,
        rows: vec![ModelRow {
            model_id: model_id.to_string(),
            mean_f_x100: round4(mean * 100.0),
        }],
        pair_scores: map,
    })
}
