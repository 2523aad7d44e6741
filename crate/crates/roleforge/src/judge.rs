//! Four-candidate ranking panels judged once per criterion, with seeded
//! presentation shuffles and average-rank aggregation.
//!
//! Candidates are anonymized as C1..C4 before the judge sees them; the
//! shuffle decorrelates presentation position from model identity.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Benchmark;
use crate::derive_seed;
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError, GenerationConfig};
use crate::prompt::{PromptError, TemplateId, TemplateSet};

pub const PANEL_SIZE: usize = 4;

const LABELS: [&str; PANEL_SIZE] = ["C1", "C2", "C3", "C4"];

const RANK_REMINDER: &str = "Repeat your final answer as a single line formatted exactly as: RANK: <label> > <label> > <label> > <label>.";

const CHARACTERISTICS_RUBRIC: &str = "Characteristic: A successful role player should answer the question while mimicking the character's speaking style and pet phrase. The one who has more distinctive role speaking style, and speaks in the first-person view, the better.";
const TASK_RESPONSE_RUBRIC: &str = "Task Response: A successful role player should not perform any rejections to roleplaying tasks. The one who has inoperative response like 'As a large language model' and 'according to the original plots' is worse.";
const QUALITY_RUBRIC: &str = "Quality: A successful role player should answer the question head-on while remaining semantically fluent and logical. The one who has more fluent and logical speaking style, and in a more positive manner, the better.";

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("a panel needs exactly {PANEL_SIZE} candidates, got {got}")]
    CandidateCountError { got: usize },
    #[error("candidate {model_id} submitted an empty response")]
    EmptyResponse { model_id: String },
    #[error("no prediction from {model_id} for question {question_id}")]
    MissingPrediction {
        model_id: String,
        question_id: String,
    },
    #[error("unparseable rank reply: {message}")]
    RankParseError { message: String },
    #[error("duplicate rank result for ({question_id}, {criterion_id})")]
    DuplicateResult {
        question_id: String,
        criterion_id: CriterionId,
    },
    #[error("result for ({question_id}, {criterion_id}) ranks a different model set")]
    InconsistentModelSet {
        question_id: String,
        criterion_id: CriterionId,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionId {
    Characteristics,
    TaskResponse,
    Quality,
}

impl CriterionId {
    pub const ALL: [CriterionId; 3] = [
        CriterionId::Characteristics,
        CriterionId::TaskResponse,
        CriterionId::Quality,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CriterionId::Characteristics => "characteristics",
            CriterionId::TaskResponse => "task_response",
            CriterionId::Quality => "quality",
        }
    }

    pub fn display_name(&self) -> &'static str {
        match self {
            CriterionId::Characteristics => "Characteristics",
            CriterionId::TaskResponse => "Task Response",
            CriterionId::Quality => "Quality",
        }
    }
}

impl std::fmt::Display for CriterionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CriterionId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "characteristics" => Ok(CriterionId::Characteristics),
            "task_response" => Ok(CriterionId::TaskResponse),
            "quality" => Ok(CriterionId::Quality),
            other => Err(format!("unknown criterion: {other}")),
        }
    }
}

/// One judging dimension and the rubric paragraph the judge is told to
/// apply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: CriterionId,
    pub rubric_text: String,
}

impl Criterion {
    pub fn new(id: CriterionId) -> Self {
        let rubric_text = match id {
            CriterionId::Characteristics => CHARACTERISTICS_RUBRIC,
            CriterionId::TaskResponse => TASK_RESPONSE_RUBRIC,
            CriterionId::Quality => QUALITY_RUBRIC,
        };
        Criterion {
            id,
            rubric_text: rubric_text.to_string(),
        }
    }

    pub fn all() -> Vec<Criterion> {
        CriterionId::ALL.iter().copied().map(Criterion::new).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanelCandidate {
    pub label: String,
    pub model_id: String,
    pub response_text: String,
}

/// Four anonymized candidate answers to one question, in the order the
/// judge will see them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Panel {
    pub question_id: String,
    pub question_text: String,
    pub presented: Vec<PanelCandidate>,
    /// label → model_id, bijective.
    pub label_map: BTreeMap<String, String>,
    pub shuffle_seed: u64,
}

/// Shuffles the canonical (sorted by model id) candidate order with the
/// seed and assigns labels C1..C4 in presentation order.
pub fn assemble_panel(
    question_id: &str,
    question_text: &str,
    responses: &BTreeMap<String, String>,
    seed: u64,
) -> Result<Panel, JudgeError> {
    let order = shuffled_order(responses, seed)?;
    build_panel(question_id, question_text, responses, order, seed)
}

/// Control variant for bias measurements: candidates stay in canonical
/// order.
pub fn assemble_panel_unshuffled(
    question_id: &str,
    question_text: &str,
    responses: &BTreeMap<String, String>,
) -> Result<Panel, JudgeError> {
    check_candidates(responses)?;
    let order = responses.keys().cloned().collect();
    build_panel(question_id, question_text, responses, order, 0)
}

fn check_candidates(responses: &BTreeMap<String, String>) -> Result<(), JudgeError> {
    if responses.len() != PANEL_SIZE {
        return Err(JudgeError::CandidateCountError {
            got: responses.len(),
        });
    }
    for (model_id, text) in responses {
        if text.trim().is_empty() {
            return Err(JudgeError::EmptyResponse {
                model_id: model_id.clone(),
            });
        }
    }
    Ok(())
}

fn shuffled_order(
    responses: &BTreeMap<String, String>,
    seed: u64,
) -> Result<Vec<String>, JudgeError> {
    check_candidates(responses)?;
    let mut order: Vec<String> = responses.keys().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ok(order)
}

fn build_panel(
    question_id: &str,
    question_text: &str,
    responses: &BTreeMap<String, String>,
    order: Vec<String>,
    seed: u64,
) -> Result<Panel, JudgeError> {
    let mut presented = Vec::with_capacity(PANEL_SIZE);
    let mut label_map = BTreeMap::new();
    for (label, model_id) in LABELS.iter().zip(order) {
        presented.push(PanelCandidate {
            label: label.to_string(),
            model_id: model_id.clone(),
            response_text: responses[&model_id].clone(),
        });
        label_map.insert(label.to_string(), model_id);
    }
    Ok(Panel {
        question_id: question_id.to_string(),
        question_text: question_text.to_string(),
        presented,
        label_map,
        shuffle_seed: seed,
    })
}

/// One judged (question, criterion) cell: a strict ranking of the four
/// models plus the judge's reasoning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub question_id: String,
    pub criterion_id: CriterionId,
    /// model_id → rank, a bijection onto 1..=4.
    pub ranks: BTreeMap<String, u8>,
    pub judge_rationale: String,
    pub raw_text: String,
}

/// Scans from the last line upward for `RANK: L > L > L > L` and returns
/// label → rank. Every member of `labels` must appear exactly once.
pub fn parse_rank(
    text: &str,
    labels: &BTreeSet<String>,
) -> Result<BTreeMap<String, u8>, JudgeError> {
    let (_, body) = find_rank_line(text).ok_or_else(|| JudgeError::RankParseError {
        message: "no RANK: line found".to_string(),
    })?;
    let parts: Vec<&str> = body
        .split('>')
        .map(|part| part.trim().trim_end_matches(['.', '!']))
        .collect();
    if parts.len() != labels.len() {
        return Err(JudgeError::RankParseError {
            message: format!("expected {} labels, found {}", labels.len(), parts.len()),
        });
    }
    let mut ranks = BTreeMap::new();
    for (position, part) in parts.iter().enumerate() {
        if !labels.contains(*part) {
            return Err(JudgeError::RankParseError {
                message: format!("unknown label {part:?}"),
            });
        }
        if ranks.insert(part.to_string(), (position + 1) as u8).is_some() {
            return Err(JudgeError::RankParseError {
                message: format!("duplicate label {part:?}"),
            });
        }
    }
    Ok(ranks)
}

/// Splits a judge reply into (rationale, rank-line body), keyed on the
/// last line starting with `RANK:`.
fn find_rank_line(text: &str) -> Option<(String, String)> {
    let lines: Vec<&str> = text.lines().collect();
    for (index, line) in lines.iter().enumerate().rev() {
        if let Some(body) = line.trim().strip_prefix("RANK:") {
            let rationale = lines[..index].join("\n").trim().to_string();
            return Some((rationale, body.trim().to_string()));
        }
    }
    None
}

pub struct JudgeHarness<'a> {
    gateway: &'a Gateway,
    templates: &'a TemplateSet,
    config: GenerationConfig,
    story_title: String,
}

impl<'a> JudgeHarness<'a> {
    pub fn new(
        gateway: &'a Gateway,
        templates: &'a TemplateSet,
        config: GenerationConfig,
        story_title: impl Into<String>,
    ) -> Self {
        JudgeHarness {
            gateway,
            templates,
            config,
            story_title: story_title.into(),
        }
    }

    /// One gateway call ranking the panel under one criterion, with one
    /// reformat retry on an unparseable reply.
    pub fn judge_panel(
        &self,
        panel: &Panel,
        criterion: &Criterion,
    ) -> Result<RankResult, JudgeError> {
        let mut bindings = BTreeMap::new();
        bindings.insert("Story".to_string(), self.story_title.clone());
        bindings.insert(
            "Evaluation Criterion".to_string(),
            criterion.rubric_text.clone(),
        );
        let rendered = self
            .templates
            .render(TemplateId::Judge, &bindings, None, None)?;
        let mut messages = rendered.messages;
        messages.push(ChatMessage::user(panel_block(panel)));
        let tag = format!("judge/{}/{}", criterion.id.as_str(), panel.question_id);
        let labels: BTreeSet<String> = panel.label_map.keys().cloned().collect();

        let request = ChatRequest {
            messages: messages.clone(),
            config: self.config.clone(),
            request_tag: tag.clone(),
        };
        let mut raw = self.gateway.complete(&request)?.text;
        let mut parsed = parse_rank(&raw, &labels);
        if matches!(parsed, Err(JudgeError::RankParseError { .. })) {
            let mut retry_messages = messages;
            retry_messages.push(ChatMessage::user(RANK_REMINDER.to_string()));
            let retry = ChatRequest {
                messages: retry_messages,
                config: self.config.clone(),
                request_tag: tag,
            };
            raw = self.gateway.complete(&retry)?.text;
            parsed = parse_rank(&raw, &labels);
        }
        let by_label = parsed.map_err(|e| match e {
            JudgeError::RankParseError { message } => JudgeError::RankParseError {
                message: format!(
                    "{message} (question {}, criterion {})",
                    panel.question_id, criterion.id
                ),
            },
            other => other,
        })?;

        let ranks = by_label
            .into_iter()
            .map(|(label, rank)| (panel.label_map[&label].clone(), rank))
            .collect();
        let rationale = find_rank_line(&raw)
            .map(|(rationale, _)| rationale)
            .unwrap_or_default();
        Ok(RankResult {
            question_id: panel.question_id.clone(),
            criterion_id: criterion.id,
            ranks,
            judge_rationale: rationale,
            raw_text: raw,
        })
    }

    /// Judges every benchmark question under all three criteria. Panels
    /// are seeded per question from `shuffle_seed`; calls fan out across
    /// the gateway bound and results come back in (question, criterion)
    /// order.
    pub fn judge_benchmark(
        &self,
        benchmark: &Benchmark,
        predictions: &BTreeMap<String, BTreeMap<String, String>>,
        shuffle_seed: u64,
    ) -> Result<Vec<RankResult>, JudgeError> {
        if predictions.len() != PANEL_SIZE {
            return Err(JudgeError::CandidateCountError {
                got: predictions.len(),
            });
        }
        let criteria = Criterion::all();
        let mut panels = Vec::with_capacity(benchmark.entries.len());
        for entry in &benchmark.entries {
            let mut responses = BTreeMap::new();
            for (model_id, by_question) in predictions {
                let text = by_question.get(&entry.question_id).ok_or_else(|| {
                    JudgeError::MissingPrediction {
                        model_id: model_id.clone(),
                        question_id: entry.question_id.clone(),
                    }
                })?;
                responses.insert(model_id.clone(), text.clone());
            }
            let seed = derive_seed("panel", shuffle_seed, &entry.question_id);
            panels.push(assemble_panel(
                &entry.question_id,
                &entry.question_text,
                &responses,
                seed,
            )?);
        }
        let jobs = panels.len() * criteria.len();
        crate::par::fan_out(jobs, self.gateway.concurrency(), |i| {
            self.judge_panel(&panels[i / criteria.len()], &criteria[i % criteria.len()])
        })
    }
}

/// The user-turn block presenting one panel to the judge.
fn panel_block(panel: &Panel) -> String {
    let mut block = format!("Question: {}", panel.question_text);
    for candidate in &panel.presented {
        block.push_str(&format!("\n\n{}: {}", candidate.label, candidate.response_text));
    }
    block
}

/// Average rank per (criterion, model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub cells: BTreeMap<CriterionId, BTreeMap<String, f64>>,
    pub n_questions: usize,
}

/// Averages rank results per criterion. Every result must rank the same
/// model set, and no (question, criterion) pair may repeat.
pub fn aggregate(results: &[RankResult]) -> Result<RankTable, JudgeError> {
    let mut model_set: Option<BTreeSet<&str>> = None;
    let mut seen_pairs = BTreeSet::new();
    let mut sums: BTreeMap<CriterionId, BTreeMap<String, (f64, usize)>> = BTreeMap::new();
    let mut questions = BTreeSet::new();
    for result in results {
        let models: BTreeSet<&str> = result.ranks.keys().map(String::as_str).collect();
        match &model_set {
            None => model_set = Some(models),
            Some(expected) if *expected == models => {}
            Some(_) => {
                return Err(JudgeError::InconsistentModelSet {
                    question_id: result.question_id.clone(),
                    criterion_id: result.criterion_id,
                })
            }
        }
        if !seen_pairs.insert((result.question_id.clone(), result.criterion_id)) {
            return Err(JudgeError::DuplicateResult {
                question_id: result.question_id.clone(),
                criterion_id: result.criterion_id,
            });
        }
        questions.insert(result.question_id.clone());
        let row = sums.entry(result.criterion_id).or_default();
        for (model_id, rank) in &result.ranks {
            let cell = row.entry(model_id.clone()).or_insert((0.0, 0));
            cell.0 += f64::from(*rank);
            cell.1 += 1;
        }
    }
    let cells = sums
        .into_iter()
        .map(|(criterion_id, row)| {
            let averages = row
                .into_iter()
                .map(|(model_id, (sum, count))| (model_id, sum / count as f64))
                .collect();
            (criterion_id, averages)
        })
        .collect();
    Ok(RankTable {
        cells,
        n_questions: questions.len(),
    })
}

/// Renders the table as aligned text: one row per model, one column per
/// criterion, best overall average first.
pub fn render_rank_table(table: &RankTable) -> String {
    let mut models = BTreeSet::new();
    for row in table.cells.values() {
        models.extend(row.keys().cloned());
    }
    let overall = |model: &str| -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for row in table.cells.values() {
            if let Some(value) = row.get(model) {
                sum += value;
                count += 1;
            }
        }
        if count == 0 {
            f64::MAX
        } else {
            sum / count as f64
        }
    };
    let mut models: Vec<String> = models.into_iter().collect();
    models.sort_by(|a, b| {
        overall(a)
            .partial_cmp(&overall(b))
            .unwrap()
            .then_with(|| a.cmp(b))
    });

    let criteria: Vec<CriterionId> = table.cells.keys().copied().collect();
    let mut header = vec!["model".to_string()];
    header.extend(criteria.iter().map(|c| c.display_name().to_string()));
    let mut rows = vec![header];
    for model in &models {
        let mut row = vec![model.clone()];
        for criterion in &criteria {
            let cell = table
                .cells
                .get(criterion)
                .and_then(|r| r.get(model))
                .map(|v| format!("{v:.2}"))
                .unwrap_or_else(|| "-".to_string());
            row.push(cell);
        }
        rows.push(row);
    }
    let columns = rows[0].len();
    let widths: Vec<usize> = (0..columns)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| format!("{cell:<width$}", width = widths[c]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{BenchmarkEntry, BenchmarkMeta};
    use crate::gateway::MockSource;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn responses() -> BTreeMap<String, String> {
        BTreeMap::from([
            ("alpha".to_string(), "Answer from alpha.".to_string()),
            ("bravo".to_string(), "Answer from bravo.".to_string()),
            ("charlie".to_string(), "Answer from charlie.".to_string()),
            ("delta".to_string(), "Answer from delta.".to_string()),
        ])
    }

    #[test]
    fn rubrics_match_the_shipped_judge_template() {
        let template_text = TemplateId::Judge.builtin_text();
        for criterion in Criterion::all() {
            assert!(
                template_text.contains(&criterion.rubric_text),
                "{} rubric drifted from the template",
                criterion.id
            );
        }
    }

    #[test]
    fn panels_are_deterministic_in_the_seed() {
        let a = assemble_panel("q1", "Why?", &responses(), 7).unwrap();
        let b = assemble_panel("q1", "Why?", &responses(), 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.presented.len(), 4);
        let labels: Vec<&str> = a.presented.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(labels, ["C1", "C2", "C3", "C4"]);
        let mapped: BTreeSet<&String> = a.label_map.values().collect();
        assert_eq!(mapped.len(), 4, "label_map is bijective");
    }

    #[test]
    fn different_seeds_permute_the_same_candidates() {
        let one = assemble_panel("q1", "Why?", &responses(), 1).unwrap();
        let other = (2..50)
            .map(|seed| assemble_panel("q1", "Why?", &responses(), seed).unwrap())
            .find(|p| {
                p.presented.iter().map(|c| &c.model_id).collect::<Vec<_>>()
                    != one.presented.iter().map(|c| &c.model_id).collect::<Vec<_>>()
            })
            .expect("some seed below 50 must reorder the panel");
        let pairs = |p: &Panel| -> BTreeSet<(String, String)> {
            p.presented
                .iter()
                .map(|c| (c.model_id.clone(), c.response_text.clone()))
                .collect()
        };
        assert_eq!(pairs(&one), pairs(&other));
    }

    #[test]
    fn unshuffled_panels_present_canonical_order() {
        let panel = assemble_panel_unshuffled("q1", "Why?", &responses()).unwrap();
        let order: Vec<&str> = panel.presented.iter().map(|c| c.model_id.as_str()).collect();
        assert_eq!(order, ["alpha", "bravo", "charlie", "delta"]);
    }

    #[test]
    fn wrong_candidate_counts_and_empty_responses_are_rejected() {
        let mut three = responses();
        three.remove("delta");
        assert!(matches!(
            assemble_panel("q1", "Why?", &three, 7),
            Err(JudgeError::CandidateCountError { got: 3 })
        ));
        let mut blank = responses();
        blank.insert("bravo".to_string(), "   ".to_string());
        assert!(matches!(
            assemble_panel("q1", "Why?", &blank, 7),
            Err(JudgeError::EmptyResponse { .. })
        ));
    }

    fn label_set() -> BTreeSet<String> {
        LABELS.iter().map(|l| l.to_string()).collect()
    }

    #[test]
    fn parse_rank_reads_the_last_rank_line() {
        let ranks = parse_rank(
            "reasoning about the candidates\nRANK: C3 > C1 > C2 > C4",
            &label_set(),
        )
        .unwrap();
        assert_eq!(ranks["C3"], 1);
        assert_eq!(ranks["C1"], 2);
        assert_eq!(ranks["C2"], 3);
        assert_eq!(ranks["C4"], 4);

        let revised = parse_rank(
            "RANK: C1 > C2 > C3 > C4\nOn reflection I revise.\nRANK: C4 > C3 > C2 > C1",
            &label_set(),
        )
        .unwrap();
        assert_eq!(revised["C4"], 1, "the last rank line wins");
    }

    #[test]
    fn parse_rank_tolerates_a_trailing_period() {
        let ranks = parse_rank("RANK: C2 > C4 > C1 > C3.", &label_set()).unwrap();
        assert_eq!(ranks["C3"], 4);
    }

    #[test]
    fn parse_rank_rejects_malformed_lines() {
        for text in [
            "no rank anywhere",
            "RANK: C1 > C1 > C2 > C3",
            "RANK: C1 > C2 > C5 > C4",
            "RANK: C1 > C2 > C3",
            "RANK: C1 > C2 > C3 > C4 > C1",
        ] {
            assert!(
                matches!(
                    parse_rank(text, &label_set()),
                    Err(JudgeError::RankParseError { .. })
                ),
                "{text:?} should not parse"
            );
        }
    }

    fn harness_fixture(
        f: impl Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    ) -> (Gateway, TemplateSet) {
        (Gateway::mock(MockSource::from_fn(f), 4), TemplateSet::builtin())
    }

    #[test]
    fn judge_panel_remaps_labels_to_models() {
        let (gateway, templates) =
            harness_fixture(|_| Ok("The second reads best.\nRANK: C2 > C1 > C4 > C3".into()));
        let harness = JudgeHarness::new(
            &gateway,
            &templates,
            GenerationConfig::default(),
            "The Ballad of Iron Hollow",
        );
        let panel = assemble_panel("q1", "Why?", &responses(), 7).unwrap();
        let criterion = Criterion::new(CriterionId::Quality);
        let result = harness.judge_panel(&panel, &criterion).unwrap();
        assert_eq!(result.criterion_id, CriterionId::Quality);
        assert_eq!(result.judge_rationale, "The second reads best.");
        for (label, rank) in [("C2", 1u8), ("C1", 2), ("C4", 3), ("C3", 4)] {
            assert_eq!(result.ranks[&panel.label_map[label]], rank);
        }
        let ranks: BTreeSet<u8> = result.ranks.values().copied().collect();
        assert_eq!(ranks, BTreeSet::from([1, 2, 3, 4]));
    }

    #[test]
    fn judge_panel_retries_once_then_errors() {
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = Arc::clone(&calls);
        let (gateway, templates) = harness_fixture(move |_| {
            counter.fetch_add(1, Ordering::SeqCst);
            Ok("I cannot decide.".into())
        });
        let harness = JudgeHarness::new(
            &gateway,
            &templates,
            GenerationConfig::default(),
            "The Ballad of Iron Hollow",
        );
        let panel = assemble_panel("q1", "Why?", &responses(), 7).unwrap();
        let err = harness
            .judge_panel(&panel, &Criterion::new(CriterionId::Characteristics))
            .unwrap_err();
        assert!(matches!(err, JudgeError::RankParseError { .. }));
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn reformat_retry_recovers_a_parseable_rank() {
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = Arc::clone(&calls);
        let (gateway, templates) = harness_fixture(move |_| {
            if counter.fetch_add(1, Ordering::SeqCst) == 0 {
                Ok("Candidate two, then one, then four, then three.".into())
            } else {
                Ok("RANK: C2 > C1 > C4 > C3".into())
            }
        });
        let harness = JudgeHarness::new(
            &gateway,
            &templates,
            GenerationConfig::default(),
            "The Ballad of Iron Hollow",
        );
        let panel = assemble_panel("q1", "Why?", &responses(), 7).unwrap();
        let result = harness
            .judge_panel(&panel, &Criterion::new(CriterionId::Quality))
            .unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 2);
        assert_eq!(result.ranks.len(), 4);
    }

    #[test]
    fn three_criteria_send_three_distinct_rubrics() {
        let rubrics = Arc::new(std::sync::Mutex::new(Vec::<String>::new()));
        let sink = Arc::clone(&rubrics);
        let (gateway, templates) = harness_fixture(move |req| {
            sink.lock().unwrap().push(req.messages[0].content.clone());
            Ok("RANK: C1 > C2 > C3 > C4".into())
        });
        let harness = JudgeHarness::new(
            &gateway,
            &templates,
            GenerationConfig::default(),
            "The Ballad of Iron Hollow",
        );
        let panel = assemble_panel("q1", "Why?", &responses(), 7).unwrap();
        for criterion in Criterion::all() {
            harness.judge_panel(&panel, &criterion).unwrap();
        }
        let sent = rubrics.lock().unwrap();
        assert_eq!(sent.len(), 3);
        let distinct: BTreeSet<&String> = sent.iter().collect();
        assert_eq!(distinct.len(), 3, "each criterion renders its own rubric");
        assert!(sent[0].contains(CHARACTERISTICS_RUBRIC));
    }

    #[test]
    fn panel_block_shows_question_and_labeled_candidates() {
        let panel = assemble_panel_unshuffled("q1", "Why did you stay?", &responses()).unwrap();
        let block = panel_block(&panel);
        assert!(block.starts_with("Question: Why did you stay?"));
        assert!(block.contains("\n\nC1: Answer from alpha."));
        assert!(block.contains("\n\nC4: Answer from delta."));
    }

    fn result(question_id: &str, criterion_id: CriterionId, ranks: [(&str, u8); 4]) -> RankResult {
        RankResult {
            question_id: question_id.to_string(),
            criterion_id,
            ranks: ranks
                .iter()
                .map(|(m, r)| (m.to_string(), *r))
                .collect(),
            judge_rationale: String::new(),
            raw_text: String::new(),
        }
    }

    #[test]
    fn aggregate_matches_the_worked_example() {
        let results = vec![
            result(
                "q1",
                CriterionId::Quality,
                [("a", 1), ("b", 2), ("c", 3), ("d", 4)],
            ),
            result(
                "q2",
                CriterionId::Quality,
                [("a", 3), ("b", 1), ("c", 2), ("d", 4)],
            ),
        ];
        let table = aggregate(&results).unwrap();
        let row = &table.cells[&CriterionId::Quality];
        assert_eq!(row["a"], 2.0);
        assert_eq!(row["b"], 1.5);
        assert_eq!(row["c"], 2.5);
        assert_eq!(row["d"], 4.0);
        assert_eq!(table.n_questions, 2);
        assert!((row.values().sum::<f64>() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_rejects_duplicates_and_model_drift() {
        let base = result(
            "q1",
            CriterionId::Quality,
            [("a", 1), ("b", 2), ("c", 3), ("d", 4)],
        );
        assert!(matches!(
            aggregate(&[base.clone(), base.clone()]),
            Err(JudgeError::DuplicateResult { .. })
        ));
        let drifted = result(
            "q2",
            CriterionId::Quality,
            [("a", 1), ("b", 2), ("c", 3), ("e", 4)],
        );
        assert!(matches!(
            aggregate(&[base, drifted]),
            Err(JudgeError::InconsistentModelSet { .. })
        ));
    }

    #[test]
    fn judge_benchmark_covers_every_question_and_criterion() {
        let (gateway, templates) =
            harness_fixture(|_| Ok("Steady reasoning.\nRANK: C1 > C2 > C3 > C4".into()));
        let harness = JudgeHarness::new(
            &gateway,
            &templates,
            GenerationConfig::default(),
            "The Ballad of Iron Hollow",
        );
        let entries = (1..=3)
            .map(|k| BenchmarkEntry {
                question_id: format!("q{k}"),
                question_text: format!("Why number {k}?"),
                reference_answer: "ref".into(),
                character_id: "mira-vane".into(),
            })
            .collect();
        let benchmark = Benchmark::new(entries, BenchmarkMeta::default()).unwrap();
        let predictions: BTreeMap<String, BTreeMap<String, String>> = responses()
            .keys()
            .map(|model| {
                let by_question = (1..=3)
                    .map(|k| (format!("q{k}"), format!("{model} answer {k}")))
                    .collect();
                (model.clone(), by_question)
            })
            .collect();
        let results = harness
            .judge_benchmark(&benchmark, &predictions, 202)
            .unwrap();
        assert_eq!(results.len(), 9);
        for (i, result) in results.iter().enumerate() {
            assert_eq!(result.question_id, format!("q{}", i / 3 + 1));
            assert_eq!(result.criterion_id, CriterionId::ALL[i % 3]);
        }
        let again = harness
            .judge_benchmark(&benchmark, &predictions, 202)
            .unwrap();
        assert_eq!(results, again);

        let mut short = predictions.clone();
        short.remove("alpha");
        assert!(matches!(
            harness.judge_benchmark(&benchmark, &short, 202),
            Err(JudgeError::CandidateCountError { got: 3 })
        ));
        let mut gappy = predictions;
        gappy.get_mut("alpha").unwrap().remove("q2");
        assert!(matches!(
            harness.judge_benchmark(&benchmark, &gappy, 202),
            Err(JudgeError::MissingPrediction { .. })
        ));
    }

    #[test]
    fn rendered_table_aligns_and_orders_by_overall_average() {
        let results = vec![
            result(
                "q1",
                CriterionId::Characteristics,
                [("good", 1), ("bad", 4), ("mid-a", 2), ("mid-b", 3)],
            ),
            result(
                "q1",
                CriterionId::Quality,
                [("good", 1), ("bad", 4), ("mid-a", 3), ("mid-b", 2)],
            ),
        ];
        let table = aggregate(&results).unwrap();
        let text = render_rank_table(&table);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("model"));
        assert!(lines[1].starts_with("good"));
        assert!(lines[4].starts_with("bad"));
        assert!(lines[0].contains("Characteristics"));
        assert!(lines[0].contains("Quality"));
    }

    fn permutation_strategy() -> impl Strategy<Value = Vec<u8>> {
        Just(vec![1u8, 2, 3, 4]).prop_shuffle()
    }

    proptest! {
        #[test]
        fn row_sums_are_ten_and_relabeling_permutes_rows(
            perms in proptest::collection::vec(permutation_strategy(), 3..30),
        ) {
            let models = ["alpha", "bravo", "charlie", "delta"];
            let results: Vec<RankResult> = perms
                .iter()
                .enumerate()
                .map(|(i, perm)| {
                    let criterion = CriterionId::ALL[i % 3];
                    let ranks: [(&str, u8); 4] = [
                        (models[0], perm[0]),
                        (models[1], perm[1]),
                        (models[2], perm[2]),
                        (models[3], perm[3]),
                    ];
                    result(&format!("q{}", i / 3), criterion, ranks)
                })
                .collect();
            let table = aggregate(&results).unwrap();
            for row in table.cells.values() {
                let sum: f64 = row.values().sum();
                prop_assert!((sum - 10.0).abs() < 1e-9, "row sum {sum}");
            }

            let rename = |m: &str| format!("model-{m}");
            let renamed: Vec<RankResult> = results
                .iter()
                .map(|r| RankResult {
                    ranks: r
                        .ranks
                        .iter()
                        .map(|(m, rank)| (rename(m), *rank))
                        .collect(),
                    ..r.clone()
                })
                .collect();
            let renamed_table = aggregate(&renamed).unwrap();
            for (criterion, row) in &table.cells {
                for (model, value) in row {
                    prop_assert_eq!(renamed_table.cells[criterion][&rename(model)], *value);
                }
            }
        }
    }
}
