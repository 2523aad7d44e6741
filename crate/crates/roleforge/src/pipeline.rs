//! The three decomposed generation stages: story plots, questions about
//! each plot, and in-character answers.
//!
//! Every model reply is parsed against the machine-format line its
//! template mandates; one automatic retry appends a terse reformat
//! reminder before a parse problem becomes an error.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CharacterProfile, ExampleSet, Story};
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError, GenerationConfig};
use crate::prompt::{PromptError, PromptVariant, TemplateId, TemplateSet};

/// Rounds of plot generation an accumulation loop may spend before
/// giving up on its question target.
pub const DEFAULT_ROUND_CAP: u32 = 20;

const REFORMAT_REMINDER: &str = "Output only the required lines in the required format.";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unparseable {stage} response (call {call_index}): {reason}")]
    ParseFailure {
        stage: &'static str,
        call_index: usize,
        reason: String,
    },
    #[error("parsed {got} questions, need two or three")]
    CountViolation { got: usize },
    #[error("question target {target} unreachable: {collected} unique after {rounds} rounds")]
    TargetUnreachable {
        target: usize,
        collected: usize,
        rounds: u32,
    },
    #[error("empty answer for question {question_id}")]
    EmptyAnswer { question_id: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// One extracted story plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plot {
    pub plot_id: String,
    pub character_id: String,
    pub site: String,
    pub main_character: String,
    pub supporting_characters: Vec<String>,
    pub summary: String,
    /// The unparsed model line this plot came from.
    pub raw_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionKind {
    What,
    Where,
    Why,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    pub plot_id: String,
    pub character_id: String,
    pub text: String,
    pub kind: QuestionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogPair {
    pub question_id: String,
    pub answer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    pub variant: PromptVariant,
    pub character_id: String,
}

/// Plot fields parsed from one model line, before ids are assigned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPlot {
    pub site: String,
    pub main_character: String,
    pub supporting_characters: Vec<String>,
    pub summary: String,
    pub raw_text: String,
}

/// Exemplars for the three generation stages.
pub struct StageExamples {
    pub plot: ExampleSet,
    pub question: ExampleSet,
    pub answer: ExampleSet,
}

pub struct Pipeline<'a> {
    gateway: &'a Gateway,
    templates: &'a TemplateSet,
    config: GenerationConfig,
    story: &'a Story,
    story_title: String,
    examples: StageExamples,
    round_cap: u32,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        gateway: &'a Gateway,
        templates: &'a TemplateSet,
        config: GenerationConfig,
        story: &'a Story,
        story_title: impl Into<String>,
        examples: StageExamples,
    ) -> Self {
        Pipeline {
            gateway,
            templates,
            config,
            story,
            story_title: story_title.into(),
            examples,
            round_cap: DEFAULT_ROUND_CAP,
        }
    }

    pub fn with_round_cap(mut self, cap: u32) -> Self {
        self.round_cap = cap;
        self
    }

    pub fn templates(&self) -> &TemplateSet {
        self.templates
    }

    pub fn story_title(&self) -> &str {
        &self.story_title
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.config
    }

    /// Runs `rounds` plot calls. Each call must yield exactly 5 parsed
    /// plots; near-duplicates across rounds are dropped.
    pub fn generate_plots(
        &self,
        character: &CharacterProfile,
        rounds: u32,
    ) -> Result<Vec<Plot>, PipelineError> {
        let mut plots = Vec::new();
        let mut seen = BTreeSet::new();
        for round in 0..rounds {
            let parsed = self.plot_round(character, round)?;
            absorb_plots(character, parsed, &mut plots, &mut seen);
        }
        Ok(plots)
    }

    fn plot_round(
        &self,
        character: &CharacterProfile,
        round_index: u32,
    ) -> Result<Vec<ParsedPlot>, PipelineError> {
        let mut bindings = BTreeMap::new();
        bindings.insert("Character".to_string(), character.display_name.clone());
        bindings.insert("Story".to_string(), self.story_title.clone());
        let rendered = self.templates.render(
            TemplateId::Plot,
            &bindings,
            Some(&self.examples.plot),
            Some(self.story),
        )?;
        let mut messages = rendered.messages;
        // The batch number keeps rounds textually distinct, so caching
        // cannot collapse round k and round k+1 into the same reply.
        messages.push(ChatMessage::user(format!(
            "List 5 different story plots related to {} in {}. Batch {}.",
            character.display_name,
            self.story_title,
            round_index + 1
        )));
        let tag = format!("plot/{}/round{}", character.character_id, round_index + 1);
        let call_index = round_index as usize;
        self.complete_with_retry(messages, &tag, &|text| {
            let plots = parse_plot_lines(text);
            if plots.len() == 5 {
                Ok(plots)
            } else {
                Err(PipelineError::ParseFailure {
                    stage: "plot",
                    call_index,
                    reason: format!("{} well-formed plot lines, need 5", plots.len()),
                })
            }
        })
    }

    /// Asks two or three questions about one plot.
    pub fn generate_questions(
        &self,
        plot: &Plot,
        character: &CharacterProfile,
    ) -> Result<Vec<Question>, PipelineError> {
        let mut bindings = BTreeMap::new();
        bindings.insert("Character".to_string(), character.display_name.clone());
        bindings.insert("Plot".to_string(), plot_descriptor(plot));
        let rendered = self.templates.render(
            TemplateId::Question,
            &bindings,
            Some(&self.examples.question),
            None,
        )?;
        let mut messages = rendered.messages;
        messages.push(ChatMessage::user(
            "Ask your two or three questions now.".to_string(),
        ));
        let tag = format!("question/{}/{}", character.character_id, plot.plot_id);
        let texts = self.complete_with_retry(messages, &tag, &|text| {
            let texts = parse_question_lines(text);
            if texts.is_empty() {
                return Err(PipelineError::ParseFailure {
                    stage: "question",
                    call_index: 0,
                    reason: "no well-formed QUESTION lines".into(),
                });
            }
            if !(2..=3).contains(&texts.len()) {
                return Err(PipelineError::CountViolation { got: texts.len() });
            }
            Ok(texts)
        })?;
        Ok(texts
            .into_iter()
            .enumerate()
            .map(|(i, text)| Question {
                question_id: format!("{}-q{}", plot.plot_id, i + 1),
                plot_id: plot.plot_id.clone(),
                character_id: plot.character_id.clone(),
                kind: classify_kind(&text),
                text,
            })
            .collect())
    }

    /// Alternates plot rounds and question calls until `target` unique
    /// question texts have accumulated, or the round cap is hit.
    pub fn accumulate_questions(
        &self,
        character: &CharacterProfile,
        target: usize,
    ) -> Result<(Vec<Plot>, Vec<Question>), PipelineError> {
        assert!(target >= 1, "question target must be positive");
        let mut plots = Vec::new();
        let mut seen_plots = BTreeSet::new();
        let mut questions: Vec<Question> = Vec::new();
        let mut seen_texts = BTreeSet::new();
        let mut round = 0u32;
        while questions.len() < target {
            if round >= self.round_cap {
                return Err(PipelineError::TargetUnreachable {
                    target,
                    collected: questions.len(),
                    rounds: round,
                });
            }
            let parsed = self.plot_round(character, round)?;
            round += 1;
            let fresh = absorb_plots(character, parsed, &mut plots, &mut seen_plots);
            for plot in &fresh {
                if questions.len() >= target {
                    break;
                }
                for question in self.generate_questions(plot, character)? {
                    if questions.len() >= target {
                        break;
                    }
                    if seen_texts.insert(question.text.clone()) {
                        questions.push(question);
                    }
                }
            }
        }
        Ok((plots, questions))
    }

    /// Answers every question with the given prompt variant, fanning out
    /// across the gateway's concurrency bound; output order matches the
    /// input order.
    pub fn generate_answers(
        &self,
        questions: &[Question],
        variant: PromptVariant,
        character: &CharacterProfile,
    ) -> Result<Vec<DialogPair>, PipelineError> {
        let template_id = variant.template_id();
        let mut bindings = BTreeMap::new();
        bindings.insert("Character".to_string(), character.display_name.clone());
        bindings.insert(
            "Target Character".to_string(),
            character.display_name.clone(),
        );
        bindings.insert("Story".to_string(), self.story_title.clone());
        let wants_story = self.templates.get(template_id).wants_story_attachment;
        let rendered = self.templates.render(
            template_id,
            &bindings,
            Some(&self.examples.answer),
            wants_story.then_some(self.story),
        )?;
        crate::par::fan_out(questions.len(), self.gateway.concurrency(), |i| {
            let question = &questions[i];
            let mut messages = rendered.messages.clone();
            messages.push(ChatMessage::user(question.text.clone()));
            let tag = format!(
                "answer-{}/{}/{}",
                variant.as_str(),
                character.character_id,
                question.question_id
            );
            let (answer, explanation) = match variant {
                PromptVariant::Explain => {
                    self.complete_with_retry(messages, &tag, &|text| {
                        split_explained(text).ok_or_else(|| PipelineError::ParseFailure {
                            stage: "answer",
                            call_index: i,
                            reason: "missing EXPLANATION: marker".into(),
                        })
                    })?
                }
                _ => {
                    let text = self.complete_plain(messages, &tag)?;
                    (text.trim().to_string(), None)
                }
            };
            if answer.trim().is_empty() {
                return Err(PipelineError::EmptyAnswer {
                    question_id: question.question_id.clone(),
                });
            }
            Ok(DialogPair {
                question_id: question.question_id.clone(),
                answer,
                explanation,
                variant,
                character_id: character.character_id.clone(),
            })
        })
    }

    fn complete_plain(
        &self,
        messages: Vec<ChatMessage>,
        tag: &str,
    ) -> Result<String, PipelineError> {
        let request = ChatRequest {
            messages,
            config: self.config.clone(),
            request_tag: tag.to_string(),
        };
        Ok(self.gateway.complete(&request)?.text)
    }

    /// One call plus at most one reformat retry on a parse problem.
    fn complete_with_retry<T>(
        &self,
        messages: Vec<ChatMessage>,
        tag: &str,
        parse: &dyn Fn(&str) -> Result<T, PipelineError>,
    ) -> Result<T, PipelineError> {
        let request = ChatRequest {
            messages: messages.clone(),
            config: self.config.clone(),
            request_tag: tag.to_string(),
        };
        let response = self.gateway.complete(&request)?;
        match parse(&response.text) {
            Ok(value) => Ok(value),
            Err(PipelineError::ParseFailure { .. }) | Err(PipelineError::CountViolation { .. }) => {
                let mut retry_messages = messages;
                retry_messages.push(ChatMessage::user(REFORMAT_REMINDER.to_string()));
                let retry = ChatRequest {
                    messages: retry_messages,
                    config: self.config.clone(),
                    request_tag: tag.to_string(),
                };
                let response = self.gateway.complete(&retry)?;
                parse(&response.text)
            }
            Err(other) => Err(other),
        }
    }
}

/// Extracts all well-formed `PLOT k: site | main | supporting | summary`
/// lines, ignoring any reasoning prose around them. Lines with an empty
/// site, main character, or summary are rejected individually.
pub fn parse_plot_response(text: &str) -> Result<Vec<ParsedPlot>, PipelineError> {
    let plots = parse_plot_lines(text);
    if plots.is_empty() {
        return Err(PipelineError::ParseFailure {
            stage: "plot",
            call_index: 0,
            reason: "no well-formed PLOT lines".into(),
        });
    }
    Ok(plots)
}

fn parse_plot_lines(text: &str) -> Vec<ParsedPlot> {
    text.lines().filter_map(parse_plot_line).collect()
}

fn parse_plot_line(line: &str) -> Option<ParsedPlot> {
    let trimmed = line.trim();
    let body = strip_numbered_prefix(trimmed, "PLOT")?;
    let fields: Vec<&str> = body.split('|').map(str::trim).collect();
    if fields.len() != 4 {
        return None;
    }
    let (site, main, supporting, summary) = (fields[0], fields[1], fields[2], fields[3]);
    if site.is_empty() || main.is_empty() || summary.is_empty() {
        return None;
    }
    Some(ParsedPlot {
        site: site.to_string(),
        main_character: main.to_string(),
        supporting_characters: supporting
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect(),
        summary: summary.to_string(),
        raw_text: trimmed.to_string(),
    })
}

fn parse_question_lines(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|line| {
            let body = strip_numbered_prefix(line.trim(), "QUESTION")?;
            let body = body.trim();
            if body.is_empty() || !(body.ends_with('?') || body.ends_with('？')) {
                return None;
            }
            Some(body.to_string())
        })
        .collect()
}

/// Strips `<keyword> <digits>:` and returns the remainder.
fn strip_numbered_prefix<'t>(line: &'t str, keyword: &str) -> Option<&'t str> {
    let rest = line.strip_prefix(keyword)?.trim_start();
    let digits = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
    if digits == 0 {
        return None;
    }
    rest[digits..].trim_start().strip_prefix(':')
}

fn classify_kind(text: &str) -> QuestionKind {
    let first: String = text
        .trim_start()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    match first.as_str() {
        "what" => QuestionKind::What,
        "where" => QuestionKind::Where,
        "why" => QuestionKind::Why,
        _ => QuestionKind::Other,
    }
}

/// Assigns ids to freshly parsed plots, dropping near-duplicates of ones
/// already absorbed. Returns only the plots added by this call.
fn absorb_plots(
    character: &CharacterProfile,
    parsed: Vec<ParsedPlot>,
    plots: &mut Vec<Plot>,
    seen: &mut BTreeSet<(String, String, String)>,
) -> Vec<Plot> {
    let mut fresh = Vec::new();
    for p in parsed {
        if seen.insert(dedup_key(&p)) {
            let plot = Plot {
                plot_id: format!("{}-plot{:03}", character.character_id, plots.len() + 1),
                character_id: character.character_id.clone(),
                site: p.site,
                main_character: p.main_character,
                supporting_characters: p.supporting_characters,
                summary: p.summary,
                raw_text: p.raw_text,
            };
            plots.push(plot.clone());
            fresh.push(plot);
        }
    }
    fresh
}

/// Near-duplicate key: normalized site and main character plus the first
/// 40 chars of the normalized summary. Exact matching is too weak across
/// rounds at high sampling temperature.
fn dedup_key(p: &ParsedPlot) -> (String, String, String) {
    (
        normalize(&p.site),
        normalize(&p.main_character),
        normalize(&p.summary).chars().take(40).collect(),
    )
}

fn normalize(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// The question template's `{Plot}` binding: the canonical four-field line
/// body reconstructed from the parsed plot.
fn plot_descriptor(plot: &Plot) -> String {
    format!(
        "{} | {} | {} | {}",
        plot.site,
        plot.main_character,
        plot.supporting_characters.join(", "),
        plot.summary
    )
}

/// Splits an Explain-variant reply at the first `EXPLANATION:` line.
fn split_explained(text: &str) -> Option<(String, Option<String>)> {
    let mut answer_lines = Vec::new();
    let mut lines = text.lines();
    for line in lines.by_ref() {
        if let Some(first) = line.trim_start().strip_prefix("EXPLANATION:") {
            let mut explanation = first.trim().to_string();
            for rest in lines {
                if !explanation.is_empty() {
                    explanation.push('\n');
                }
                explanation.push_str(rest.trim());
            }
            return Some((
                answer_lines.join("\n").trim().to_string(),
                Some(explanation.trim().to_string()),
            ));
        }
        answer_lines.push(line);
    }
    None
}
