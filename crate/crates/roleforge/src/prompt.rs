//! Prompt templates: seven editable text assets with `{Slot}` variables,
//! few-shot example injection, and optional story attachment.
//!
//! The files under `templates/` are the bit-exact source of truth; the
//! copies embedded at compile time are used when a workspace ships no
//! override file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{ExampleSet, Story};
use crate::gateway::ChatMessage;

const EXAMPLES_MARKER: &str = "[Examples]";
const DEFAULT_ATTACHMENT_BUDGET: usize = 200_000;

const BUILTIN_PLOT: &str = include_str!("../templates/plot.txt");
const BUILTIN_QUESTION: &str = include_str!("../templates/question.txt");
const BUILTIN_ANSWER_BASE: &str = include_str!("../templates/answer_base.txt");
const BUILTIN_ANSWER_READ: &str = include_str!("../templates/answer_read.txt");
const BUILTIN_ANSWER_EMOTION: &str = include_str!("../templates/answer_emotion.txt");
const BUILTIN_ANSWER_EXPLAIN: &str = include_str!("../templates/answer_explain.txt");
const BUILTIN_JUDGE: &str = include_str!("../templates/judge.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("no binding for slot `{0}`")]
    MissingSlot(String),
    #[error("template injects examples but none were provided")]
    MissingExamples,
    #[error("template attaches the story but none was provided")]
    MissingStoryAttachment,
    #[error("story attachment of {chars} chars exceeds the {budget}-char budget")]
    AttachmentTooLarge { chars: usize, budget: usize },
    #[error("cannot read template {path}: {message}")]
    TemplateIo { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TemplateId {
    Plot,
    Question,
    AnswerBase,
    AnswerRead,
    AnswerEmotion,
    AnswerExplain,
    Judge,
}

impl TemplateId {
    pub const ALL: [TemplateId; 7] = [
        TemplateId::Plot,
        TemplateId::Question,
        TemplateId::AnswerBase,
        TemplateId::AnswerRead,
        TemplateId::AnswerEmotion,
        TemplateId::AnswerExplain,
        TemplateId::Judge,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            TemplateId::Plot => "plot",
            TemplateId::Question => "question",
            TemplateId::AnswerBase => "answer_base",
            TemplateId::AnswerRead => "answer_read",
            TemplateId::AnswerEmotion => "answer_emotion",
            TemplateId::AnswerExplain => "answer_explain",
            TemplateId::Judge => "judge",
        }
    }

    pub(crate) fn builtin_text(self) -> &'static str {
        match self {
            TemplateId::Plot => BUILTIN_PLOT,
            TemplateId::Question => BUILTIN_QUESTION,
            TemplateId::AnswerBase => BUILTIN_ANSWER_BASE,
            TemplateId::AnswerRead => BUILTIN_ANSWER_READ,
            TemplateId::AnswerEmotion => BUILTIN_ANSWER_EMOTION,
            TemplateId::AnswerExplain => BUILTIN_ANSWER_EXPLAIN,
            TemplateId::Judge => BUILTIN_JUDGE,
        }
    }

    /// Whether the stage ships the full story text as an attachment
    /// message. Fixed by template identity: the plot prompt and the Read
    /// answer prompt tell the model to consult the attached file; the
    /// other answer variants deliberately work from the prompt alone.
    fn attaches_story(self) -> bool {
        matches!(self, TemplateId::Plot | TemplateId::AnswerRead)
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

/// The four answer-generation prompt designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptVariant {
    Base,
    Read,
    Emotion,
    Explain,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 4] = [
        PromptVariant::Base,
        PromptVariant::Read,
        PromptVariant::Emotion,
        PromptVariant::Explain,
    ];

    pub fn template_id(self) -> TemplateId {
        match self {
            PromptVariant::Base => TemplateId::AnswerBase,
            PromptVariant::Read => TemplateId::AnswerRead,
            PromptVariant::Emotion => TemplateId::AnswerEmotion,
            PromptVariant::Explain => TemplateId::AnswerExplain,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptVariant::Base => "base",
            PromptVariant::Read => "read",
            PromptVariant::Emotion => "emotion",
            PromptVariant::Explain => "explain",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(PromptVariant::Base),
            "read" => Ok(PromptVariant::Read),
            "emotion" => Ok(PromptVariant::Emotion),
            "explain" => Ok(PromptVariant::Explain),
            other => Err(format!(
                "unknown variant `{other}` (expected base|read|emotion|explain)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub template_id: TemplateId,
    pub system_text: String,
    pub required_slots: BTreeSet<String>,
    pub wants_examples: bool,
    pub wants_story_attachment: bool,
}

impl PromptTemplate {
    fn new(template_id: TemplateId, system_text: String) -> Self {
        let required_slots = find_slots(&system_text);
        let wants_examples = system_text.contains(EXAMPLES_MARKER);
        PromptTemplate {
            template_id,
            system_text,
            required_slots,
            wants_examples,
            wants_story_attachment: template_id.attaches_story(),
        }
    }
}

/// Ordered chat messages ready for the gateway; the caller appends the
/// final user turn for its stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub messages: Vec<ChatMessage>,
    /// Rough size, total chars / 4.
    pub token_estimate: usize,
}

pub struct TemplateSet {
    templates: BTreeMap<TemplateId, PromptTemplate>,
    attachment_budget: usize,
}

impl TemplateSet {
    /// The templates embedded at compile time.
    pub fn builtin() -> Self {
        let templates = TemplateId::ALL
            .iter()
            .map(|&id| (id, PromptTemplate::new(id, id.builtin_text().to_string())))
            .collect();
        TemplateSet {
            templates,
            attachment_budget: DEFAULT_ATTACHMENT_BUDGET,
        }
    }

    /// Builtin templates with per-file overrides from `dir`; a template
    /// without an override file keeps its embedded text.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut set = TemplateSet::builtin();
        for &id in TemplateId::ALL.iter() {
            let path = dir.join(format!("{}.txt", id.file_stem()));
            match std::fs::read_to_string(&path) {
                Ok(text) => {
                    set.templates.insert(id, PromptTemplate::new(id, text));
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => {
                    return Err(PromptError::TemplateIo {
                        path,
                        message: e.to_string(),
                    })
                }
            }
        }
        Ok(set)
    }

    pub fn with_attachment_budget(mut self, budget: usize) -> Self {
        self.attachment_budget = budget;
        self
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    /// All seven templates in fixed enum order.
    pub fn list(&self) -> Vec<(TemplateId, BTreeSet<String>, bool)> {
        TemplateId::ALL
            .iter()
            .map(|&id| {
                let t = self.get(id);
                (id, t.required_slots.clone(), t.wants_story_attachment)
            })
            .collect()
    }

    /// SHA-256 of each template's text, for dataset provenance metadata.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        TemplateId::ALL
            .iter()
            .map(|&id| {
                let digest = Sha256::digest(self.get(id).system_text.as_bytes());
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                (id.file_stem().to_string(), hex)
            })
            .collect()
    }

    /// Renders a template into ordered messages: the system text with all
    /// slots bound and examples injected after the `[Examples]` marker,
    /// plus a dedicated attachment message when the template wants one.
    pub fn render(
        &self,
        id: TemplateId,
        bindings: &BTreeMap<String, String>,
        examples: Option<&ExampleSet>,
        story: Option<&Story>,
    ) -> Result<RenderedPrompt, PromptError> {
        let template = self.get(id);
        for slot in &template.required_slots {
            if !bindings.contains_key(slot) {
                return Err(PromptError::MissingSlot(slot.clone()));
            }
        }
        let mut system_text = substitute_slots(&template.system_text, &template.required_slots, bindings);
        if template.wants_examples {
            let set = examples.ok_or(PromptError::MissingExamples)?;
            if set.items.is_empty() {
                return Err(PromptError::MissingExamples);
            }
            let mut block = String::new();
            for (i, item) in set.items.iter().enumerate() {
                block.push_str(&format!("\nExample {}:\n{}\n", i + 1, item));
            }
            let marker = system_text
                .find(EXAMPLES_MARKER)
                .expect("wants_examples implies the marker is present");
            let insert_at = system_text[marker..]
                .find('\n')
                .map(|offset| marker + offset + 1)
                .unwrap_or(system_text.len());
            system_text.insert_str(insert_at, &block);
        }
        let mut messages = vec![ChatMessage::system(system_text)];
        if template.wants_story_attachment {
            let story = story.ok_or(PromptError::MissingStoryAttachment)?;
            if story.char_count > self.attachment_budget {
                return Err(PromptError::AttachmentTooLarge {
                    chars: story.char_count,
                    budget: self.attachment_budget,
                });
            }
            messages.push(ChatMessage::user(format!(
                "[Attached file]\n{}",
                story.text
            )));
        }
        let total_chars: usize = messages.iter().map(|m| m.content.chars().count()).sum();
        Ok(RenderedPrompt {
            token_estimate: total_chars / 4,
            messages,
        })
    }
}

/// Scans for `{Name}` occurrences where `Name` starts with a letter and
/// contains only letters and spaces.
fn find_slots(text: &str) -> BTreeSet<String> {
    let mut slots = BTreeSet::new();
    let bytes: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == '{' {
            if let Some(end) = scan_slot(&bytes, i) {
                slots.insert(bytes[i + 1..end].iter().collect());
                i = end + 1;
                continue;
            }
        }
        i += 1;
    }
    slots
}

/// Returns the index of the closing brace when `chars[open..]` starts a
/// well-formed slot.
fn scan_slot(chars: &[char], open: usize) -> Option<usize> {
    let mut i = open + 1;
    if i >= chars.len() || !chars[i].is_ascii_alphabetic() {
        return None;
    }
    while i < chars.len() {
        match chars[i] {
            '}' => return (i > open + 1).then_some(i),
            c if c.is_ascii_alphabetic() || c == ' ' => i += 1,
            _ => return None,
        }
    }
    None
}

/// One-pass substitution: binding values are emitted verbatim, never
/// rescanned, so a value containing brace syntax cannot cascade.
fn substitute_slots(
    text: &str,
    slots: &BTreeSet<String>,
    bindings: &BTreeMap<String, String>,
) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '{' {
            if let Some(end) = scan_slot(&chars, i) {
                let name: String = chars[i + 1..end].iter().collect();
                if slots.contains(&name) {
                    out.push_str(&bindings[&name]);
                    i = end + 1;
                    continue;
                }
            }
        }
        out.push(chars[i]);
        i += 1;
    }
    out
}
