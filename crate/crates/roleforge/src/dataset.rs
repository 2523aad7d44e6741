//! Question splitting, per-variant training datasets, the reference
//! benchmark, and fine-tuning artifact export.
//!
//! The split is stratified per character so no character vanishes from
//! validation; membership depends only on the seed, never on iteration
//! order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CharacterProfile;
use crate::derive_seed;
use crate::pipeline::{Pipeline, PipelineError, Question};
use crate::prompt::PromptVariant;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("question {question_id} appears more than once")]
    DuplicateQuestionId { question_id: String },
    #[error("cannot merge variant {got} into a {expected} dataset")]
    VariantMismatch { expected: String, got: String },
    #[error("record {question_id} has an empty {field}")]
    EmptyField {
        question_id: String,
        field: &'static str,
    },
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Train/validation ratio and the seed that fixes the assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPolicy {
    pub ratio_train: u32,
    pub ratio_val: u32,
    pub seed: u64,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        SplitPolicy {
            ratio_train: 5,
            ratio_val: 1,
            seed: 101,
        }
    }
}

impl SplitPolicy {
    pub fn with_seed(seed: u64) -> Self {
        SplitPolicy {
            seed,
            ..SplitPolicy::default()
        }
    }
}

/// One instruction-tuning example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub system: String,
    pub input: String,
    pub output: String,
    pub meta: RecordMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub question_id: String,
    pub character_id: String,
    pub plot_id: String,
    pub variant: PromptVariant,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(default)]
    pub created_at: String,
    #[serde(default)]
    pub template_hashes: BTreeMap<String, String>,
    #[serde(default)]
    pub gateway_model_id: String,
    /// Caller-supplied provenance (config hash, seeds); kept open so the
    /// file format can carry it without the builder caring.
    #[serde(flatten, default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// A per-variant training dataset; every question id appears exactly once
/// and all records share the variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub variant: PromptVariant,
    pub character_ids: BTreeSet<String>,
    pub records: Vec<InstructionRecord>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(
        records: Vec<InstructionRecord>,
        variant: PromptVariant,
        meta: DatasetMeta,
    ) -> Result<Self, DatasetError> {
        let mut seen = BTreeSet::new();
        let mut character_ids = BTreeSet::new();
        for record in &records {
            if record.meta.variant != variant {
                return Err(DatasetError::VariantMismatch {
                    expected: variant.to_string(),
                    got: record.meta.variant.to_string(),
                });
            }
            if record.input.is_empty() {
                return Err(DatasetError::EmptyField {
                    question_id: record.meta.question_id.clone(),
                    field: "input",
                });
            }
            if record.output.is_empty() {
                return Err(DatasetError::EmptyField {
                    question_id: record.meta.question_id.clone(),
                    field: "output",
                });
            }
            if !seen.insert(record.meta.question_id.clone()) {
                return Err(DatasetError::DuplicateQuestionId {
                    question_id: record.meta.question_id.clone(),
                });
            }
            character_ids.insert(record.meta.character_id.clone());
        }
        Ok(Dataset {
            variant,
            character_ids,
            records,
            meta,
        })
    }

    /// Concatenates per-character datasets of the same variant.
    pub fn merge(parts: Vec<Dataset>) -> Result<Dataset, DatasetError> {
        let mut parts = parts.into_iter();
        let first = parts.next().expect("merge needs at least one dataset");
        let variant = first.variant;
        let meta = first.meta.clone();
        let mut records = first.records;
        for part in parts {
            if part.variant != variant {
                return Err(DatasetError::VariantMismatch {
                    expected: variant.to_string(),
                    got: part.variant.to_string(),
                });
            }
            records.extend(part.records);
        }
        Dataset::new(records, variant, meta)
    }

    pub fn question_ids(&self) -> BTreeSet<&str> {
        self.records
            .iter()
            .map(|r| r.meta.question_id.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub question_id: String,
    pub question_text: String,
    pub reference_answer: String,
    pub character_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMeta {
    pub reference_variant: PromptVariant,
    #[serde(default)]
    pub created_at: String,
    #[serde(default)]
    pub gateway_model_id: String,
    #[serde(flatten, default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Default for BenchmarkMeta {
    fn default() -> Self {
        BenchmarkMeta {
            reference_variant: PromptVariant::Base,
            created_at: String::new(),
            gateway_model_id: String::new(),
            extra: BTreeMap::new(),
        }
    }
}

/// Validation questions with reference answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub entries: Vec<BenchmarkEntry>,
    pub meta: BenchmarkMeta,
}

impl Benchmark {
    pub fn new(entries: Vec<BenchmarkEntry>, meta: BenchmarkMeta) -> Result<Self, DatasetError> {
        let mut seen = BTreeSet::new();
        for entry in &entries {
            if entry.reference_answer.is_empty() {
                return Err(DatasetError::EmptyField {
                    question_id: entry.question_id.clone(),
                    field: "reference_answer",
                });
            }
            if !seen.insert(entry.question_id.clone()) {
                return Err(DatasetError::DuplicateQuestionId {
                    question_id: entry.question_id.clone(),
                });
            }
        }
        Ok(Benchmark { entries, meta })
    }

    pub fn merge(parts: Vec<Benchmark>) -> Result<Benchmark, DatasetError> {
        let mut parts = parts.into_iter();
        let first = parts.next().expect("merge needs at least one benchmark");
        let meta = first.meta.clone();
        let mut entries = first.entries;
        for part in parts {
            entries.extend(part.entries);
        }
        Benchmark::new(entries, meta)
    }
}

/// Fine-tuning hyperparameters emitted alongside the datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub batch_size: u32,
    pub gradient_accumulation_steps: u32,
    pub epochs: u32,
    pub method: String,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            learning_rate: 2e-4,
            batch_size: 4,
            gradient_accumulation_steps: 1,
            epochs: 10,
            method: "lora".to_string(),
        }
    }
}

/// Splits questions into train and validation sets, stratified per
/// character. Within each character the validation picks are seeded by
/// `derive_seed("split", seed, character_id)`; both outputs preserve the
/// input order.
pub fn split(questions: &[Question], policy: &SplitPolicy) -> (Vec<Question>, Vec<Question>) {
    assert!(!questions.is_empty(), "split requires at least one question");
    assert!(
        policy.ratio_train > 0 && policy.ratio_val > 0,
        "split ratios must be positive"
    );
    let denom = (policy.ratio_train + policy.ratio_val) as usize;
    let mut by_character: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, question) in questions.iter().enumerate() {
        by_character
            .entry(question.character_id.as_str())
            .or_default()
            .push(i);
    }
    let mut in_val = vec![false; questions.len()];
    for (character_id, mut indices) in by_character {
        let n = indices.len();
        let val_count = if n < 2 { 0 } else { (n / denom).max(1) };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("split", policy.seed, character_id));
        indices.shuffle(&mut rng);
        for &i in indices.iter().take(val_count) {
            in_val[i] = true;
        }
    }
    let train = questions
        .iter()
        .enumerate()
        .filter(|(i, _)| !in_val[*i])
        .map(|(_, q)| q.clone())
        .collect();
    let val = questions
        .iter()
        .enumerate()
        .filter(|(i, _)| in_val[*i])
        .map(|(_, q)| q.clone())
        .collect();
    (train, val)
}

/// The system directive stamped onto every instruction record.
pub fn role_directive(display_name: &str, story_title: &str) -> String {
    format!(
        "You are a brilliant role-player. Play the role of {display_name} in {story_title} and answer the question in character."
    )
}

/// Answers every training question with the given variant and wraps the
/// pairs into instruction records. Explain answers keep the explanation
/// in record meta; `include_explanation` appends it to `output` instead
/// of leaving the output as the bare answer.
pub fn build_training_set(
    pipeline: &Pipeline,
    train_questions: &[Question],
    variant: PromptVariant,
    character: &CharacterProfile,
    include_explanation: bool,
    meta: DatasetMeta,
) -> Result<Dataset, DatasetError> {
    let pairs = pipeline.generate_answers(train_questions, variant, character)?;
    let system = role_directive(&character.display_name, pipeline.story_title());
    let records = train_questions
        .iter()
        .zip(pairs)
        .map(|(question, pair)| {
            let output = match (&pair.explanation, include_explanation) {
                (Some(explanation), true) if !explanation.is_empty() => {
                    format!("{}\nEXPLANATION: {}", pair.answer, explanation)
                }
                _ => pair.answer.clone(),
            };
            InstructionRecord {
                system: system.clone(),
                input: question.text.clone(),
                output,
                meta: RecordMeta {
                    question_id: question.question_id.clone(),
                    character_id: question.character_id.clone(),
                    plot_id: question.plot_id.clone(),
                    variant,
                    explanation: pair.explanation,
                },
            }
        })
        .collect();
    Dataset::new(records, variant, meta)
}

/// Answers the validation questions with `meta.reference_variant` and
/// records them as benchmark entries, in question order.
pub fn build_benchmark(
    pipeline: &Pipeline,
    val_questions: &[Question],
    character: &CharacterProfile,
    meta: BenchmarkMeta,
) -> Result<Benchmark, DatasetError> {
    let pairs = pipeline.generate_answers(val_questions, meta.reference_variant, character)?;
    let entries = val_questions
        .iter()
        .zip(pairs)
        .map(|(question, pair)| BenchmarkEntry {
            question_id: question.question_id.clone(),
            question_text: question.text.clone(),
            reference_answer: pair.answer,
            character_id: question.character_id.clone(),
        })
        .collect();
    Benchmark::new(entries, meta)
}

fn io_error(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(path: &Path, message: impl Into<String>) -> DatasetError {
    DatasetError::Malformed {
        path: path.display().to_string(),
        message: message.into(),
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetFileMeta {
    variant: PromptVariant,
    #[serde(flatten)]
    meta: DatasetMeta,
}

/// Writes a dataset as JSONL: a `_meta` header line carrying the variant
/// and dataset metadata, then one record per line.
pub fn export_dataset(dataset: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let header = serde_json::to_value(DatasetFileMeta {
        variant: dataset.variant,
        meta: dataset.meta.clone(),
    })
    .expect("meta serializes");
    let records: Vec<serde_json::Value> = dataset
        .records
        .iter()
        .map(|r| serde_json::to_value(r).expect("record serializes"))
        .collect();
    crate::io::write_jsonl(path, Some(&header), &records).map_err(|e| io_error(path, e))
}

pub fn import_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let (meta, values) = crate::io::read_jsonl(path).map_err(|e| io_error(path, e))?;
    let meta = meta.ok_or_else(|| malformed(path, "missing _meta header line"))?;
    let file_meta: DatasetFileMeta =
        serde_json::from_value(meta).map_err(|e| malformed(path, format!("_meta: {e}")))?;
    let records = values
        .into_iter()
        .map(|v| serde_json::from_value::<InstructionRecord>(v))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| malformed(path, e.to_string()))?;
    Dataset::new(records, file_meta.variant, file_meta.meta)
}

/// Writes a benchmark as JSONL, one entry per line. The `_meta` header is
/// written only when the metadata differs from the default, so an empty
/// default benchmark exports as an empty file.
pub fn export_benchmark(benchmark: &Benchmark, path: &Path) -> Result<(), DatasetError> {
    let header = (benchmark.meta != BenchmarkMeta::default())
        .then(|| serde_json::to_value(&benchmark.meta).expect("meta serializes"));
    let entries: Vec<serde_json::Value> = benchmark
        .entries
        .iter()
        .map(|e| serde_json::to_value(e).expect("entry serializes"))
        .collect();
    crate::io::write_jsonl(path, header.as_ref(), &entries).map_err(|e| io_error(path, e))
}

pub fn import_benchmark(path: &Path) -> Result<Benchmark, DatasetError> {
    let (meta, values) = crate::io::read_jsonl(path).map_err(|e| io_error(path, e))?;
    let meta = match meta {
        Some(value) => serde_json::from_value(value)
            .map_err(|e| malformed(path, format!("_meta: {e}")))?,
        None => BenchmarkMeta::default(),
    };
    let entries = values
        .into_iter()
        .map(serde_json::from_value::<BenchmarkEntry>)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| malformed(path, e.to_string()))?;
    Benchmark::new(entries, meta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PredictionRecord {
    question_id: String,
    text: String,
}

/// Writes model predictions as JSONL records of `{question_id, text}`.
pub fn export_predictions(
    predictions: &BTreeMap<String, String>,
    meta: Option<&serde_json::Value>,
    path: &Path,
) -> Result<(), DatasetError> {
    let records: Vec<serde_json::Value> = predictions
        .iter()
        .map(|(question_id, text)| {
            serde_json::to_value(PredictionRecord {
                question_id: question_id.clone(),
                text: text.clone(),
            })
            .expect("prediction serializes")
        })
        .collect();
    crate::io::write_jsonl(path, meta, &records).map_err(|e| io_error(path, e))
}

/// Reads a predictions file into a question_id → text map.
pub fn import_predictions(path: &Path) -> Result<BTreeMap<String, String>, DatasetError> {
    let (_, values) = crate::io::read_jsonl(path).map_err(|e| io_error(path, e))?;
    let mut predictions = BTreeMap::new();
    for value in values {
        let record: PredictionRecord =
            serde_json::from_value(value).map_err(|e| malformed(path, e.to_string()))?;
        if predictions
            .insert(record.question_id.clone(), record.text)
            .is_some()
        {
            return Err(DatasetError::DuplicateQuestionId {
                question_id: record.question_id,
            });
        }
    }
    Ok(predictions)
}

/// The `key=value` body of a fine-tune config file.
pub fn finetune_config_text(config: &FinetuneConfig) -> String {
    format!(
        "learning_rate={}\nbatch_size={}\ngradient_accumulation_steps={}\nepochs={}\nmethod={}\n",
        config.learning_rate,
        config.batch_size,
        config.gradient_accumulation_steps,
        config.epochs,
        config.method
    )
}

/// Writes the fine-tuning hyperparameters as `key=value` lines.
pub fn export_finetune_config(config: &FinetuneConfig, path: &Path) -> Result<(), DatasetError> {
    crate::io::atomic_write(path, finetune_config_text(config).as_bytes())
        .map_err(|e| io_error(path, e))
}

pub fn import_finetune_config(path: &Path) -> Result<FinetuneConfig, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut config = FinetuneConfig::default();
    for (index, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| malformed(path, format!("line {}: expected key=value", index + 1)))?;
        let bad = |e: &dyn std::fmt::Display| {
            malformed(path, format!("line {}: {key}: {e}", index + 1))
        };
        match key {
            "learning_rate" => config.learning_rate = value.parse().map_err(|e| bad(&e))?,
            "batch_size" => config.batch_size = value.parse().map_err(|e| bad(&e))?,
            "gradient_accumulation_steps" => {
                config.gradient_accumulation_steps = value.parse().map_err(|e| bad(&e))?
            }
            "epochs" => config.epochs = value.parse().map_err(|e| bad(&e))?,
            "method" => config.method = value.to_string(),
            other => return Err(malformed(path, format!("line {}: unknown key {other}", index + 1))),
        }
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ExampleSet, Stage, Story};
    use crate::gateway::{Gateway, GenerationConfig, MockSource};
    use crate::pipeline::{QuestionKind, StageExamples};
    use crate::prompt::TemplateSet;
    use proptest::prelude::*;

    fn question(character_id: &str, k: usize) -> Question {
        Question {
            question_id: format!("{character_id}-plot001-q{k}"),
            plot_id: format!("{character_id}-plot001"),
            character_id: character_id.to_string(),
            text: format!("Why did {character_id} do thing {k}?"),
            kind: QuestionKind::Why,
        }
    }

    fn questions_for(character_id: &str, n: usize) -> Vec<Question> {
        (1..=n).map(|k| question(character_id, k)).collect()
    }

    #[test]
    fn seventy_five_questions_split_sixty_three_twelve() {
        let questions = questions_for("mira-vane", 75);
        let (train, val) = split(&questions, &SplitPolicy::default());
        assert_eq!(train.len(), 63);
        assert_eq!(val.len(), 12);
    }

    #[test]
    fn small_counts_follow_the_floor_rule() {
        for (n, expected_val) in [(1, 0), (2, 1), (5, 1), (6, 1), (7, 1), (11, 1), (12, 2)] {
            let questions = questions_for("mira-vane", n);
            let (train, val) = split(&questions, &SplitPolicy::default());
            assert_eq!(val.len(), expected_val, "n={n}");
            assert_eq!(train.len(), n - expected_val, "n={n}");
        }
    }

    #[test]
    fn split_is_deterministic_and_seed_sensitive() {
        let questions = questions_for("mira-vane", 75);
        let (_, val_a) = split(&questions, &SplitPolicy::with_seed(101));
        let (_, val_b) = split(&questions, &SplitPolicy::with_seed(101));
        assert_eq!(val_a, val_b);
        let (_, val_c) = split(&questions, &SplitPolicy::with_seed(202));
        assert_ne!(val_a, val_c, "different seeds pick different members");
    }

    #[test]
    fn split_is_stratified_per_character() {
        let mut questions = Vec::new();
        for character in ["mira-vane", "old-tamsin", "corvo-hatch"] {
            questions.extend(questions_for(character, 6));
        }
        let (train, val) = split(&questions, &SplitPolicy::default());
        assert_eq!(train.len(), 15);
        assert_eq!(val.len(), 3);
        for character in ["mira-vane", "old-tamsin", "corvo-hatch"] {
            assert_eq!(
                val.iter().filter(|q| q.character_id == character).count(),
                1,
                "each character contributes exactly one validation question"
            );
        }
    }

    #[test]
    fn split_membership_ignores_input_order() {
        let forward = questions_for("mira-vane", 30);
        let mut reversed = forward.clone();
        reversed.reverse();
        let policy = SplitPolicy::default();
        let (_, val_forward) = split(&forward, &policy);
        let (_, val_reversed) = split(&reversed, &policy);
        let ids = |v: &[Question]| -> BTreeSet<String> {
            v.iter().map(|q| q.question_id.clone()).collect()
        };
        assert_eq!(ids(&val_forward), ids(&val_reversed));
    }

    #[test]
    fn split_outputs_preserve_input_order() {
        let questions = questions_for("mira-vane", 20);
        let (train, val) = split(&questions, &SplitPolicy::default());
        let position = |q: &Question| {
            questions
                .iter()
                .position(|x| x.question_id == q.question_id)
                .unwrap()
        };
        assert!(train.windows(2).all(|w| position(&w[0]) < position(&w[1])));
        assert!(val.windows(2).all(|w| position(&w[0]) < position(&w[1])));
    }

    proptest! {
        #[test]
        fn split_partitions_and_obeys_the_floor_rule(
            counts in proptest::collection::vec(1usize..40, 1..5),
            seed in 0u64..1000,
        ) {
            let mut questions = Vec::new();
            for (c, n) in counts.iter().enumerate() {
                questions.extend(questions_for(&format!("char-{c}"), *n));
            }
            let policy = SplitPolicy::with_seed(seed);
            let (train, val) = split(&questions, &policy);
            prop_assert_eq!(train.len() + val.len(), questions.len());
            let train_ids: BTreeSet<_> = train.iter().map(|q| &q.question_id).collect();
            let val_ids: BTreeSet<_> = val.iter().map(|q| &q.question_id).collect();
            prop_assert!(train_ids.is_disjoint(&val_ids));
            for (c, n) in counts.iter().enumerate() {
                let id = format!("char-{c}");
                let got = val.iter().filter(|q| q.character_id == id).count();
                let expected = if *n < 2 { 0 } else { (n / 6).max(1) };
                prop_assert_eq!(got, expected);
            }
            let (train2, val2) = split(&questions, &policy);
            prop_assert_eq!(train, train2);
            prop_assert_eq!(val, val2);
        }
    }

    fn character() -> CharacterProfile {
        CharacterProfile {
            character_id: "mira-vane".into(),
            display_name: "Mira Vane".into(),
        }
    }

    fn stage_examples() -> StageExamples {
        StageExamples {
            plot: ExampleSet {
                stage: Stage::Plot,
                items: vec!["plot exemplar".into()],
            },
            question: ExampleSet {
                stage: Stage::Question,
                items: vec!["question exemplar".into()],
            },
            answer: ExampleSet {
                stage: Stage::Answer,
                items: vec!["answer exemplar".into()],
            },
        }
    }

    struct Ctx {
        gateway: Gateway,
        templates: TemplateSet,
        story: Story,
    }

    impl Ctx {
        fn new() -> Self {
            Ctx {
                gateway: Gateway::mock(
                    MockSource::from_fn(|req| {
                        let qid = req.request_tag.rsplit('/').next().unwrap();
                        if req.request_tag.starts_with("answer-explain/") {
                            Ok(format!(
                                "A considered answer about {qid}.\nEXPLANATION: Because the ledger says so."
                            ))
                        } else {
                            Ok(format!("A considered answer about {qid}."))
                        }
                    }),
                    2,
                ),
                templates: TemplateSet::builtin(),
                story: Story {
                    text: "Iron Hollow was a foundry town.".into(),
                    char_count: 31,
                },
            }
        }

        fn pipeline(&self) -> Pipeline<'_> {
            Pipeline::new(
                &self.gateway,
                &self.templates,
                GenerationConfig::default(),
                &self.story,
                "The Ballad of Iron Hollow",
                stage_examples(),
            )
        }
    }

    #[test]
    fn training_set_has_one_record_per_question() {
        let ctx = Ctx::new();
        let questions = questions_for("mira-vane", 3);
        let dataset = build_training_set(
            &ctx.pipeline(),
            &questions,
            PromptVariant::Base,
            &character(),
            false,
            DatasetMeta::default(),
        )
        .unwrap();
        assert_eq!(dataset.records.len(), 3);
        assert_eq!(dataset.variant, PromptVariant::Base);
        for (record, question) in dataset.records.iter().zip(&questions) {
            assert!(record.system.contains("Play the role of Mira Vane"));
            assert_eq!(record.input, question.text);
            assert!(record.output.contains(&question.question_id));
            assert!(record.meta.explanation.is_none());
        }
        assert_eq!(dataset.character_ids.len(), 1);
    }

    #[test]
    fn explain_keeps_explanations_out_of_output_by_default() {
        let ctx = Ctx::new();
        let questions = questions_for("mira-vane", 2);
        let dataset = build_training_set(
            &ctx.pipeline(),
            &questions,
            PromptVariant::Explain,
            &character(),
            false,
            DatasetMeta::default(),
        )
        .unwrap();
        for record in &dataset.records {
            assert!(!record.output.contains("EXPLANATION:"));
            assert_eq!(
                record.meta.explanation.as_deref(),
                Some("Because the ledger says so.")
            );
        }

        let concatenated = build_training_set(
            &ctx.pipeline(),
            &questions,
            PromptVariant::Explain,
            &character(),
            true,
            DatasetMeta::default(),
        )
        .unwrap();
        for record in &concatenated.records {
            assert!(record.output.contains("\nEXPLANATION: Because the ledger says so."));
        }
    }

    #[test]
    fn merge_concatenates_characters_and_rejects_mismatches() {
        let ctx = Ctx::new();
        let pipeline = ctx.pipeline();
        let mira = build_training_set(
            &pipeline,
            &questions_for("mira-vane", 3),
            PromptVariant::Base,
            &character(),
            false,
            DatasetMeta::default(),
        )
        .unwrap();
        let tamsin = build_training_set(
            &pipeline,
            &questions_for("old-tamsin", 2),
            PromptVariant::Base,
            &CharacterProfile {
                character_id: "old-tamsin".into(),
                display_name: "Old Tamsin".into(),
            },
            false,
            DatasetMeta::default(),
        )
        .unwrap();
        let merged = Dataset::merge(vec![mira.clone(), tamsin]).unwrap();
        assert_eq!(merged.records.len(), 5);
        assert_eq!(merged.character_ids.len(), 2);

        let emotion = build_training_set(
            &pipeline,
            &questions_for("old-tamsin", 2),
            PromptVariant::Emotion,
            &CharacterProfile {
                character_id: "old-tamsin".into(),
                display_name: "Old Tamsin".into(),
            },
            false,
            DatasetMeta::default(),
        )
        .unwrap();
        assert!(matches!(
            Dataset::merge(vec![mira.clone(), emotion]),
            Err(DatasetError::VariantMismatch { .. })
        ));
        assert!(matches!(
            Dataset::merge(vec![mira.clone(), mira]),
            Err(DatasetError::DuplicateQuestionId { .. })
        ));
    }

    #[test]
    fn benchmark_entries_follow_question_order() {
        let ctx = Ctx::new();
        let questions = questions_for("mira-vane", 4);
        let benchmark = build_benchmark(
            &ctx.pipeline(),
            &questions,
            &character(),
            BenchmarkMeta::default(),
        )
        .unwrap();
        assert_eq!(benchmark.entries.len(), 4);
        for (entry, question) in benchmark.entries.iter().zip(&questions) {
            assert_eq!(entry.question_id, question.question_id);
            assert_eq!(entry.question_text, question.text);
            assert!(entry.reference_answer.contains(&question.question_id));
        }
        assert_eq!(benchmark.meta.reference_variant, PromptVariant::Base);
    }

    #[test]
    fn dataset_export_round_trips() {
        let ctx = Ctx::new();
        let dataset = build_training_set(
            &ctx.pipeline(),
            &questions_for("mira-vane", 3),
            PromptVariant::Explain,
            &character(),
            false,
            DatasetMeta {
                created_at: "1970-01-01T00:00:00Z".into(),
                template_hashes: BTreeMap::from([("plot".into(), "abc123".into())]),
                gateway_model_id: "gpt-4o".into(),
                extra: BTreeMap::from([("config_hash".to_string(), serde_json::json!("deadbeef"))]),
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset-explain.jsonl");
        export_dataset(&dataset, &path).unwrap();
        let back = import_dataset(&path).unwrap();
        assert_eq!(back, dataset);
    }

    #[test]
    fn empty_default_benchmark_exports_as_zero_lines() {
        let benchmark = Benchmark::new(Vec::new(), BenchmarkMeta::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("benchmark.jsonl");
        export_benchmark(&benchmark, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
        assert_eq!(import_benchmark(&path).unwrap(), benchmark);
    }

    #[test]
    fn benchmark_with_meta_round_trips() {
        let benchmark = Benchmark::new(
            vec![BenchmarkEntry {
                question_id: "q1".into(),
                question_text: "Why?".into(),
                reference_answer: "Because.".into(),
                character_id: "mira-vane".into(),
            }],
            BenchmarkMeta {
                reference_variant: PromptVariant::Base,
                created_at: "1970-01-01T00:00:00Z".into(),
                gateway_model_id: "gpt-4o".into(),
                extra: BTreeMap::from([("split_seed".to_string(), serde_json::json!(101))]),
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("benchmark.jsonl");
        export_benchmark(&benchmark, &path).unwrap();
        assert_eq!(import_benchmark(&path).unwrap(), benchmark);
    }

    #[test]
    fn predictions_round_trip_and_reject_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("predictions-demo.jsonl");
        let predictions = BTreeMap::from([
            ("q1".to_string(), "first answer".to_string()),
            ("q2".to_string(), "second answer".to_string()),
        ]);
        export_predictions(&predictions, None, &path).unwrap();
        assert_eq!(import_predictions(&path).unwrap(), predictions);

        std::fs::write(
            &path,
            "{\"question_id\":\"q1\",\"text\":\"a\"}\n{\"question_id\":\"q1\",\"text\":\"b\"}\n",
        )
        .unwrap();
        assert!(matches!(
            import_predictions(&path),
            Err(DatasetError::DuplicateQuestionId { .. })
        ));
    }

    #[test]
    fn finetune_config_exports_the_expected_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("finetune.cfg");
        export_finetune_config(&FinetuneConfig::default(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("learning_rate=0.0002\n"));
        assert!(text.contains("batch_size=4\n"));
        assert!(text.contains("gradient_accumulation_steps=1\n"));
        assert!(text.contains("epochs=10\n"));
        assert!(text.contains("method=lora\n"));
        assert_eq!(import_finetune_config(&path).unwrap(), FinetuneConfig::default());

        std::fs::write(&path, format!("# run provenance\n{text}")).unwrap();
        assert_eq!(
            import_finetune_config(&path).unwrap(),
            FinetuneConfig::default(),
            "comment lines are skipped"
        );
    }

    #[test]
    fn empty_output_is_rejected() {
        let record = InstructionRecord {
            system: "s".into(),
            input: "i".into(),
            output: String::new(),
            meta: RecordMeta {
                question_id: "q1".into(),
                character_id: "c".into(),
                plot_id: "p".into(),
                variant: PromptVariant::Base,
                explanation: None,
            },
        };
        assert!(matches!(
            Dataset::new(vec![record], PromptVariant::Base, DatasetMeta::default()),
            Err(DatasetError::EmptyField { field: "output", .. })
        ));
    }
}
