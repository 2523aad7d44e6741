//! Subcommand front end tying the workspace, gateway, pipeline, and
//! evaluators together.
//!
//! Every artifact is written atomically and carries a `_meta` block with
//! the config hash and seeds, so identical configurations are
//! byte-comparable across runs.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::corpus::{load_examples, Stage, StoryWorkspace};
use crate::dataset::{
    self, Benchmark, BenchmarkMeta, DatasetMeta, FinetuneConfig, SplitPolicy,
};
use crate::gateway::{
    BackendKind, Gateway, GenerationConfig, LiveClient, MockSource, ReplayCache, RetryPolicy,
};
use crate::judge::{self, JudgeHarness, RankTable};
use crate::pipeline::{DialogPair, Pipeline, Plot, Question, StageExamples};
use crate::prompt::{PromptVariant, TemplateSet};
use crate::rouge::{self, RougeReport, TokenMode};

pub const DEFAULT_SPLIT_SEED: u64 = 101;
pub const DEFAULT_SHUFFLE_SEED: u64 = 202;
pub const DEFAULT_TARGET_QUESTIONS: usize = 75;
const DEFAULT_CONCURRENCY: usize = 4;
const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
/// Timestamp written by offline backends so replays stay byte-identical.
const EPOCH: &str = "1970-01-01T00:00:00Z";

#[derive(Parser)]
#[command(
    name = "roleforge",
    version,
    about = "Generate role-play dialogue datasets in three stages and evaluate candidate models"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Workspace directory holding workspace.toml, story.txt, examples/.
    #[arg(long, global = true, default_value = ".")]
    workspace: PathBuf,
    /// Output directory (default: <workspace>/out).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Backend: live, replay, or mock. Overrides workspace.toml.
    #[arg(long, global = true)]
    backend: Option<BackendKind>,
    /// Sets both the split and shuffle seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Seed for the train/validation split (default 101).
    #[arg(long, global = true)]
    split_seed: Option<u64>,
    /// Seed for judge panel shuffling (default 202).
    #[arg(long, global = true)]
    shuffle_seed: Option<u64>,
    /// Model identifier sent to the endpoint.
    #[arg(long, global = true)]
    model_id: Option<String>,
    /// Chat-completions URL for the live backend.
    #[arg(long, global = true)]
    endpoint_url: Option<String>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    #[arg(long, global = true)]
    top_k: Option<u32>,
    #[arg(long, global = true)]
    top_p: Option<f64>,
    #[arg(long, global = true)]
    max_tokens: Option<u32>,
    /// Concurrent in-flight requests (default 4).
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// Live-backend attempt budget per request (default 5).
    #[arg(long, global = true)]
    max_attempts: Option<u32>,
    /// Questions to accumulate per character (default 75).
    #[arg(long, global = true)]
    target_questions: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate story plots for every character.
    GenPlots {
        /// Plot rounds per character; each round asks for 5 plots.
        #[arg(long, default_value_t = 1)]
        rounds: u32,
    },
    /// Generate plots and questions until each character reaches the
    /// question target.
    GenQuestions,
    /// Answer the accumulated questions with one prompt variant.
    GenAnswers {
        #[arg(long)]
        variant: PromptVariant,
    },
    /// Split the questions and build per-variant training datasets plus
    /// the fine-tune config.
    BuildDataset {
        /// Build only this variant (default: all four).
        #[arg(long)]
        variant: Option<PromptVariant>,
        /// Concatenate explanations into Explain record outputs.
        #[arg(long)]
        include_explanation: bool,
    },
    /// Answer the validation split and export the reference benchmark.
    BuildBenchmark,
    /// Score prediction files against the benchmark with Rouge-L.
    EvalRouge {
        #[arg(long)]
        benchmark: PathBuf,
        /// Prediction file; repeat per model (predictions-<model>.jsonl).
        #[arg(long = "pred", required = true)]
        predictions: Vec<PathBuf>,
        #[arg(long, default_value_t = rouge::DEFAULT_BETA)]
        beta: f64,
        /// Tokenization: word, cjk_char, or mixed.
        #[arg(long, default_value = "mixed")]
        mode: TokenMode,
    },
    /// Rank exactly four models' predictions with the judge.
    EvalJudge {
        #[arg(long)]
        benchmark: PathBuf,
        /// Prediction file; must be given exactly four times.
        #[arg(long = "pred", required = true)]
        predictions: Vec<PathBuf>,
    },
    /// Print the evaluation tables from the output directory.
    Report,
}

/// Parses argv and runs the selected subcommand. Returns the process
/// exit code: 0 success, 1 domain error, 2 usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let ctx = RunContext::build(&cli.global)?;
    match cli.command {
        Command::GenPlots { rounds } => gen_plots(&ctx, rounds),
        Command::GenQuestions => gen_questions(&ctx),
        Command::GenAnswers { variant } => gen_answers(&ctx, variant),
        Command::BuildDataset {
            variant,
            include_explanation,
        } => build_dataset(&ctx, variant, include_explanation),
        Command::BuildBenchmark => build_benchmark(&ctx),
        Command::EvalRouge {
            benchmark,
            predictions,
            beta,
            mode,
        } => eval_rouge(&ctx, &benchmark, &predictions, beta, mode),
        Command::EvalJudge {
            benchmark,
            predictions,
        } => eval_judge(&ctx, &benchmark, &predictions),
        Command::Report => report(&ctx),
    }
}

struct RunContext {
    workspace: StoryWorkspace,
    out_dir: PathBuf,
    backend: BackendKind,
    gateway: Gateway,
    templates: TemplateSet,
    generation: GenerationConfig,
    split_seed: u64,
    shuffle_seed: u64,
    target_questions: usize,
    config_hash: String,
    created_at: String,
}

impl RunContext {
    fn build(global: &GlobalArgs) -> Result<Self> {
        let workspace = StoryWorkspace::load(&global.workspace).with_context(|| {
            format!("loading workspace at {}", global.workspace.display())
        })?;
        let out_dir = global
            .out_dir
            .clone()
            .unwrap_or_else(|| workspace.root.join("out"));
        let backend = match (global.backend, &workspace.config.backend) {
            (Some(kind), _) => kind,
            (None, Some(name)) => name
                .parse()
                .map_err(|e: String| anyhow::anyhow!("workspace.toml: {e}"))?,
            (None, None) => BackendKind::Live,
        };

        let mut generation = GenerationConfig::default();
        if let Some(model_id) = global
            .model_id
            .clone()
            .or_else(|| workspace.config.model_id.clone())
        {
            generation.model_id = model_id;
        }
        if let Some(t) = global.temperature {
            generation.temperature = t;
        }
        if let Some(k) = global.top_k {
            generation.top_k = k;
        }
        if let Some(p) = global.top_p {
            generation.top_p = p;
        }
        if let Some(m) = global.max_tokens {
            generation.max_tokens = m;
        }

        let split_seed = global
            .split_seed
            .or(global.seed)
            .unwrap_or(DEFAULT_SPLIT_SEED);
        let shuffle_seed = global
            .shuffle_seed
            .or(global.seed)
            .unwrap_or(DEFAULT_SHUFFLE_SEED);
        let target_questions = global
            .target_questions
            .or(workspace.config.target_questions)
            .unwrap_or(DEFAULT_TARGET_QUESTIONS);
        let concurrency = global
            .concurrency
            .or(workspace.config.concurrency)
            .unwrap_or(DEFAULT_CONCURRENCY);

        let templates = TemplateSet::with_overrides(&workspace.templates_dir())?;
        let cache = ReplayCache::new(workspace.cache_dir());
        let gateway = match backend {
            BackendKind::Live => {
                let mut retry = RetryPolicy::default();
                if let Some(attempts) = global.max_attempts.or(workspace.config.max_attempts) {
                    retry.max_attempts = attempts;
                }
                let endpoint = global
                    .endpoint_url
                    .clone()
                    .or_else(|| workspace.config.endpoint_url.clone())
                    .unwrap_or_else(|| DEFAULT_ENDPOINT.to_string());
                let client = LiveClient::from_env(endpoint, retry)?;
                Gateway::live(client, cache, concurrency)
            }
            BackendKind::Replay => Gateway::replay(cache, concurrency),
            BackendKind::Mock => {
                let source = MockSource::from_dir(&workspace.mock_dir())
                    .with_context(|| format!("loading mock fixtures from {}", workspace.mock_dir().display()))?;
                Gateway::mock_recording(source, cache, concurrency)
            }
        };

        let created_at = if backend == BackendKind::Live {
            chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
        } else {
            EPOCH.to_string()
        };

        let knobs = json!({
            "story_id": workspace.config.story_id,
            "backend": backend.as_str(),
            "generation": generation,
            "split_seed": split_seed,
            "shuffle_seed": shuffle_seed,
            "target_questions": target_questions,
            "template_hashes": templates.hashes(),
        });
        let digest = Sha256::digest(serde_json::to_vec(&knobs).expect("knobs serialize"));
        let config_hash: String = digest.iter().map(|b| format!("{b:02x}")).collect();

        Ok(RunContext {
            workspace,
            out_dir,
            backend,
            gateway,
            templates,
            generation,
            split_seed,
            shuffle_seed,
            target_questions,
            config_hash,
            created_at,
        })
    }

    fn meta(&self) -> serde_json::Value {
        json!({
            "config_hash": self.config_hash,
            "split_seed": self.split_seed,
            "shuffle_seed": self.shuffle_seed,
            "backend": self.backend.as_str(),
            "model_id": self.generation.model_id,
            "created_at": self.created_at,
        })
    }

    fn meta_extra(&self) -> BTreeMap<String, serde_json::Value> {
        match self.meta() {
            serde_json::Value::Object(map) => map.into_iter().collect(),
            _ => unreachable!("meta is an object"),
        }
    }

    fn stage_examples(&self) -> Result<StageExamples> {
        let dir = self.workspace.examples_dir();
        Ok(StageExamples {
            plot: load_examples(&dir, Stage::Plot)?,
            question: load_examples(&dir, Stage::Question)?,
            answer: load_examples(&dir, Stage::Answer)?,
        })
    }

    fn pipeline<'a>(&'a self, examples: StageExamples) -> Pipeline<'a> {
        Pipeline::new(
            &self.gateway,
            &self.templates,
            self.generation.clone(),
            &self.workspace.story,
            self.workspace.config.title.clone(),
            examples,
        )
    }

    fn dataset_meta(&self) -> DatasetMeta {
        DatasetMeta {
            created_at: self.created_at.clone(),
            template_hashes: self.templates.hashes(),
            gateway_model_id: self.generation.model_id.clone(),
            extra: self.meta_extra(),
        }
    }

    fn split_policy(&self) -> SplitPolicy {
        SplitPolicy::with_seed(self.split_seed)
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn write_records<T: serde::Serialize>(
    ctx: &RunContext,
    name: &str,
    records: &[T],
) -> Result<PathBuf> {
    let path = ctx.out_path(name);
    let values: Vec<serde_json::Value> = records
        .iter()
        .map(|r| serde_json::to_value(r).expect("record serializes"))
        .collect();
    crate::io::write_jsonl(&path, Some(&ctx.meta()), &values)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn write_json_object(
    ctx: &RunContext,
    name: &str,
    payload: serde_json::Value,
) -> Result<PathBuf> {
    let path = ctx.out_path(name);
    let mut object = match payload {
        serde_json::Value::Object(map) => map,
        _ => unreachable!("payload is an object"),
    };
    object.insert("_meta".to_string(), ctx.meta());
    let mut bytes =
        serde_json::to_vec_pretty(&serde_json::Value::Object(object)).expect("payload serializes");
    bytes.push(b'\n');
    crate::io::atomic_write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn read_questions(ctx: &RunContext) -> Result<Vec<Question>> {
    let path = ctx.out_path("questions.jsonl");
    if !path.exists() {
        bail!(
            "{} not found; run `roleforge gen-questions` first",
            path.display()
        );
    }
    let (_, values) =
        crate::io::read_jsonl(&path).with_context(|| format!("reading {}", path.display()))?;
    values
        .into_iter()
        .map(|v| serde_json::from_value(v).map_err(anyhow::Error::from))
        .collect::<Result<Vec<Question>>>()
        .with_context(|| format!("parsing {}", path.display()))
}

fn gen_plots(ctx: &RunContext, rounds: u32) -> Result<()> {
    let pipeline = ctx.pipeline(ctx.stage_examples()?);
    let mut plots: Vec<Plot> = Vec::new();
    for character in &ctx.workspace.characters {
        plots.extend(pipeline.generate_plots(character, rounds)?);
    }
    let path = write_records(ctx, "plots.jsonl", &plots)?;
    println!(
        "wrote {} plots for {} characters to {}",
        plots.len(),
        ctx.workspace.characters.len(),
        path.display()
    );
    Ok(())
}

fn gen_questions(ctx: &RunContext) -> Result<()> {
    let pipeline = ctx.pipeline(ctx.stage_examples()?);
    let mut plots: Vec<Plot> = Vec::new();
    let mut questions: Vec<Question> = Vec::new();
    for character in &ctx.workspace.characters {
        let (character_plots, character_questions) =
            pipeline.accumulate_questions(character, ctx.target_questions)?;
        plots.extend(character_plots);
        questions.extend(character_questions);
    }
    write_records(ctx, "plots.jsonl", &plots)?;
    let path = write_records(ctx, "questions.jsonl", &questions)?;
    println!(
        "wrote {} questions over {} plots to {}",
        questions.len(),
        plots.len(),
        path.display()
    );
    Ok(())
}

/// Groups questions by character in roster order, erroring on ids outside
/// the roster.
fn questions_by_character<'q>(
    ctx: &RunContext,
    questions: &'q [Question],
) -> Result<Vec<(crate::corpus::CharacterProfile, Vec<&'q Question>)>> {
    let roster: BTreeMap<&str, &crate::corpus::CharacterProfile> = ctx
        .workspace
        .characters
        .iter()
        .map(|c| (c.character_id.as_str(), c))
        .collect();
    for question in questions {
        if !roster.contains_key(question.character_id.as_str()) {
            bail!(
                "question {} names character {} which is not in the workspace roster",
                question.question_id,
                question.character_id
            );
        }
    }
    Ok(ctx
        .workspace
        .characters
        .iter()
        .map(|character| {
            let owned: Vec<&Question> = questions
                .iter()
                .filter(|q| q.character_id == character.character_id)
                .collect();
            (character.clone(), owned)
        })
        .collect())
}

fn gen_answers(ctx: &RunContext, variant: PromptVariant) -> Result<()> {
    let questions = read_questions(ctx)?;
    let pipeline = ctx.pipeline(ctx.stage_examples()?);
    let mut pairs: Vec<DialogPair> = Vec::new();
    for (character, owned) in questions_by_character(ctx, &questions)? {
        if owned.is_empty() {
            continue;
        }
        let cloned: Vec<Question> = owned.into_iter().cloned().collect();
        pairs.extend(pipeline.generate_answers(&cloned, variant, &character)?);
    }
    let path = write_records(ctx, &format!("dialogs-{variant}.jsonl"), &pairs)?;
    println!("wrote {} {variant} dialog pairs to {}", pairs.len(), path.display());
    Ok(())
}

fn build_dataset(
    ctx: &RunContext,
    variant: Option<PromptVariant>,
    include_explanation: bool,
) -> Result<()> {
    let questions = read_questions(ctx)?;
    let (train, val) = dataset::split(&questions, &ctx.split_policy());
    let pipeline = ctx.pipeline(ctx.stage_examples()?);
    let by_character = questions_by_character(ctx, &train)?;
    let variants: Vec<PromptVariant> = match variant {
        Some(v) => vec![v],
        None => PromptVariant::ALL.to_vec(),
    };
    for variant in &variants {
        let mut parts = Vec::new();
        for (character, owned) in &by_character {
            if owned.is_empty() {
                continue;
            }
            let cloned: Vec<Question> = owned.iter().map(|q| (*q).clone()).collect();
            parts.push(dataset::build_training_set(
                &pipeline,
                &cloned,
                *variant,
                character,
                include_explanation,
                ctx.dataset_meta(),
            )?);
        }
        if parts.is_empty() {
            bail!("no training questions after the split");
        }
        let merged = dataset::Dataset::merge(parts)?;
        let path = ctx.out_path(&format!("dataset-{variant}.jsonl"));
        dataset::export_dataset(&merged, &path)?;
        println!(
            "wrote {} {variant} records ({} train / {} val questions) to {}",
            merged.records.len(),
            train.len(),
            val.len(),
            path.display()
        );
    }
    let config = FinetuneConfig::default();
    let cfg_path = ctx.out_path("finetune.cfg");
    let text = format!(
        "# config_hash={}\n# split_seed={} shuffle_seed={}\n{}",
        ctx.config_hash,
        ctx.split_seed,
        ctx.shuffle_seed,
        dataset::finetune_config_text(&config)
    );
    crate::io::atomic_write(&cfg_path, text.as_bytes())
        .with_context(|| format!("writing {}", cfg_path.display()))?;
    println!("wrote fine-tune config to {}", cfg_path.display());
    Ok(())
}

fn build_benchmark(ctx: &RunContext) -> Result<()> {
    let questions = read_questions(ctx)?;
    let (_, val) = dataset::split(&questions, &ctx.split_policy());
    if val.is_empty() {
        bail!("validation split is empty; need at least 2 questions per character");
    }
    let pipeline = ctx.pipeline(ctx.stage_examples()?);
    let meta = BenchmarkMeta {
        reference_variant: PromptVariant::Base,
        created_at: ctx.created_at.clone(),
        gateway_model_id: ctx.generation.model_id.clone(),
        extra: ctx.meta_extra(),
    };
    let mut parts = Vec::new();
    for (character, owned) in questions_by_character(ctx, &val)? {
        if owned.is_empty() {
            continue;
        }
        let cloned: Vec<Question> = owned.into_iter().cloned().collect();
        parts.push(dataset::build_benchmark(
            &pipeline,
            &cloned,
            &character,
            meta.clone(),
        )?);
    }
    let merged = Benchmark::merge(parts)?;
    let path = ctx.out_path("benchmark.jsonl");
    dataset::export_benchmark(&merged, &path)?;
    println!(
        "wrote benchmark with {} entries to {}",
        merged.entries.len(),
        path.display()
    );
    Ok(())
}

/// `predictions-<model>.jsonl` → `<model>`; other names fall back to the
/// file stem.
fn model_id_from_path(path: &Path) -> Result<String> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .with_context(|| format!("prediction path {} has no file name", path.display()))?;
    Ok(stem.strip_prefix("predictions-").unwrap_or(stem).to_string())
}

fn eval_rouge(
    ctx: &RunContext,
    benchmark_path: &Path,
    prediction_paths: &[PathBuf],
    beta: f64,
    mode: TokenMode,
) -> Result<()> {
    let benchmark = dataset::import_benchmark(benchmark_path)?;
    let mut reports = Vec::new();
    for path in prediction_paths {
        let model_id = model_id_from_path(path)?;
        let predictions = dataset::import_predictions(path)?;
        reports.push(rouge::score_model(
            &model_id,
            &predictions,
            &benchmark,
            beta,
            mode,
        )?);
    }
    let report = RougeReport::merge(reports)?;
    let payload = serde_json::to_value(&report).expect("report serializes");
    let path = write_json_object(ctx, "rouge-report.json", payload)?;
    print!("{}", rouge_table(&report));
    println!("wrote {}", path.display());
    Ok(())
}

fn eval_judge(
    ctx: &RunContext,
    benchmark_path: &Path,
    prediction_paths: &[PathBuf],
) -> Result<()> {
    if prediction_paths.len() != judge::PANEL_SIZE {
        bail!(
            "eval-judge needs exactly {} --pred files, got {}",
            judge::PANEL_SIZE,
            prediction_paths.len()
        );
    }
    let benchmark = dataset::import_benchmark(benchmark_path)?;
    let mut predictions = BTreeMap::new();
    for path in prediction_paths {
        let model_id = model_id_from_path(path)?;
        if predictions
            .insert(model_id.clone(), dataset::import_predictions(path)?)
            .is_some()
        {
            bail!("duplicate prediction file for model {model_id}");
        }
    }
    let harness = JudgeHarness::new(
        &ctx.gateway,
        &ctx.templates,
        ctx.generation.clone(),
        ctx.workspace.config.title.clone(),
    );
    let results = harness.judge_benchmark(&benchmark, &predictions, ctx.shuffle_seed)?;
    write_records(ctx, "judge-results.jsonl", &results)?;
    let table = judge::aggregate(&results)?;
    let payload = serde_json::to_value(&table).expect("table serializes");
    let path = write_json_object(ctx, "rank-table.json", payload)?;
    print!("{}", judge::render_rank_table(&table));
    println!("wrote {}", path.display());
    Ok(())
}

fn report(ctx: &RunContext) -> Result<()> {
    let rouge_path = ctx.out_path("rouge-report.json");
    let rank_path = ctx.out_path("rank-table.json");
    let mut printed = false;
    if rouge_path.exists() {
        let text = std::fs::read_to_string(&rouge_path)
            .with_context(|| format!("reading {}", rouge_path.display()))?;
        let report: RougeReport = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", rouge_path.display()))?;
        println!("Rouge-L (beta={}, mode={}):", report.beta, report.mode);
        print!("{}", rouge_table(&report));
        printed = true;
    }
    if rank_path.exists() {
        let text = std::fs::read_to_string(&rank_path)
            .with_context(|| format!("reading {}", rank_path.display()))?;
        let table: RankTable = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", rank_path.display()))?;
        if printed {
            println!();
        }
        println!("Judge average ranks over {} questions:", table.n_questions);
        print!("{}", judge::render_rank_table(&table));
        printed = true;
    }
    if !printed {
        bail!(
            "no evaluation artifacts in {}; run eval-rouge or eval-judge first",
            ctx.out_dir.display()
        );
    }
    Ok(())
}

/// Aligned text table of per-model mean Rouge-L F, best first.
fn rouge_table(report: &RougeReport) -> String {
    let mut rows = report.rows.clone();
    rows.sort_by(|a, b| {
        b.mean_f_x100
            .partial_cmp(&a.mean_f_x100)
            .unwrap()
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    let header = ("model", "rouge-l");
    let width = rows
        .iter()
        .map(|r| r.model_id.len())
        .chain([header.0.len()])
        .max()
        .unwrap_or(5);
    let mut out = format!("{:<width$}  {}\n", header.0, header.1);
    for row in rows {
        out.push_str(&format!(
            "{:<width$}  {:.4}\n",
            row.model_id, row.mean_f_x100
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_ids_come_from_prediction_filenames() {
        assert_eq!(
            model_id_from_path(Path::new("out/predictions-llama-7b.jsonl")).unwrap(),
            "llama-7b"
        );
        assert_eq!(
            model_id_from_path(Path::new("custom.jsonl")).unwrap(),
            "custom"
        );
    }

    #[test]
    fn usage_errors_exit_two_and_help_exits_zero() {
        assert_eq!(run(["roleforge", "no-such-subcommand"]), 2);
        assert_eq!(run(["roleforge"]), 2);
        assert_eq!(run(["roleforge", "--help"]), 0);
    }

    #[test]
    fn missing_workspace_is_a_domain_error() {
        assert_eq!(
            run([
                "roleforge",
                "gen-plots",
                "--workspace",
                "/nonexistent/workspace/path",
            ]),
            1
        );
    }

    #[test]
    fn rouge_table_sorts_best_first() {
        let report = RougeReport {
            beta: 1.2,
            mode: TokenMode::Mixed,
            rows: vec![
                crate::rouge::ModelRow {
                    model_id: "weak".into(),
                    mean_f_x100: 12.5,
                },
                crate::rouge::ModelRow {
                    model_id: "strong".into(),
                    mean_f_x100: 80.0,
                },
            ],
            pair_scores: BTreeMap::new(),
        };
        let table = rouge_table(&report);
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].starts_with("model"));
        assert!(lines[1].starts_with("strong"));
        assert!(lines[2].starts_with("weak"));
    }
}
