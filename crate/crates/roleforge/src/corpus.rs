//! Story workspace loading: source text, character roster, and the
//! few-shot exemplar files that steer each generation stage.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("not valid UTF-8: {0}")]
    EncodingError(PathBuf),
    #[error("story text is empty or all whitespace: {0}")]
    EmptyStory(PathBuf),
    #[error("no `{stage}-*.txt` example files in {dir}")]
    NoExamplesFound { stage: Stage, dir: PathBuf },
    #[error("example file is empty: {0}")]
    EmptyExampleFile(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid workspace config {path}: {message}")]
    BadConfig { path: PathBuf, message: String },
}

/// The full source text a workspace is built around.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Story {
    pub text: String,
    /// Number of Unicode scalar values in `text`.
    pub char_count: usize,
}

/// One character from the roster, keyed by a filename-safe id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharacterProfile {
    pub character_id: String,
    pub display_name: String,
}

/// Generation stage an exemplar file belongs to, per its filename prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Plot,
    Question,
    Answer,
}

impl Stage {
    fn prefix(self) -> &'static str {
        match self {
            Stage::Plot => "plot",
            Stage::Question => "question",
            Stage::Answer => "answer",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

/// Ordered exemplar texts for one stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExampleSet {
    pub stage: Stage,
    pub items: Vec<String>,
}

/// Keys read from `workspace.toml`. Roster and story identity are
/// required; gateway settings are optional and may be overridden by CLI
/// flags.
#[derive(Debug, Clone, Deserialize)]
pub struct WorkspaceConfig {
    pub story_id: String,
    pub title: String,
    pub characters: Vec<String>,
    #[serde(default)]
    pub backend: Option<String>,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub concurrency: Option<usize>,
    #[serde(default)]
    pub max_attempts: Option<u32>,
    #[serde(default)]
    pub target_questions: Option<usize>,
}

/// A loaded workspace: config, story text, and the derived roster.
#[derive(Debug, Clone)]
pub struct StoryWorkspace {
    pub root: PathBuf,
    pub config: WorkspaceConfig,
    pub story: Story,
    pub characters: Vec<CharacterProfile>,
}

impl StoryWorkspace {
    /// Loads `workspace.toml` and `story.txt` from `root` and slugs the
    /// roster into character ids.
    pub fn load(root: &Path) -> Result<Self, CorpusError> {
        let config_path = root.join("workspace.toml");
        let raw = read_text(&config_path)?;
        let config: WorkspaceConfig =
            toml::from_str(&raw).map_err(|e| CorpusError::BadConfig {
                path: config_path.clone(),
                message: e.to_string(),
            })?;
        if config.characters.is_empty() {
            return Err(CorpusError::BadConfig {
                path: config_path,
                message: "characters list is empty".into(),
            });
        }
        let characters = config
            .characters
            .iter()
            .map(|name| CharacterProfile {
                character_id: slugify(name),
                display_name: name.clone(),
            })
            .collect();
        let story = load_story(&root.join("story.txt"))?;
        Ok(StoryWorkspace {
            root: root.to_path_buf(),
            config,
            story,
            characters,
        })
    }

    pub fn examples_dir(&self) -> PathBuf {
        self.root.join("examples")
    }

    pub fn mock_dir(&self) -> PathBuf {
        self.root.join("mock")
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn templates_dir(&self) -> PathBuf {
        self.root.join("templates")
    }
}

/// Reads the story file and counts its Unicode scalar values.
pub fn load_story(path: &Path) -> Result<Story, CorpusError> {
    let text = read_text(path)?;
    if text.trim().is_empty() {
        return Err(CorpusError::EmptyStory(path.to_path_buf()));
    }
    let char_count = text.chars().count();
    Ok(Story { text, char_count })
}

/// Loads every `<stage>-*.txt` file under `dir`, ordered by filename.
///
/// Lexicographic ordering makes prompt assembly deterministic no matter
/// what order the filesystem lists entries in.
pub fn load_examples(dir: &Path, stage: Stage) -> Result<ExampleSet, CorpusError> {
    let entries = fs::read_dir(dir).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => CorpusError::FileNotFound(dir.to_path_buf()),
        _ => CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        },
    })?;
    let prefix = format!("{}-", stage.prefix());
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with(&prefix) && name.ends_with(".txt") {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(CorpusError::NoExamplesFound {
            stage,
            dir: dir.to_path_buf(),
        });
    }
    paths.sort();
    let mut items = Vec::with_capacity(paths.len());
    for path in paths {
        let text = read_text(&path)?;
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(CorpusError::EmptyExampleFile(path));
        }
        items.push(trimmed.to_string());
    }
    Ok(ExampleSet { stage, items })
}

/// Lowercases a display name into a filename- and tag-safe id:
/// alphanumeric runs joined by single hyphens.
pub fn slugify(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut pending_sep = false;
    for c in name.chars() {
        if c.is_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('-');
            }
            pending_sep = false;
            out.extend(c.to_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

fn read_text(path: &Path) -> Result<String, CorpusError> {
    let bytes = fs::read(path).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => CorpusError::FileNotFound(path.to_path_buf()),
        _ => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
    })?;
    String::from_utf8(bytes).map_err(|_| CorpusError::EncodingError(path.to_path_buf()))
}
