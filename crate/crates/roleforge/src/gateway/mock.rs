//! Deterministic mock backend: fixture files matched by glob against the
//! request tag, or an injected response function for tests.

use std::fs;
use std::path::Path;

use super::{ChatRequest, GatewayError};

type ResponseFn = dyn Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync;

pub struct MockSource {
    kind: SourceKind,
}

enum SourceKind {
    /// Sorted most-specific first: longest pattern, then lexicographic.
    Fixtures(Vec<Fixture>),
    Function(Box<ResponseFn>),
}

struct Fixture {
    pattern: String,
    body: String,
}

impl MockSource {
    /// Loads `*.txt` fixtures from `dir`. The file stem is the glob
    /// pattern matched against the request tag; `*` spans any characters
    /// including `/`, `?` matches exactly one. Filenames cannot contain
    /// `/`, so patterns that need to cross tag segments use wildcards.
    pub fn from_dir(dir: &Path) -> Result<Self, GatewayError> {
        let entries = fs::read_dir(dir).map_err(|e| {
            GatewayError::CacheIo(format!("read mock dir {}: {e}", dir.display()))
        })?;
        let mut fixtures = Vec::new();
        for entry in entries {
            let entry =
                entry.map_err(|e| GatewayError::CacheIo(format!("read mock dir: {e}")))?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let stem = match path.file_stem().and_then(|s| s.to_str()) {
                Some(stem) => stem.to_string(),
                None => continue,
            };
            let body = fs::read_to_string(&path).map_err(|e| {
                GatewayError::CacheIo(format!("read fixture {}: {e}", path.display()))
            })?;
            fixtures.push(Fixture {
                pattern: stem,
                body,
            });
        }
        fixtures.sort_by(|a, b| {
            b.pattern
                .len()
                .cmp(&a.pattern.len())
                .then_with(|| a.pattern.cmp(&b.pattern))
        });
        Ok(MockSource {
            kind: SourceKind::Fixtures(fixtures),
        })
    }

    pub fn from_fn(
        f: impl Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync + 'static,
    ) -> Self {
        MockSource {
            kind: SourceKind::Function(Box::new(f)),
        }
    }

    pub(super) fn respond(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        match &self.kind {
            SourceKind::Function(f) => f(request),
            SourceKind::Fixtures(fixtures) => {
                let tag = &request.request_tag;
                let fixture = fixtures
                    .iter()
                    .find(|f| glob_match(&f.pattern, tag))
                    .ok_or_else(|| GatewayError::NoFixture(tag.clone()))?;
                Ok(substitute(&fixture.body, tag))
            }
        }
    }
}

/// Replaces `{tag}` with the full request tag and `{tag:N}` with its Nth
/// `/`-separated segment, so one fixture can answer a whole stage with
/// per-call texts.
fn substitute(body: &str, tag: &str) -> String {
    let mut out = body.replace("{tag}", tag);
    for (i, segment) in tag.split('/').enumerate() {
        out = out.replace(&format!("{{tag:{i}}}"), segment);
    }
    out
}

/// Iterative glob with backtracking; O(len(pattern)·len(text)) worst case.
fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0usize, 0usize);
    let mut star: Option<usize> = None;
    let mut mark = 0usize;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some(pi);
            mark = ti;
            pi += 1;
        } else if let Some(s) = star {
            pi = s + 1;
            mark += 1;
            ti = mark;
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '*' {
        pi += 1;
    }
    pi == p.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, GenerationConfig};

    fn request(tag: &str) -> ChatRequest {
        ChatRequest {
            messages: vec![ChatMessage::system("s")],
            config: GenerationConfig::default(),
            request_tag: tag.into(),
        }
    }

    #[test]
    fn glob_star_spans_segments() {
        assert!(glob_match("plot*", "plot/mira-vane/round2"));
        assert!(glob_match("*", "anything/at/all"));
        assert!(glob_match("answer-base*", "answer-base/mira/q1"));
        assert!(!glob_match("answer-base*", "answer-read/mira/q1"));
        assert!(glob_match("a?c", "abc"));
        assert!(!glob_match("a?c", "ac"));
        assert!(glob_match("*round2", "plot/mira/round2"));
        assert!(!glob_match("plot", "plot/mira/round2"));
    }

    #[test]
    fn substitution_expands_tag_segments() {
        let body = "full={tag} stage={tag:0} who={tag:1} step={tag:2} none={tag:9}";
        assert_eq!(
            substitute(body, "plot/mira-vane/round3"),
            "full=plot/mira-vane/round3 stage=plot who=mira-vane step=round3 none={tag:9}"
        );
    }

    #[test]
    fn most_specific_fixture_wins() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("answer-base*.txt"), "specific").unwrap();
        fs::write(dir.path().join("answer*.txt"), "generic").unwrap();
        fs::write(dir.path().join("*.txt"), "fallback").unwrap();
        let source = MockSource::from_dir(dir.path()).unwrap();
        assert_eq!(source.respond(&request("answer-base/m/q1")).unwrap(), "specific");
        assert_eq!(source.respond(&request("answer-read/m/q1")).unwrap(), "generic");
        assert_eq!(source.respond(&request("judge/quality/q1")).unwrap(), "fallback");
    }

    #[test]
    fn unmatched_tag_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("plot*.txt"), "body").unwrap();
        let source = MockSource::from_dir(dir.path()).unwrap();
        let err = source.respond(&request("judge/quality/q1")).unwrap_err();
        assert!(matches!(err, GatewayError::NoFixture(_)));
    }
}
