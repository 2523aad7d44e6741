//! Chat-completion access with three interchangeable backends.
//!
//! * `live` posts to a chat-completions HTTP endpoint with retries and
//!   records every success into the replay cache.
//! * `replay` serves exclusively from the cache; a novel request is an
//!   error, which makes offline runs byte-deterministic.
//! * `mock` answers from glob-matched fixture files or an injected
//!   function, and also records into the cache when one is configured so
//!   that replay runs can be seeded without network access.
//!
//! Concurrent callers are bounded by a semaphore regardless of backend.

mod cache;
mod live;
mod mock;

pub use cache::{cache_key, CacheEntry, ReplayCache, StoredRequest, StoredResponse};
pub use live::{LiveClient, RetryPolicy, API_KEY_ENV};
pub use mock::MockSource;

use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sampling settings sent with every request; also part of the cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            temperature: 0.95,
            top_k: 5,
            top_p: 0.95,
            max_tokens: 1024,
            model_id: "gpt-4o".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: ChatRole::User,
            content: content.into(),
        }
    }
}

/// One completion request. `request_tag` carries pipeline provenance
/// (stage/character/step) for fixture matching and logs; it is excluded
/// from the cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub config: GenerationConfig,
    pub request_tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Replay,
    Mock,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Live => "live",
            BackendKind::Replay => "replay",
            BackendKind::Mock => "mock",
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(BackendKind::Live),
            "replay" => Ok(BackendKind::Replay),
            "mock" => Ok(BackendKind::Mock),
            other => Err(format!("unknown backend `{other}` (expected live|replay|mock)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub backend: BackendKind,
    pub cache_hit: bool,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("endpoint rejected credentials (http {status})")]
    AuthError { status: u16 },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("transport failure: {0}")]
    TransportError(String),
    #[error("replay cache miss for tag `{request_tag}` (key {key})")]
    ReplayMiss { request_tag: String, key: String },
    #[error("endpoint rejected request length: {0}")]
    ContextOverflow(String),
    #[error("no mock fixture matches tag `{0}`")]
    NoFixture(String),
    #[error("cache error: {0}")]
    CacheIo(String),
    #[error("api key missing: set the {0} environment variable")]
    MissingApiKey(&'static str),
}

enum Engine {
    Live(LiveClient),
    Replay,
    Mock(MockSource),
}

/// Uniform entry point for all model calls.
pub struct Gateway {
    engine: Engine,
    cache: Option<ReplayCache>,
    limiter: Semaphore,
    concurrency: usize,
}

impl Gateway {
    /// Live endpoint with read-through caching: hits are served from the
    /// cache, successes are persisted back into it.
    pub fn live(client: LiveClient, cache: ReplayCache, concurrency: usize) -> Self {
        Gateway::build(Engine::Live(client), Some(cache), concurrency)
    }

    /// Cache-only backend; a request without a cached response fails with
    /// [`GatewayError::ReplayMiss`].
    pub fn replay(cache: ReplayCache, concurrency: usize) -> Self {
        Gateway::build(Engine::Replay, Some(cache), concurrency)
    }

    /// Fixture backend without cache recording.
    pub fn mock(source: MockSource, concurrency: usize) -> Self {
        Gateway::build(Engine::Mock(source), None, concurrency)
    }

    /// Fixture backend that records every response into `cache`, so a
    /// later replay run can serve the same traffic.
    pub fn mock_recording(source: MockSource, cache: ReplayCache, concurrency: usize) -> Self {
        Gateway::build(Engine::Mock(source), Some(cache), concurrency)
    }

    fn build(engine: Engine, cache: Option<ReplayCache>, concurrency: usize) -> Self {
        let concurrency = concurrency.max(1);
        Gateway {
            engine,
            cache,
            limiter: Semaphore::new(concurrency),
            concurrency,
        }
    }

    pub fn backend_kind(&self) -> BackendKind {
        match self.engine {
            Engine::Live(_) => BackendKind::Live,
            Engine::Replay => BackendKind::Replay,
            Engine::Mock(_) => BackendKind::Mock,
        }
    }

    /// Configured concurrency bound; callers fanning out work should not
    /// spawn more workers than this.
    pub fn concurrency(&self) -> usize {
        self.concurrency
    }

    /// Completes one request on the configured backend.
    ///
    /// The caller must supply a non-empty message list starting with a
    /// system message; that is a programming contract, not runtime input.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        assert!(
            !request.messages.is_empty(),
            "ChatRequest.messages must be non-empty"
        );
        assert!(
            request.messages[0].role == ChatRole::System,
            "first message must have the system role"
        );
        let _permit = self.limiter.acquire();
        let key = cache_key(request);
        match &self.engine {
            Engine::Replay => {
                let cache = self.cache.as_ref().expect("replay backend holds a cache");
                match cache.load(&key)? {
                    Some(entry) => Ok(ChatResponse {
                        text: entry.response.text,
                        finish_reason: entry.response.finish_reason,
                        backend: BackendKind::Replay,
                        cache_hit: true,
                    }),
                    None => Err(GatewayError::ReplayMiss {
                        request_tag: request.request_tag.clone(),
                        key,
                    }),
                }
            }
            Engine::Live(client) => {
                if let Some(cache) = &self.cache {
                    if let Some(entry) = cache.load(&key)? {
                        return Ok(ChatResponse {
                            text: entry.response.text,
                            finish_reason: entry.response.finish_reason,
                            backend: BackendKind::Live,
                            cache_hit: true,
                        });
                    }
                }
                let stored = client.complete(request)?;
                if let Some(cache) = &self.cache {
                    cache.store(&key, request, &stored)?;
                }
                Ok(ChatResponse {
                    text: stored.text,
                    finish_reason: stored.finish_reason,
                    backend: BackendKind::Live,
                    cache_hit: false,
                })
            }
            Engine::Mock(source) => {
                let text = source.respond(request)?;
                let stored = StoredResponse {
                    text,
                    finish_reason: FinishReason::Stop,
                };
                if let Some(cache) = &self.cache {
                    cache.store(&key, request, &stored)?;
                }
                Ok(ChatResponse {
                    text: stored.text,
                    finish_reason: FinishReason::Stop,
                    backend: BackendKind::Mock,
                    cache_hit: false,
                })
            }
        }
    }
}

/// Counting semaphore; `std::sync` has no ready-made one.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut permits = self.permits.lock().expect("semaphore poisoned");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore poisoned");
        }
        *permits -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut permits = self.0.permits.lock().expect("semaphore poisoned");
        *permits += 1;
        self.0.available.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn request(tag: &str) -> ChatRequest {
        ChatRequest {
            messages: vec![ChatMessage::system("sys"), ChatMessage::user("hi")],
            config: GenerationConfig::default(),
            request_tag: tag.into(),
        }
    }

    #[test]
    fn generation_defaults_match_contract() {
        let config = GenerationConfig::default();
        let value = serde_json::to_value(&config).unwrap();
        assert_eq!(value["temperature"], serde_json::json!(0.95));
        assert_eq!(value["top_k"], serde_json::json!(5));
        assert_eq!(value["top_p"], serde_json::json!(0.95));
    }

    #[test]
    fn mock_backend_serves_fixtures() {
        let source = MockSource::from_fn(|req| Ok(format!("echo:{}", req.request_tag)));
        let gateway = Gateway::mock(source, 2);
        let response = gateway.complete(&request("plot/mira/round1")).unwrap();
        assert_eq!(response.text, "echo:plot/mira/round1");
        assert_eq!(response.backend, BackendKind::Mock);
        assert!(!response.cache_hit);
    }

    #[test]
    fn replay_serves_recorded_responses_and_misses_novel_ones() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReplayCache::new(dir.path());
        let source = MockSource::from_fn(|req| Ok(format!("text for {}", req.request_tag)));
        let recording = Gateway::mock_recording(source, ReplayCache::new(dir.path()), 2);
        let original = recording.complete(&request("answer-base/mira/q1")).unwrap();

        let replay = Gateway::replay(cache, 2);
        let replayed = replay.complete(&request("answer-base/mira/q1")).unwrap();
        assert_eq!(replayed.text, original.text);
        assert_eq!(replayed.backend, BackendKind::Replay);
        assert!(replayed.cache_hit);

        let miss = replay.complete(&request("answer-base/mira/q2")).unwrap_err();
        assert!(matches!(miss, GatewayError::ReplayMiss { .. }));
    }

    #[test]
    fn replay_is_keyed_by_content_not_tag() {
        let dir = tempfile::tempdir().unwrap();
        let source = MockSource::from_fn(|_| Ok("fixed".into()));
        let recording = Gateway::mock_recording(source, ReplayCache::new(dir.path()), 1);
        recording.complete(&request("tag-one")).unwrap();

        let replay = Gateway::replay(ReplayCache::new(dir.path()), 1);
        // Same messages and config, different tag: still a hit.
        let hit = replay.complete(&request("tag-two")).unwrap();
        assert_eq!(hit.text, "fixed");
    }

    #[test]
    fn concurrent_completions_stay_within_bound() {
        let bound = 3;
        let inside = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let source = {
            let inside = Arc::clone(&inside);
            let peak = Arc::clone(&peak);
            MockSource::from_fn(move |_| {
                let now = inside.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(std::time::Duration::from_millis(5));
                inside.fetch_sub(1, Ordering::SeqCst);
                Ok("ok".into())
            })
        };
        let gateway = Gateway::mock(source, bound);
        std::thread::scope(|scope| {
            for i in 0..16 {
                let gateway = &gateway;
                let tag = format!("load/{i}");
                scope.spawn(move || gateway.complete(&request(&tag)).unwrap());
            }
        });
        assert!(
            peak.load(Ordering::SeqCst) <= bound,
            "peak concurrency {} exceeded bound {}",
            peak.load(Ordering::SeqCst),
            bound
        );
    }
}
