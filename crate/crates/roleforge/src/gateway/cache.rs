//! Content-addressed response cache backing the replay backend.
//!
//! One JSON file per key under `<root>/<first-2-hex>/<digest>.json`,
//! holding both the request and the response so entries are diffable and
//! shippable as test fixtures.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatMessage, ChatRequest, FinishReason, GatewayError, GenerationConfig};
use crate::io::atomic_write;

/// Digest over model id, sampling config, and the full message list.
/// `request_tag` is provenance, not content, and is excluded by contract.
pub fn cache_key(request: &ChatRequest) -> String {
    #[derive(Serialize)]
    struct KeyMaterial<'a> {
        config: &'a GenerationConfig,
        messages: &'a [ChatMessage],
    }
    let bytes = serde_json::to_vec(&KeyMaterial {
        config: &request.config,
        messages: &request.messages,
    })
    .expect("key material serializes");
    let digest = Sha256::digest(&bytes);
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRequest {
    pub request_tag: String,
    pub config: GenerationConfig,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredResponse {
    pub text: String,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: StoredRequest,
    pub response: StoredResponse,
}

#[derive(Debug, Clone)]
pub struct ReplayCache {
    root: PathBuf,
}

impl ReplayCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ReplayCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn load(&self, key: &str) -> Result<Option<CacheEntry>, GatewayError> {
        let path = self.entry_path(key);
        let bytes = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => {
                return Err(GatewayError::CacheIo(format!(
                    "read {}: {e}",
                    path.display()
                )))
            }
        };
        let entry: CacheEntry = serde_json::from_slice(&bytes).map_err(|e| {
            GatewayError::CacheIo(format!("parse {}: {e}", path.display()))
        })?;
        Ok(Some(entry))
    }

    /// Persists an entry atomically; concurrent writers of the same key
    /// produce identical bytes, so last-rename-wins is harmless.
    pub fn store(
        &self,
        key: &str,
        request: &ChatRequest,
        response: &StoredResponse,
    ) -> Result<(), GatewayError> {
        let entry = CacheEntry {
            key: key.to_string(),
            request: StoredRequest {
                request_tag: request.request_tag.clone(),
                config: request.config.clone(),
                messages: request.messages.clone(),
            },
            response: response.clone(),
        };
        let path = self.entry_path(key);
        let mut bytes = serde_json::to_vec_pretty(&entry).expect("cache entry serializes");
        bytes.push(b'\n');
        atomic_write(&path, &bytes)
            .map_err(|e| GatewayError::CacheIo(format!("write {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(tag: &str, temperature: f64) -> ChatRequest {
        ChatRequest {
            messages: vec![ChatMessage::system("s"), ChatMessage::user("u")],
            config: GenerationConfig {
                temperature,
                ..GenerationConfig::default()
            },
            request_tag: tag.into(),
        }
    }

    #[test]
    fn identical_requests_share_a_key() {
        assert_eq!(cache_key(&request("a", 0.95)), cache_key(&request("a", 0.95)));
    }

    #[test]
    fn config_changes_the_key() {
        assert_ne!(cache_key(&request("a", 0.95)), cache_key(&request("a", 0.7)));
    }

    #[test]
    fn tag_does_not_change_the_key() {
        assert_eq!(cache_key(&request("a", 0.95)), cache_key(&request("b", 0.95)));
    }

    #[test]
    fn message_content_changes_the_key() {
        let base = request("a", 0.95);
        let mut other = base.clone();
        other.messages[1].content.push('!');
        assert_ne!(cache_key(&base), cache_key(&other));
    }

    #[test]
    fn store_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReplayCache::new(dir.path());
        let req = request("plot/x/round1", 0.95);
        let key = cache_key(&req);
        let response = StoredResponse {
            text: "PLOT 1: a | b | c | d".into(),
            finish_reason: FinishReason::Stop,
        };
        cache.store(&key, &req, &response).unwrap();
        let entry = cache.load(&key).unwrap().expect("entry present");
        assert_eq!(entry.response, response);
        assert_eq!(entry.request.request_tag, "plot/x/round1");
        // Layout contract: two-hex shard directory.
        assert!(dir.path().join(&key[..2]).join(format!("{key}.json")).exists());
    }

    #[test]
    fn absent_key_loads_none() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ReplayCache::new(dir.path());
        assert!(cache.load(&"0".repeat(64)).unwrap().is_none());
    }
}
