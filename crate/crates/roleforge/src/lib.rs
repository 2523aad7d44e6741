//! Role-play dialogue dataset construction and evaluation.
//!
//! Generation is decomposed into three prompt stages (story plots,
//! questions about those plots, in-character answers), each driven by an
//! editable template with few-shot examples. The resulting questions are
//! split per character into train/validation sets; answers become
//! instruction-tuning records in four prompt-variant flavors, and the
//! validation questions become a reference benchmark. Evaluation covers
//! Rouge-L overlap scoring and four-candidate LLM-judged ranking with
//! seeded shuffling to neutralize position bias.
//!
//! All model access goes through [`gateway::Gateway`], which can talk to a
//! live chat-completions endpoint, replay a content-addressed cache, or
//! serve deterministic mock fixtures.

pub mod cli;
pub mod corpus;
pub mod dataset;
pub mod gateway;
pub mod judge;
pub mod pipeline;
pub mod prompt;
pub mod rouge;

mod io;
mod par;

use sha2::{Digest, Sha256};

/// Derives a stable 64-bit sub-seed from a labeled root seed and a salt.
///
/// Used wherever one run-level seed must fan out into independent
/// per-character or per-question streams. The derivation is part of the
/// reproducibility contract: identical inputs yield identical seeds on
/// every platform and release.
pub fn derive_seed(label: &str, seed: u64, salt: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(label.as_bytes());
    hasher.update(seed.to_le_bytes());
    hasher.update(salt.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
