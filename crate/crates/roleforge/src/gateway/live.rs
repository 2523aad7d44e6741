//! Live chat-completions client: bearer auth, bounded retries with
//! jittered exponential backoff, and graceful `top_k` fallback for
//! endpoints that reject unknown sampling fields.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ChatMessage, ChatRequest, FinishReason, GatewayError, StoredResponse};

pub const API_KEY_ENV: &str = "ROLEFORGE_API_KEY";

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    /// Fractional jitter applied to each delay, e.g. 0.2 for ±20%.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            jitter: 0.2,
        }
    }
}

///// Delay before retry number `k` (zero-based): base·2^k scaled by a
/// uniform factor in [1-jitter, 1+jitter].
pub(super) fn delay_for_attempt(policy: &RetryPolicy, k: u32, rng: &mut impl Rng) -> Duration {
    let base = policy.base_delay.as_secs_f64() * f64::from(2u32.saturating_pow(k.min(16)));
    let factor = 1.0 + policy.jitter * rng.gen_range(-1.0..=1.0);
    Duration::from_secs_f64((base * factor).max(0.0))
}

pub struct LiveClient {
    endpoint_url: String,
    api_key: String,
    retry: RetryPolicy,
    http: reqwest::blocking::Client,
}

impl LiveClient {
    pub fn new(endpoint_url: impl Into<String>, api_key: impl Into<String>, retry: RetryPolicy) -> Self {
        LiveClient {
            endpoint_url: endpoint_url.into(),
            api_key: api_key.into(),
            retry,
            http: reqwest::blocking::Client::new(),
        }
    }

    /// Reads the API key from [`API_KEY_ENV`].
    pub fn from_env(endpoint_url: impl Into<String>, retry: RetryPolicy) -> Result<Self, GatewayError> {
        let api_key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or(GatewayError::MissingApiKey(API_KEY_ENV))?;
        Ok(LiveClient::new(endpoint_url, api_key, retry))
    }

    pub(super) fn complete(&self, request: &ChatRequest) -> Result<StoredResponse, GatewayError> {
        let mut rng = rand::thread_rng();
        let mut include_top_k = true;
        let mut attempt: u32 = 0;
        let mut rate_limited = false;
        let mut last_error = GatewayError::TransportError("no attempts made".into());
        while attempt < self.retry.max_attempts {
            if attempt > 0 {
                std::thread::sleep(delay_for_attempt(&self.retry, attempt - 1, &mut rng));
            }
            let body = WireRequest::from_request(request, include_top_k);
            let sent = self
                .http
                .post(&self.endpoint_url)
                .bearer_auth(&self.api_key)
                .json(&body)
                .send();
            let response = match sent {
                Ok(response) => response,
                Err(e) => {
                    last_error = GatewayError::TransportError(e.to_string());
                    attempt += 1;
                    continue;
                }
            };
            let status = response.status().as_u16();
            match status {
                200..=299 => return parse_success(response),
                401 | 403 => return Err(GatewayError::AuthError { status }),
                429 => {
                    rate_limited = true;
                    last_error = GatewayError::TransportError("http 429".into());
                    attempt += 1;
                }
                400 => {
                    let text = response.text().unwrap_or_default();
                    if include_top_k && text.contains("top_k") {
                        // One-shot fallback, not a retry: resend without
                        // the field the endpoint does not know.
                        log::warn!("endpoint rejected top_k; resending without it");
                        include_top_k = false;
                        continue;
                    }
                    if mentions_context_limit(&text) {
                        return Err(GatewayError::ContextOverflow(excerpt(&text)));
                    }
                    return Err(GatewayError::TransportError(format!(
                        "http 400: {}",
                        excerpt(&text)
                    )));
                }
                500..=599 => {
                    let text = response.text().unwrap_or_default();
                    last_error =
                        GatewayError::TransportError(format!("http {status}: {}", excerpt(&text)));
                    attempt += 1;
                }
                other => {
                    let text = response.text().unwrap_or_default();
                    return Err(GatewayError::TransportError(format!(
                        "http {other}: {}",
                        excerpt(&text)
                    )));
                }
            }
        }
        if rate_limited {
            Err(GatewayError::RateLimited {
                attempts: self.retry.max_attempts,
            })
        } else {
            Err(last_error)
        }
    }
}

fn parse_success(response: reqwest::blocking::Response) -> Result<StoredResponse, GatewayError> {
    let wire: WireResponse = response
        .json()
        .map_err(|e| GatewayError::TransportError(format!("malformed response body: {e}")))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::TransportError("response has no choices".into()))?;
    let finish_reason = match choice.finish_reason.as_deref() {
        None | Some("stop") => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        Some(_) => FinishReason::Error,
    };
    if finish_reason == FinishReason::Stop && choice.message.content.trim().is_empty() {
        return Err(GatewayError::TransportError(
            "endpoint returned an empty completion".into(),
        ));
    }
    Ok(StoredResponse {
        text: choice.message.content,
        finish_reason,
    })
}

fn mentions_context_limit(body: &str) -> bool {
    let lower = body.to_lowercase();
    ["context length", "context_length", "maximum context", "token limit"]
        .iter()
        .any(|needle| lower.contains(needle))
}

fn excerpt(text: &str) -> String {
    let trimmed = text.trim();
    let mut out: String = trimmed.chars().take(200).collect();
    if trimmed.chars().count() > 200 {
        out.push_str("...");
    }
    out
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    top_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_k: Option<u32>,
    max_tokens: u32,
}

impl<'a> WireRequest<'a> {
    fn from_request(request: &'a ChatRequest, include_top_k: bool) -> Self {
        WireRequest {
            model: &request.config.model_id,
            messages: &request.messages,
            temperature: request.config.temperature,
            top_p: request.config.top_p,
            top_k: include_top_k.then_some(request.config.top_k),
            max_tokens: request.config.max_tokens,
        }
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}
