//! Completion backends: an OpenAI-compatible chat client, a persistent
//! response cache, and a deterministic mock.

mod cache;
mod client;
mod mock;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheCounters, CacheError, CacheSummary, ResponseCache};
pub use client::{
    ChatClient, ChatEndpoint, HttpReply, HttpRequest, ReqwestTransport, RetryPolicy, Transport,
    TransportError,
};
pub use mock::{mock_complete, AnswerKey, MockBackend, MockProfile, MockStyle};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("authentication rejected (HTTP {status})")]
    Auth { status: u16 },
    #[error("API key environment variable {0} is not set")]
    MissingCredentials(String),
    #[error("gave up after {attempts} attempts; last failure: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

impl BackendError {
    /// Errors that must never be retried or absorbed.
    pub fn is_auth(&self) -> bool {
        matches!(self, BackendError::Auth { .. } | BackendError::MissingCredentials(_))
    }
}

/// Sampling settings. The defaults are the evaluation's reference
/// hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub repetition_penalty: f64,
    pub sampling_enabled: bool,
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.8,
            max_new_tokens: 1500,
            repetition_penalty: 1.2,
            sampling_enabled: true,
            seed: None,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::InvalidParams(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_new_tokens < 1 {
            return Err(BackendError::InvalidParams("max_new_tokens must be >= 1".into()));
        }
        if !(self.repetition_penalty.is_finite() && self.repetition_penalty > 0.0) {
            return Err(BackendError::InvalidParams(format!(
                "repetition_penalty must be > 0, got {}",
                self.repetition_penalty
            )));
        }
        Ok(())
    }

    /// Temperature actually sent to endpoints without a sampling switch.
    pub fn effective_temperature(&self) -> f64 {
        if self.sampling_enabled {
            self.temperature
        } else {
            0.0
        }
    }
}

/// Hex-encoded SHA-256 over the request's identifying fields.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(String);

impl Fingerprint {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn from_hex(s: impl Into<String>) -> Self {
        Fingerprint(s.into())
    }

    /// First eight digest bytes as an integer (used for seeding).
    pub fn seed(&self) -> u64 {
        let mut bytes = [0u8; 8];
        if let Ok(raw) = hex::decode(&self.0[..16.min(self.0.len())]) {
            bytes[..raw.len()].copy_from_slice(&raw);
        }
        u64::from_le_bytes(bytes)
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt_text: String,
    pub params: GenerationParams,
    /// Sample number for repeated draws of the same prompt; 0 for the first.
    pub sample: u32,
    pub fingerprint: Fingerprint,
}

impl CompletionRequest {
    pub fn new(model_id: impl Into<String>, prompt_text: impl Into<String>, params: GenerationParams) -> Self {
        Self::with_sample(model_id, prompt_text, params, 0)
    }

    pub fn with_sample(
        model_id: impl Into<String>,
        prompt_text: impl Into<String>,
        params: GenerationParams,
        sample: u32,
    ) -> Self {
        let model_id = model_id.into();
        let prompt_text = prompt_text.into();
        let fingerprint = fingerprint(&model_id, &prompt_text, &params, sample);
        CompletionRequest {
            model_id,
            prompt_text,
            params,
            sample,
            fingerprint,
        }
    }

    pub fn input_chars(&self) -> u64 {
        self.prompt_text.chars().count() as u64
    }
}

fn canonical_f64(x: f64) -> [u8; 8] {
    // 0.0 and -0.0 compare equal and must hash equal.
    let x = if x == 0.0 { 0.0 } else { x };
    x.to_bits().to_le_bytes()
}

fn fingerprint(model_id: &str, prompt_text: &str, params: &GenerationParams, sample: u32) -> Fingerprint {
    let mut h = Sha256::new();
    h.update(b"pragbench.request.v1");
    for field in [model_id.as_bytes(), prompt_text.as_bytes()] {
        h.update((field.len() as u64).to_le_bytes());
        h.update(field);
    }
    h.update(canonical_f64(params.temperature));
    h.update(params.max_new_tokens.to_le_bytes());
    h.update(canonical_f64(params.repetition_penalty));
    h.update([params.sampling_enabled as u8]);
    match params.seed {
        Some(s) => {
            h.update([1]);
            h.update(s.to_le_bytes());
        }
        None => h.update([0]),
    }
    h.update(sample.to_le_bytes());
    Fingerprint(hex::encode(h.finalize()))
}

/// One model call and its outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub fingerprint: Fingerprint,
    pub model_id: String,
    pub response_text: String,
    pub input_chars: u64,
    pub output_chars: u64,
    pub latency_ms: u64,
    pub from_cache: bool,
    pub attempt_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

impl CompletionRecord {
    pub fn new(req: &CompletionRequest, response_text: String) -> Self {
        CompletionRecord {
            fingerprint: req.fingerprint.clone(),
            model_id: req.model_id.clone(),
            input_chars: req.input_chars(),
            output_chars: response_text.chars().count() as u64,
            response_text,
            latency_ms: 0,
            from_cache: false,
            attempt_count: 1,
            prompt_tokens: None,
            completion_tokens: None,
        }
    }
}

/// Anything that can turn a request into a completion.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionRecord, BackendError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for std::sync::Arc<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionRecord, BackendError> {
        (**self).complete(req)
    }
}

/// Looks `req` up in `cache`; on a miss, delegates to `backend` and stores
/// the result.
pub fn cached_complete(
    backend: &dyn CompletionBackend,
    req: &CompletionRequest,
    cache: &ResponseCache,
) -> Result<CompletionRecord, BackendError> {
    if let Some(hit) = cache.lookup(&req.fingerprint) {
        return Ok(hit);
    }
    let fresh = backend.complete(req)?;
    Ok(cache.insert(fresh)?)
}
