use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use thiserror::Error;

use super::{BackendError, CompletionBackend, CompletionRecord, CompletionRequest};

/// A serialized chat-completions call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub url: String,
    pub bearer: Option<String>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
    pub retry_after: Option<Duration>,
}

impl HttpReply {
    pub fn new(status: u16, body: impl Into<String>) -> Self {
        HttpReply {
            status,
            body: body.into(),
            retry_after: None,
        }
    }
}

/// Failures below the HTTP layer. All of them are retried.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("transport error: {0}")]
    Other(String),
}

pub trait Transport: Send + Sync {
    fn post_json(&self, req: &HttpRequest) -> Result<HttpReply, TransportError>;
}

/// Blocking HTTPS transport.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::InvalidParams(format!("cannot build HTTP client: {e}")))?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(&self, req: &HttpRequest) -> Result<HttpReply, TransportError> {
        let mut builder = self
            .client
            .post(&req.url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(req.body.clone());
        if let Some(key) = &req.bearer {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else if e.is_connect() {
                TransportError::Connect(e.to_string())
            } else {
                TransportError::Other(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let body = resp.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Other(e.to_string())
            }
        })?;
        Ok(HttpReply {
            status,
            body,
            retry_after,
        })
    }
}

/// Capped exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 6,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay_for(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Spaces request starts at least `interval` apart.
struct Pacer {
    interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl Pacer {
    fn wait(&self) {
        if self.interval.is_zero() {
            return;
        }
        let slot = {
            let mut next = self.next_slot.lock().expect("pacer lock");
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot
        };
        let now = Instant::now();
        if slot > now {
            thread::sleep(slot - now);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatEndpoint {
    pub base_url: String,
    pub api_key: Option<String>,
    /// Include `repetition_penalty` in the request body. Many hosted
    /// OpenAI-style APIs reject it; vLLM-style servers accept it.
    pub send_repetition_penalty: bool,
}

impl ChatEndpoint {
    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Chat-completions client with retries and request pacing.
pub struct ChatClient {
    endpoint: ChatEndpoint,
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    pacer: Pacer,
}

impl ChatClient {
    pub fn new(endpoint: ChatEndpoint, transport: Arc<dyn Transport>, retry: RetryPolicy) -> Self {
        ChatClient {
            endpoint,
            transport,
            retry,
            pacer: Pacer {
                interval: Duration::ZERO,
                next_slot: Mutex::new(None),
            },
        }
    }

    /// Limits request starts to `per_minute`.
    pub fn with_rate_limit(mut self, per_minute: u32) -> Self {
        if per_minute > 0 {
            self.pacer.interval = Duration::from_secs(60) / per_minute;
        }
        self
    }

    pub fn request_body(&self, req: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": req.model_id,
            "messages": [{"role": "user", "content": req.prompt_text}],
            "temperature": req.params.effective_temperature(),
            "max_tokens": req.params.max_new_tokens,
        });
        if self.endpoint.send_repetition_penalty {
            body["repetition_penalty"] = json!(req.params.repetition_penalty);
        }
        if let Some(seed) = req.params.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

struct ParsedReply {
    text: String,
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

fn parse_reply(body: &str) -> Result<ParsedReply, BackendError> {
    let v: Value = serde_json::from_str(body)
        .map_err(|e| BackendError::MalformedResponse(format!("invalid JSON: {e}")))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::MalformedResponse("missing choices[0].message.content".into()))?;
    Ok(ParsedReply {
        text: text.to_string(),
        prompt_tokens: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        completion_tokens: v.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    })
}

impl CompletionBackend for ChatClient {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionRecord, BackendError> {
        req.params.validate()?;
        let http = HttpRequest {
            url: self.endpoint.completions_url(),
            bearer: self.endpoint.api_key.clone(),
            body: self.request_body(req).to_string(),
        };
        let max_attempts = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.pacer.wait();
            let started = Instant::now();
            let (last, retry_after) = match self.transport.post_json(&http) {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    let parsed = parse_reply(&reply.body)?;
                    let mut rec = CompletionRecord::new(req, parsed.text);
                    rec.latency_ms = started.elapsed().as_millis() as u64;
                    rec.attempt_count = attempt;
                    rec.prompt_tokens = parsed.prompt_tokens;
                    rec.completion_tokens = parsed.completion_tokens;
                    return Ok(rec);
                }
                Ok(reply) if reply.status == 401 || reply.status == 403 => {
                    return Err(BackendError::Auth {
                        status: reply.status,
                    });
                }
                Ok(reply) if reply.status == 408 || reply.status == 429 || reply.status >= 500 => {
                    (format!("HTTP {}", reply.status), reply.retry_after)
                }
                Ok(reply) => {
                    return Err(BackendError::Rejected {
                        status: reply.status,
                        body: reply.body.chars().take(500).collect(),
                    });
                }
                Err(e) => (e.to_string(), None),
            };
            if attempt >= max_attempts {
                return Err(BackendError::ExhaustedRetries {
                    attempts: attempt,
                    last,
                });
            }
            let delay = retry_after
                .map(|d| d.min(self.retry.max_delay))
                .unwrap_or_else(|| self.retry.delay_for(attempt));
            log::debug!("retrying {} after {last} (attempt {attempt}, waiting {delay:?})", req.fingerprint);
            if !delay.is_zero() {
                thread::sleep(delay);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::GenerationParams;
    use std::collections::VecDeque;

    /// Replays scripted replies and records every request body.
    struct Scripted {
        replies: Mutex<VecDeque<Result<HttpReply, TransportError>>>,
        seen: Mutex<Vec<HttpRequest>>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<HttpReply, TransportError>>) -> Arc<Self> {
            Arc::new(Scripted {
                replies: Mutex::new(replies.into()),
                seen: Mutex::new(Vec::new()),
            })
        }

        fn calls(&self) -> usize {
            self.seen.lock().unwrap().len()
        }
    }

    impl Transport for Scripted {
        fn post_json(&self, req: &HttpRequest) -> Result<HttpReply, TransportError> {
            self.seen.lock().unwrap().push(req.clone());
            self.replies
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or_else(|| Ok(HttpReply::new(500, "script exhausted")))
        }
    }

    fn ok_body(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}],
               "usage": {"prompt_tokens": 12, "completion_tokens": 3}})
        .to_string()
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 4,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    fn client(t: Arc<Scripted>, send_rp: bool) -> ChatClient {
        ChatClient::new(
            ChatEndpoint {
                base_url: "http://localhost:9/v1/".into(),
                api_key: Some("k".into()),
                send_repetition_penalty: send_rp,
            },
            t,
            fast_retry(),
        )
    }

    fn req() -> CompletionRequest {
        CompletionRequest::new("gpt-test", "Question?", GenerationParams::default())
    }

    #[test]
    fn two_429_then_success() {
        let t = Scripted::new(vec![
            Ok(HttpReply::new(429, "slow down")),
            Ok(HttpReply::new(429, "slow down")),
            Ok(HttpReply::new(200, ok_body("[Answer] 1) yes"))),
        ]);
        let rec = client(t.clone(), false).complete(&req()).unwrap();
        assert_eq!(rec.attempt_count, 3);
        assert_eq!(t.calls(), 3);
        assert_eq!(rec.response_text, "[Answer] 1) yes");
        assert_eq!(rec.output_chars, 15);
        assert_eq!(rec.input_chars, 9);
        assert_eq!(rec.completion_tokens, Some(3));
        assert!(!rec.from_cache);
    }

    #[test]
    fn auth_is_never_retried() {
        let t = Scripted::new(vec![Ok(HttpReply::new(401, "no")), Ok(HttpReply::new(200, ok_body("x")))]);
        let err = client(t.clone(), false).complete(&req()).unwrap_err();
        assert!(matches!(err, BackendError::Auth { status: 401 }));
        assert_eq!(t.calls(), 1);
    }

    #[test]
    fn exhausts_on_persistent_5xx_and_timeouts() {
        let t = Scripted::new(vec![
            Err(TransportError::Timeout),
            Ok(HttpReply::new(503, "")),
            Err(TransportError::Connect("refused".into())),
            Ok(HttpReply::new(502, "")),
        ]);
        match client(t.clone(), false).complete(&req()) {
            Err(BackendError::ExhaustedRetries { attempts, last }) => {
                assert_eq!(attempts, 4);
                assert_eq!(last, "HTTP 502");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(t.calls(), 4);
    }

    #[test]
    fn other_client_errors_are_rejected() {
        let t = Scripted::new(vec![Ok(HttpReply::new(400, "bad field"))]);
        assert!(matches!(
            client(t.clone(), false).complete(&req()),
            Err(BackendError::Rejected { status: 400, .. })
        ));
        assert_eq!(t.calls(), 1);
    }

    #[test]
    fn malformed_success_body() {
        for body in ["not json", r#"{"choices": []}"#, r#"{"choices":[{"message":{"content":null}}]}"#] {
            let t = Scripted::new(vec![Ok(HttpReply::new(200, body))]);
            assert!(matches!(
                client(t, false).complete(&req()),
                Err(BackendError::MalformedResponse(_))
            ));
        }
    }

    #[test]
    fn request_body_shape() {
        let t = Scripted::new(vec![Ok(HttpReply::new(200, ok_body("a")))]);
        let c = client(t.clone(), false);
        c.complete(&req()).unwrap();
        let seen = t.seen.lock().unwrap()[0].clone();
        assert_eq!(seen.url, "http://localhost:9/v1/chat/completions");
        assert_eq!(seen.bearer.as_deref(), Some("k"));
        let body: Value = serde_json::from_str(&seen.body).unwrap();
        assert_eq!(body["model"], "gpt-test");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "Question?");
        assert_eq!(body["temperature"], 0.8);
        assert_eq!(body["max_tokens"], 1500);
        assert!(body.get("repetition_penalty").is_none());

        let with_rp = client(Scripted::new(vec![]), true);
        let greedy = CompletionRequest::new(
            "m",
            "q",
            GenerationParams { sampling_enabled: false, seed: Some(7), ..Default::default() },
        );
        let body = with_rp.request_body(&greedy);
        assert_eq!(body["repetition_penalty"], 1.2);
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["seed"], 7);
    }

    #[test]
    fn backoff_is_capped_exponential() {
        let p = RetryPolicy {
            max_attempts: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(1000),
        };
        let delays: Vec<u128> = (1..=6).map(|r| p.delay_for(r).as_millis()).collect();
        assert_eq!(delays, vec![100, 200, 400, 800, 1000, 1000]);
        assert_eq!(p.delay_for(200), Duration::from_millis(1000));
    }

    #[test]
    fn invalid_params_fail_before_sending() {
        let t = Scripted::new(vec![]);
        let bad = CompletionRequest::new("m", "q", GenerationParams { max_new_tokens: 0, ..Default::default() });
        assert!(matches!(client(t.clone(), false).complete(&bad), Err(BackendError::InvalidParams(_))));
        assert_eq!(t.calls(), 0);
    }
}
