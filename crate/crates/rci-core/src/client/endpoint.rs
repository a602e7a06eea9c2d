//! Blocking HTTP client for OpenAI-style vision chat endpoints.
//!
//! Requests POST to `{base}/chat/completions` with the prompt text and the
//! region image inlined as a base64 data URL. Transport errors and statuses
//! 408, 429, and 5xx retry with exponential backoff and jitter; other 4xx
//! statuses and unparseable bodies are terminal.

use std::time::Duration;

use base64::Engine;
use rand::Rng;

use super::{ClientError, InferenceRequest, ModelKind, ModelRef, Prediction, Predictor};

pub struct EndpointClient {
    http: reqwest::blocking::Client,
    url: String,
    model_id: String,
    bearer: Option<String>,
    max_retries: u32,
    retry_base: Duration,
}

enum AttemptOutcome {
    Done(String),
    Retry(String),
    Fatal(ClientError),
}

impl EndpointClient {
    /// Resolves the bearer token from the configured environment variable up
    /// front so a missing credential fails before any cell is dispatched.
    pub fn new(model: &ModelRef) -> Result<Self, ClientError> {
        let base_url = match model.kind()? {
            ModelKind::Endpoint { base_url } => base_url,
            ModelKind::Oracle { .. } => {
                return Err(ClientError::MissingEndpoint {
                    model_id: model.model_id.clone(),
                })
            }
        };
        let bearer = match &model.auth_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| ClientError::MissingAuthEnv { var: var.clone() })?,
            ),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(model.request_timeout())
            .build()?;
        Ok(EndpointClient {
            http,
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model_id: model.model_id.clone(),
            bearer,
            max_retries: model.max_retries,
            retry_base: Duration::from_secs(1),
        })
    }

    /// Shrinks the backoff base so retry paths are testable in milliseconds.
    pub fn with_retry_base(mut self, base: Duration) -> Self {
        self.retry_base = base;
        self
    }

    fn backoff(&self, completed_attempts: u32) -> Duration {
        let doubled = self
            .retry_base
            .saturating_mul(1 << (completed_attempts - 1).min(16));
        let jitter = rand::thread_rng().gen_range(0.0..0.25);
        doubled.mul_f64(1.0 + jitter)
    }

    fn attempt(&self, body: &serde_json::Value) -> AttemptOutcome {
        let mut request = self.http.post(&self.url).json(body);
        if let Some(token) = &self.bearer {
            request = request.bearer_auth(token);
        }
        let response = match request.send() {
            Ok(r) => r,
            Err(e) => return AttemptOutcome::Retry(e.to_string()),
        };
        let status = response.status();
        let text = match response.text() {
            Ok(t) => t,
            Err(e) => return AttemptOutcome::Retry(e.to_string()),
        };
        if status.is_success() {
            match extract_content(&text) {
                Ok(content) => AttemptOutcome::Done(content),
                Err(detail) => AttemptOutcome::Fatal(ClientError::MalformedResponse { detail }),
            }
        } else if status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error() {
            AttemptOutcome::Retry(format!("status {status}: {}", truncate(&text)))
        } else {
            AttemptOutcome::Fatal(ClientError::HttpStatus {
                status: status.as_u16(),
                detail: truncate(&text),
            })
        }
    }
}

impl Predictor for EndpointClient {
    fn predict(&self, request: &InferenceRequest) -> Result<Prediction, ClientError> {
        let data_url = format!(
            "data:{};base64,{}",
            request.image_encoding.mime(),
            base64::engine::general_purpose::STANDARD.encode(&request.image_bytes)
        );
        let body = serde_json::json!({
            "model": self.model_id,
            "temperature": 0,
            "messages": [{
                "role": "user",
                "content": [
                    { "type": "text", "text": request.prompt },
                    { "type": "image_url", "image_url": { "url": data_url } },
                ],
            }],
        });

        let attempts_allowed = self.max_retries.saturating_add(1);
        let mut last = String::new();
        for attempt_no in 1..=attempts_allowed {
            if attempt_no > 1 {
                std::thread::sleep(self.backoff(attempt_no - 1));
            }
            match self.attempt(&body) {
                AttemptOutcome::Done(content) => {
                    return Ok(Prediction {
                        answer_text: content,
                        attempts: attempt_no,
                    })
                }
                AttemptOutcome::Fatal(err) => return Err(err),
                AttemptOutcome::Retry(detail) => last = detail,
            }
        }
        Err(ClientError::RetriesExhausted {
            attempts: attempts_allowed,
            last,
        })
    }
}

fn extract_content(body: &str) -> Result<String, String> {
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| format!("invalid json ({e}): {}", truncate(body)))?;
    value
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| format!("body {}", truncate(body)))
}

fn truncate(text: &str) -> String {
    const LIMIT: usize = 200;
    if text.len() <= LIMIT {
        return text.to_string();
    }
    let mut end = LIMIT;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &text[..end])
}
