use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use reqwest::{header, Client, StatusCode};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use super::{Backend, BackendKind, BackendProfile, GatewayError, OutputFormat, PromptBundle, RetryPolicy};
use crate::domain::EmbeddingVector;

/// OpenAI-compatible chat-completion and embedding client.
///
/// Requests:
///
/// * `POST {endpoint}/chat/completions` with
///   `{"model", "messages": [system = meta layer, user = context + constraint],
///   "temperature", "max_tokens"}`; beat requests add
///   `"response_format": {"type": "json_object"}`. The reply text is
///   `choices[0].message.content`.
/// * `POST {endpoint}/embeddings` with `{"model", "input"}`; the vector is
///   `data[0].embedding` and must have 1536 entries.
/// * `GET {endpoint}/models` for health checks.
///
/// 429 and 5xx responses and transport errors are retried with exponential
/// backoff (or the server's `Retry-After`, when longer) up to
/// `retry.max_retries` times; the last error is then returned. At most
/// `max_in_flight` requests are outstanding at once; waiters are admitted in
/// arrival order.
pub struct RemoteBackend {
    client: Client,
    endpoint: String,
    api_key: String,
    retry: RetryPolicy,
    timeout: Duration,
    permits: Arc<Semaphore>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Value>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingData>,
}

#[derive(Deserialize)]
struct EmbeddingData {
    embedding: Vec<f64>,
}

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, profile: &BackendProfile) -> Result<Self, GatewayError> {
        let endpoint = endpoint.into().trim_end_matches('/').to_owned();
        if endpoint.is_empty() {
            return Err(GatewayError::Config("remote endpoint is empty".into()));
        }
        let client = Client::builder()
            .timeout(profile.timeout())
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint,
            api_key: api_key.into(),
            retry: profile.retry,
            timeout: profile.timeout(),
            permits: Arc::new(Semaphore::new(profile.max_in_flight.max(1))),
        })
    }

    /// Build from a remote profile, reading the key from its environment variable.
    pub fn from_profile(profile: &BackendProfile) -> Result<Self, GatewayError> {
        let BackendKind::Remote { endpoint, api_key_env } = &profile.kind else {
            return Err(GatewayError::Config("profile is not a remote backend".into()));
        };
        let api_key = std::env::var(api_key_env)
            .map_err(|_| GatewayError::Config(format!("environment variable {api_key_env} is not set")))?;
        Self::new(endpoint.clone(), api_key, profile)
    }

    async fn send(&self, build: impl Fn() -> reqwest::RequestBuilder) -> Result<reqwest::Response, GatewayError> {
        let mut attempt = 0;
        loop {
            let result = {
                let _permit = self.permits.acquire().await.expect("semaphore never closes");
                build().bearer_auth(&self.api_key).send().await
            };
            let error = match result {
                Ok(resp) if resp.status().is_success() => return Ok(resp),
                Ok(resp) => status_error(resp).await,
                Err(e) if e.is_timeout() => GatewayError::Timeout,
                Err(e) => GatewayError::Backend {
                    status: None,
                    message: e.to_string(),
                },
            };
            let retryable = match &error {
                GatewayError::RateLimited { .. } | GatewayError::Timeout => true,
                GatewayError::Backend { status, .. } => status.is_none_or(|s| s >= 500),
                _ => false,
            };
            if !retryable || attempt >= self.retry.max_retries {
                return Err(error);
            }
            let mut wait = self.retry.backoff(attempt);
            if let GatewayError::RateLimited { retry_after: Some(after) } = &error {
                wait = wait.max(*after);
            }
            tracing::warn!(attempt, wait_ms = wait.as_millis() as u64, error = %error, "retrying backend call");
            tokio::time::sleep(wait).await;
            attempt += 1;
        }
    }
}

async fn status_error(resp: reqwest::Response) -> GatewayError {
    let status = resp.status();
    let retry_after = resp
        .headers()
        .get(header::RETRY_AFTER)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(Duration::from_secs);
    let body = resp.text().await.unwrap_or_default();
    if status == StatusCode::TOO_MANY_REQUESTS {
        GatewayError::RateLimited { retry_after }
    } else {
        GatewayError::Backend {
            status: Some(status.as_u16()),
            message: body.chars().take(500).collect(),
        }
    }
}

#[async_trait]
impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    async fn complete(&self, bundle: &PromptBundle) -> Result<String, GatewayError> {
        let mut body = json!({
            "model": bundle.params.model_id,
            "messages": [
                {"role": "system", "content": bundle.meta_layer},
                {"role": "user", "content": bundle.user_message()},
            ],
            "temperature": bundle.params.temperature,
            "max_tokens": bundle.params.max_tokens,
        });
        if matches!(bundle.format, OutputFormat::Beat { .. }) {
            body["response_format"] = json!({"type": "json_object"});
        }
        let url = format!("{}/chat/completions", self.endpoint);
        let resp = self.send(|| self.client.post(&url).json(&body)).await?;
        let parsed: ChatResponse = resp
            .json()
            .await
            .map_err(|e| GatewayError::InvalidResponse(e.to_string()))?;
        if let Some(usage) = &parsed.usage {
            tracing::debug!(%usage, "reported usage");
        }
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::InvalidResponse("no message content".into()))
    }

    async fn embed(&self, text: &str, model_id: &str) -> Result<EmbeddingVector, GatewayError> {
        let body = json!({"model": model_id, "input": text});
        let url = format!("{}/embeddings", self.endpoint);
        let resp = self.send(|| self.client.post(&url).json(&body)).await?;
        let parsed: EmbeddingResponse = resp
            .json()
            .await
            .map_err(|e| GatewayError::InvalidResponse(e.to_string()))?;
        let values = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::InvalidResponse("no embedding returned".into()))?
            .embedding;
        EmbeddingVector::new(values).map_err(|e| GatewayError::InvalidResponse(e.to_string()))
    }

    async fn health(&self) -> Result<(), GatewayError> {
        let url = format!("{}/models", self.endpoint);
        self.send(|| self.client.get(&url)).await.map(|_| ())
    }

    fn enforces_timeout(&self) -> bool {
        true
    }
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.endpoint)
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}
