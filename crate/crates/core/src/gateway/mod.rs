//! One abstraction over text-generation and embedding backends.
//!
//! [`Gateway`] wraps a [`Backend`] with the checks every call must pass
//! regardless of backend: the context-window guard, the per-call timeout and
//! non-empty embedding input. Backends:
//!
//! * [`RemoteBackend`]: JSON-over-HTTP chat-completion and embedding
//!   endpoints, with retry and an in-flight cap.
//! * [`MockBackend`]: a pure function of `(seed, request)` for offline runs.
//! * [`FaultyBackend`] and [`ScriptedBackend`]: wrappers for fault injection
//!   and scripted replies in tests.

mod mock;
mod profile;
mod remote;
mod scripted;
mod tokens;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EmbeddingVector, PersonaId};

pub use mock::{mock_embedding, mock_prose, MockBackend, LEXICON, MOCK_DIALOGUE_DELTA};
pub use profile::{BackendKind, BackendProfile, RetryPolicy, Temperatures};
pub use remote::RemoteBackend;
pub use scripted::{Fault, FaultyBackend, ScriptedBackend, VerdictRule};
pub use tokens::{compress_history, count_tokens, CompressedHistory, HISTORY_TOKEN_BUDGET};

/// What a call is for. Carried on the bundle for logging and fault targeting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    InitialBeat,
    NextBeat,
    Expansion,
    Refine,
    Verify,
    Brainstorm,
}

/// Machine-readable form of what the constraint layer asks for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum OutputFormat {
    /// One beat as JSON, with a `rationale` field.
    Beat {
        beat_index: usize,
        min_events: usize,
        max_events: usize,
    },
    Prose {
        min_words: usize,
        max_words: usize,
        dialogue_ratio: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        instruction: Option<String>,
    },
    /// A leading `[Yes]`/`[No]` answer, optionally followed by a description.
    Verdict,
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: usize,
    pub model_id: String,
}

/// A three-layer prompt plus generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub meta_layer: String,
    pub context_layer: String,
    pub constraint_layer: String,
    pub params: GenerationParams,
    pub format: OutputFormat,
    pub purpose: Purpose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub persona_id: Option<PersonaId>,
}

impl PromptBundle {
    pub fn prompt_tokens(&self) -> usize {
        count_tokens(&self.meta_layer)
            + count_tokens(&self.context_layer)
            + count_tokens(&self.constraint_layer)
    }

    /// The user-turn text sent to chat backends.
    pub fn user_message(&self) -> String {
        if self.context_layer.is_empty() {
            self.constraint_layer.clone()
        } else {
            format!("{}\n\n{}", self.context_layer, self.constraint_layer)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("prompt needs {tokens} tokens but the context limit is {limit}")]
    ContextOverflow { tokens: usize, limit: usize },
    #[error("embedding input is empty")]
    EmptyInput,
    #[error("backend call timed out")]
    Timeout,
    #[error("rate limited{}", .retry_after.map(|d| format!(", retry after {}s", d.as_secs())).unwrap_or_default())]
    RateLimited { retry_after: Option<Duration> },
    #[error("backend error{}: {message}", .status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Backend { status: Option<u16>, message: String },
    #[error("unusable backend response: {0}")]
    InvalidResponse(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn class(&self) -> &'static str {
        match self {
            GatewayError::ContextOverflow { .. } => "context_overflow",
            GatewayError::EmptyInput => "empty_input",
            GatewayError::Timeout => "timeout",
            GatewayError::RateLimited { .. } => "rate_limited",
            GatewayError::Backend { .. } => "backend_error",
            GatewayError::InvalidResponse(_) => "invalid_response",
            GatewayError::Config(_) => "config",
        }
    }
}

#[async_trait]
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    async fn complete(&self, bundle: &PromptBundle) -> Result<String, GatewayError>;

    async fn embed(&self, text: &str, model_id: &str) -> Result<EmbeddingVector, GatewayError>;

    async fn health(&self) -> Result<(), GatewayError> {
        Ok(())
    }

    /// True when the backend applies the per-call timeout itself (per
    /// attempt, so retries are not cut short by one outer deadline).
    fn enforces_timeout(&self) -> bool {
        false
    }
}

/// Stateless handle shared by every concurrent caller.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    profile: Arc<BackendProfile>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, profile: BackendProfile) -> Self {
        Self {
            backend,
            profile: Arc::new(profile),
        }
    }

    /// Build the backend the profile describes.
    pub fn from_profile(profile: BackendProfile) -> Result<Self, GatewayError> {
        let backend: Arc<dyn Backend> = match &profile.kind {
            BackendKind::Mock { seed, verdict_reply } => {
                let mock = MockBackend::new(*seed);
                match verdict_reply {
                    Some(reply) => Arc::new(ScriptedBackend::new(Arc::new(mock)).with_verdict_replies([reply.clone()])),
                    None => Arc::new(mock),
                }
            }
            BackendKind::Remote { .. } => Arc::new(RemoteBackend::from_profile(&profile)?),
        };
        Ok(Self::new(backend, profile))
    }

    /// The offline backend with default profile settings.
    pub fn mock(seed: u64) -> Self {
        Self::from_profile(BackendProfile::mock(seed)).expect("mock profile is valid")
    }

    pub fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub async fn complete(&self, bundle: &PromptBundle) -> Result<String, GatewayError> {
        let tokens = bundle.prompt_tokens();
        let limit = self.profile.context_limit_for(&bundle.params.model_id);
        if tokens > limit {
            return Err(GatewayError::ContextOverflow { tokens, limit });
        }
        let reply = self.with_timeout(self.backend.complete(bundle)).await?;
        tracing::debug!(
            purpose = ?bundle.purpose,
            persona = bundle.persona_id.as_ref().map(PersonaId::as_str),
            prompt_tokens = tokens,
            reply_tokens = count_tokens(&reply),
            "completion"
        );
        Ok(reply)
    }

    pub async fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        self.with_timeout(self.backend.embed(text, &self.profile.embedding_model))
            .await
    }

    pub async fn health(&self) -> Result<(), GatewayError> {
        self.with_timeout(self.backend.health()).await
    }

    async fn with_timeout<T>(
        &self,
        call: impl std::future::Future<Output = Result<T, GatewayError>>,
    ) -> Result<T, GatewayError> {
        if self.backend.enforces_timeout() {
            return call.await;
        }
        tokio::time::timeout(self.profile.timeout(), call)
            .await
            .map_err(|_| GatewayError::Timeout)?
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(context: String) -> PromptBundle {
        PromptBundle {
            meta_layer: "meta".into(),
            context_layer: context,
            constraint_layer: "constraint".into(),
            params: GenerationParams {
                temperature: 0.9,
                max_tokens: 100,
                model_id: "gpt-4o".into(),
            },
            format: OutputFormat::Beat {
                beat_index: 0,
                min_events: 3,
                max_events: 4,
            },
            purpose: Purpose::InitialBeat,
            persona_id: Some("mystery".into()),
        }
    }

    struct Exploding;

    #[async_trait]
    impl Backend for Exploding {
        fn name(&self) -> &str {
            "exploding"
        }
        async fn complete(&self, _: &PromptBundle) -> Result<String, GatewayError> {
            panic!("backend must not be reached")
        }
        async fn embed(&self, _: &str, _: &str) -> Result<EmbeddingVector, GatewayError> {
            panic!("backend must not be reached")
        }
    }

    #[tokio::test]
    async fn context_guard_runs_before_the_backend() {
        let gateway = Gateway::new(Arc::new(Exploding), BackendProfile::mock(1));
        let limit = gateway.profile().generation_context_limit;
        let huge = "x".repeat(limit * 4 + 4);
        let err = gateway.complete(&bundle(huge)).await.unwrap_err();
        assert!(matches!(err, GatewayError::ContextOverflow { .. }));
        assert_eq!(gateway.embed("  ").await.unwrap_err(), GatewayError::EmptyInput);
    }

    #[tokio::test]
    async fn same_bundle_same_seed_same_bytes() {
        let a = Gateway::mock(7);
        let b = Gateway::mock(7);
        let x = a.complete(&bundle("ctx".into())).await.unwrap();
        let y = b.complete(&bundle("ctx".into())).await.unwrap();
        assert_eq!(x, y);
        let z = Gateway::mock(8).complete(&bundle("ctx".into())).await.unwrap();
        assert_ne!(x, z);
    }

    #[tokio::test]
    async fn mock_beat_output_parses() {
        let gateway = Gateway::mock(3);
        for i in 0..20 {
            let reply = gateway.complete(&bundle(format!("ctx {i}"))).await.unwrap();
            let parsed = crate::domain::parse_beat_with_range(&reply, 3, 4).unwrap();
            assert!(parsed.rationale.is_some());
            assert!(parsed.repairs.is_empty());
        }
    }

    struct Slow;

    #[async_trait]
    impl Backend for Slow {
        fn name(&self) -> &str {
            "slow"
        }
        async fn complete(&self, _: &PromptBundle) -> Result<String, GatewayError> {
            tokio::time::sleep(Duration::from_secs(5)).await;
            Ok(String::new())
        }
        async fn embed(&self, _: &str, _: &str) -> Result<EmbeddingVector, GatewayError> {
            unreachable!()
        }
    }

    #[tokio::test]
    async fn per_call_timeout() {
        let mut profile = BackendProfile::mock(1);
        profile.timeout_ms = 20;
        let gateway = Gateway::new(Arc::new(Slow), profile);
        assert_eq!(gateway.complete(&bundle("c".into())).await.unwrap_err(), GatewayError::Timeout);
    }
}
