use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    /// OpenAI-compatible HTTP API. The key is read from `api_key_env`.
    Remote {
        endpoint: String,
        #[serde(default = "default_key_env")]
        api_key_env: String,
    },
    Mock {
        seed: u64,
        /// Fixed verifier reply, for demonstrating consistency labels offline.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        verdict_reply: Option<String>,
    },
}

fn default_key_env() -> String {
    "LOOM_API_KEY".to_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl RetryPolicy {
    /// Exponential backoff for the given zero-based attempt, capped.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_backoff_ms: 500,
            max_backoff_ms: 8_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperatures {
    pub variation: f64,
    pub expansion: f64,
    pub verification: f64,
    pub brainstorm: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Self {
            variation: 0.9,
            expansion: 0.7,
            verification: 0.0,
            brainstorm: 0.8,
        }
    }
}

/// Which backend to call and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendProfile {
    pub kind: BackendKind,
    pub generation_model: String,
    pub verification_model: String,
    pub embedding_model: String,
    pub generation_context_limit: usize,
    pub verification_context_limit: usize,
    pub retry: RetryPolicy,
    pub timeout_ms: u64,
    /// Cap on concurrent remote calls.
    pub max_in_flight: usize,
    pub temperatures: Temperatures,
}

impl Default for BackendProfile {
    fn default() -> Self {
        Self {
            kind: BackendKind::Remote {
                endpoint: "https://api.openai.com/v1".to_owned(),
                api_key_env: default_key_env(),
            },
            generation_model: "gpt-4o".to_owned(),
            verification_model: "gpt-3.5-turbo".to_owned(),
            embedding_model: "text-embedding-ada-002".to_owned(),
            generation_context_limit: 128_000,
            verification_context_limit: 16_385,
            retry: RetryPolicy::default(),
            timeout_ms: 120_000,
            max_in_flight: 10,
            temperatures: Temperatures::default(),
        }
    }
}

impl BackendProfile {
    pub fn mock(seed: u64) -> Self {
        Self {
            kind: BackendKind::Mock {
                seed,
                verdict_reply: None,
            },
            timeout_ms: 10_000,
            ..Self::default()
        }
    }

    /// Environment variable a remote profile reads its key from by default.
    pub fn default_key_env() -> String {
        default_key_env()
    }

    pub fn is_mock(&self) -> bool {
        matches!(self.kind, BackendKind::Mock { .. })
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn context_limit_for(&self, model_id: &str) -> usize {
        if model_id == self.verification_model {
            self.verification_context_limit
        } else {
            self.generation_context_limit
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(0), Duration::from_millis(500));
        assert_eq!(p.backoff(1), Duration::from_millis(1000));
        assert_eq!(p.backoff(4), Duration::from_millis(8000));
        assert_eq!(p.backoff(200), Duration::from_millis(8000));
    }

    #[test]
    fn toml_round_trip_with_defaults() {
        let profile: BackendProfile = toml::from_str(
            r#"
            generation_model = "local-model"
            [kind]
            kind = "mock"
            seed = 7
            "#,
        )
        .unwrap();
        assert_eq!(profile.generation_model, "local-model");
        assert_eq!(profile.verification_model, "gpt-3.5-turbo");
        assert!(profile.is_mock());
        let text = toml::to_string(&profile).unwrap();
        assert_eq!(toml::from_str::<BackendProfile>(&text).unwrap(), profile);
    }

    #[test]
    fn verification_model_has_its_own_limit() {
        let p = BackendProfile::default();
        assert_eq!(p.context_limit_for("gpt-3.5-turbo"), 16_385);
        assert_eq!(p.context_limit_for("gpt-4o"), 128_000);
    }
}
