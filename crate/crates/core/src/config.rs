//! Runtime configuration: a TOML file plus `LOOM_*` environment overrides.
//!
//! ```toml
//! portfolio_dir = "portfolio"
//! bind = "127.0.0.1:8080"
//!
//! [backend]
//! generation_model = "gpt-4o"
//!
//! [backend.kind]
//! kind = "mock"
//! seed = 7
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Roster;
use crate::engine::StoryEngine;
use crate::gateway::{BackendKind, BackendProfile, Gateway};
use crate::prompts::PromptTemplates;

pub const ENV_CONFIG: &str = "LOOM_CONFIG";
pub const ENV_PORTFOLIO: &str = "LOOM_PORTFOLIO";
pub const ENV_BIND: &str = "LOOM_BIND";
pub const ENV_MOCK_SEED: &str = "LOOM_MOCK_SEED";
pub const ENV_ENDPOINT: &str = "LOOM_ENDPOINT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{name}: {message}")]
    Env { name: &'static str, message: String },
    #[error("{0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub backend: BackendProfile,
    pub portfolio_dir: PathBuf,
    pub bind: String,
    /// Roster JSON; the built-in ten personas when unset.
    pub roster_path: Option<PathBuf>,
    /// Directory of template overrides.
    pub prompts_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            backend: BackendProfile::default(),
            portfolio_dir: PathBuf::from("portfolio"),
            bind: "127.0.0.1:8080".to_owned(),
            roster_path: None,
            prompts_dir: None,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    /// Defaults, then the file (`path`, else `LOOM_CONFIG`), then the
    /// environment. `env` is injectable so tests need not touch the process.
    pub fn resolve(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let file = path.map(Path::to_owned).or_else(|| env(ENV_CONFIG).map(PathBuf::from));
        let mut config = match file {
            Some(path) => {
                let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::Read {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                Self::from_toml(&text, &path)?
            }
            None => Self::default(),
        };
        if let Some(dir) = env(ENV_PORTFOLIO) {
            config.portfolio_dir = dir.into();
        }
        if let Some(bind) = env(ENV_BIND) {
            config.bind = bind;
        }
        if let Some(endpoint) = env(ENV_ENDPOINT) {
            let api_key_env = match &config.backend.kind {
                BackendKind::Remote { api_key_env, .. } => api_key_env.clone(),
                BackendKind::Mock { .. } => BackendProfile::default_key_env(),
            };
            config.backend.kind = BackendKind::Remote { endpoint, api_key_env };
        }
        if let Some(seed) = env(ENV_MOCK_SEED) {
            let seed = seed.trim().parse().map_err(|e| ConfigError::Env {
                name: ENV_MOCK_SEED,
                message: format!("`{seed}` is not an unsigned integer: {e}"),
            })?;
            config.use_mock(seed, None);
        }
        Ok(config)
    }

    /// Read the process environment.
    pub fn from_env(path: Option<&Path>) -> Result<Self, ConfigError> {
        Self::resolve(path, |name| std::env::var(name).ok())
    }

    pub fn use_mock(&mut self, seed: u64, verdict_reply: Option<String>) {
        self.backend.kind = BackendKind::Mock { seed, verdict_reply };
        if self.backend.timeout_ms == BackendProfile::default().timeout_ms {
            self.backend.timeout_ms = BackendProfile::mock(seed).timeout_ms;
        }
    }

    pub fn engine(&self) -> Result<StoryEngine, ConfigError> {
        let gateway = Gateway::from_profile(self.backend.clone()).map_err(|e| ConfigError::Setup(e.to_string()))?;
        let templates = match &self.prompts_dir {
            Some(dir) => PromptTemplates::load(dir).map_err(|e| ConfigError::Setup(e.to_string()))?,
            None => PromptTemplates::builtin(),
        };
        let roster = match &self.roster_path {
            Some(path) => Roster::load(path).map_err(|e| ConfigError::Setup(e.to_string()))?,
            None => Roster::builtin(),
        };
        Ok(StoryEngine::new(gateway, templates, roster))
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;

    fn env(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let map: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| map.get(k).cloned()
    }

    #[test]
    fn defaults_without_file_or_env() {
        assert_eq!(Config::resolve(None, env(&[])).unwrap(), Config::default());
    }

    #[test]
    fn file_then_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loom.toml");
        std::fs::write(
            &path,
            "portfolio_dir = \"p\"\nbind = \"0.0.0.0:1\"\n[backend.kind]\nkind = \"mock\"\nseed = 7\n",
        )
        .unwrap();
        let c = Config::resolve(None, env(&[(ENV_CONFIG, path.to_str().unwrap()), (ENV_BIND, "127.0.0.1:9")])).unwrap();
        assert_eq!(c.portfolio_dir, PathBuf::from("p"));
        assert_eq!(c.bind, "127.0.0.1:9");
        assert_eq!(c.backend.kind, BackendKind::Mock { seed: 7, verdict_reply: None });
    }

    #[test]
    fn bad_seed_is_reported() {
        let err = Config::resolve(None, env(&[(ENV_MOCK_SEED, "x")])).unwrap_err();
        assert!(matches!(err, ConfigError::Env { name: ENV_MOCK_SEED, .. }));
    }

    #[test]
    fn mock_engine_builds() {
        let c = Config::resolve(None, env(&[(ENV_MOCK_SEED, "3")])).unwrap();
        assert_eq!(c.engine().unwrap().gateway.backend_name(), "mock");
    }
}
