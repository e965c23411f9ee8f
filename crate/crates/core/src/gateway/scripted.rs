use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{mock_prose, Backend, GatewayError, OutputFormat, PromptBundle};
use crate::domain::{EmbeddingVector, PersonaId};
use crate::text::fnv1a64;

/// An injected failure for one persona's beat calls.
#[derive(Debug, Clone, PartialEq)]
pub enum Fault {
    /// Fail immediately with [`GatewayError::Timeout`].
    Timeout,
    /// Never answer; the gateway's own deadline has to fire.
    Hang,
    /// Answer normally after a delay.
    Delay(Duration),
    Status(u16),
    RateLimited(Option<Duration>),
}

struct Injected {
    fault: Fault,
    remaining: Option<usize>,
}

/// Wraps a backend and injects per-persona faults into beat-generation calls.
pub struct FaultyBackend {
    inner: Arc<dyn Backend>,
    faults: Mutex<HashMap<PersonaId, Injected>>,
}

impl FaultyBackend {
    pub fn new(inner: Arc<dyn Backend>) -> Self {
        Self {
            inner,
            faults: Mutex::new(HashMap::new()),
        }
    }

    /// Apply `fault` to every beat call for `persona`.
    pub fn with_fault(self, persona: impl Into<PersonaId>, fault: Fault) -> Self {
        self.insert(persona.into(), fault, None);
        self
    }

    /// Apply `fault` to the next `times` beat calls for `persona`, then recover.
    pub fn with_fault_times(self, persona: impl Into<PersonaId>, fault: Fault, times: usize) -> Self {
        self.insert(persona.into(), fault, Some(times));
        self
    }

    pub fn clear(&self, persona: &PersonaId) {
        self.faults.lock().expect("fault table").remove(persona);
    }

    fn insert(&self, persona: PersonaId, fault: Fault, remaining: Option<usize>) {
        self.faults
            .lock()
            .expect("fault table")
            .insert(persona, Injected { fault, remaining });
    }

    fn take(&self, bundle: &PromptBundle) -> Option<Fault> {
        if !matches!(bundle.format, OutputFormat::Beat { .. }) {
            return None;
        }
        let persona = bundle.persona_id.as_ref()?;
        let mut faults = self.faults.lock().expect("fault table");
        let injected = faults.get_mut(persona)?;
        match &mut injected.remaining {
            Some(0) => None,
            Some(n) => {
                *n -= 1;
                Some(injected.fault.clone())
            }
            None => Some(injected.fault.clone()),
        }
    }
}

#[async_trait]
impl Backend for FaultyBackend {
    fn name(&self) -> &str {
        "faulty"
    }

    async fn complete(&self, bundle: &PromptBundle) -> Result<String, GatewayError> {
        match self.take(bundle) {
            None => self.inner.complete(bundle).await,
            Some(Fault::Timeout) => Err(GatewayError::Timeout),
            Some(Fault::Hang) => std::future::pending().await,
            Some(Fault::Delay(d)) => {
                tokio::time::sleep(d).await;
                self.inner.complete(bundle).await
            }
            Some(Fault::Status(status)) => Err(GatewayError::Backend {
                status: Some(status),
                message: "injected failure".into(),
            }),
            Some(Fault::RateLimited(retry_after)) => Err(GatewayError::RateLimited { retry_after }),
        }
    }

    async fn embed(&self, text: &str, model_id: &str) -> Result<EmbeddingVector, GatewayError> {
        self.inner.embed(text, model_id).await
    }

    async fn health(&self) -> Result<(), GatewayError> {
        self.inner.health().await
    }

    fn enforces_timeout(&self) -> bool {
        self.inner.enforces_timeout()
    }
}

/// Decides the verifier reply for a verification bundle; `None` delegates.
pub type VerdictRule = Arc<dyn Fn(&PromptBundle) -> Option<String> + Send + Sync>;

/// Wraps a backend with scripted prose lengths and verifier replies.
pub struct ScriptedBackend {
    inner: Arc<dyn Backend>,
    prose_words: Mutex<VecDeque<usize>>,
    verdict_rule: Option<VerdictRule>,
}

impl ScriptedBackend {
    pub fn new(inner: Arc<dyn Backend>) -> Self {
        Self {
            inner,
            prose_words: Mutex::new(VecDeque::new()),
            verdict_rule: None,
        }
    }

    /// Prose calls consume these word counts in order, then fall through.
    pub fn with_prose_word_counts(self, counts: impl IntoIterator<Item = usize>) -> Self {
        self.prose_words.lock().expect("queue").extend(counts);
        self
    }

    /// Verifier calls cycle through `replies` in call order.
    pub fn with_verdict_replies(mut self, replies: impl IntoIterator<Item = String>) -> Self {
        let replies: Vec<String> = replies.into_iter().collect();
        assert!(!replies.is_empty(), "at least one scripted reply");
        let next = Mutex::new(0usize);
        self.verdict_rule = Some(Arc::new(move |_| {
            let mut i = next.lock().expect("cursor");
            let reply = replies[*i % replies.len()].clone();
            *i += 1;
            Some(reply)
        }));
        self
    }

    pub fn with_verdict_rule(mut self, rule: VerdictRule) -> Self {
        self.verdict_rule = Some(rule);
        self
    }

    pub fn remaining_prose_scripts(&self) -> usize {
        self.prose_words.lock().expect("queue").len()
    }
}

#[async_trait]
impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    async fn complete(&self, bundle: &PromptBundle) -> Result<String, GatewayError> {
        match &bundle.format {
            OutputFormat::Verdict => {
                if let Some(reply) = self.verdict_rule.as_ref().and_then(|rule| rule(bundle)) {
                    return Ok(reply);
                }
            }
            OutputFormat::Prose { dialogue_ratio, .. } => {
                let words = self.prose_words.lock().expect("queue").pop_front();
                if let Some(words) = words {
                    let hash = fnv1a64(&serde_json::to_vec(bundle).expect("bundle serializes"));
                    let mut rng = ChaCha8Rng::seed_from_u64(hash);
                    return Ok(mock_prose(&mut rng, words, *dialogue_ratio));
                }
            }
            _ => {}
        }
        self.inner.complete(bundle).await
    }

    async fn embed(&self, text: &str, model_id: &str) -> Result<EmbeddingVector, GatewayError> {
        self.inner.embed(text, model_id).await
    }

    async fn health(&self) -> Result<(), GatewayError> {
        self.inner.health().await
    }

    fn enforces_timeout(&self) -> bool {
        self.inner.enforces_timeout()
    }
}
