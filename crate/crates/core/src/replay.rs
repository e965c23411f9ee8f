//! Scripted sessions: a fixed sequence of writer actions run headless.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "sparkle": "A lighthouse keeper finds a letter addressed to herself.",
//!   "picks": ["mystery", "romance", "horror", "mystery", "comedy", "fantasy"],
//!   "edits": [{"pick": 2, "beat": {"setting": {"location": "the cellar", "time": "night"},
//!              "characters": ["Ada"], "key_events": ["a", "b", "c"]}}],
//!   "refinements": [{"after_pick": 3, "segment": 1, "instruction": "More dialogue."}],
//!   "brainstorms": [{"after_pick": 0, "message": "Who wrote the letter?"}]
//! }
//! ```
//!
//! The script is flattened into steps: create, then per pick its optional
//! edit and the pick itself, then the brainstorms and refinements placed
//! after it. With a store, the session is saved after every step and a
//! rerun resumes after the last saved one.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{PersonaId, SessionId, Sparkle, StoryBeat, StorySession};
use crate::engine::{EngineError, StoryEngine};
use crate::error::ErrorClass;
use crate::store::{PortfolioStore, StoreError};
use crate::text::fnv1a64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SparkleSpec {
    Text(String),
    Full(Sparkle),
}

impl SparkleSpec {
    pub fn to_sparkle(&self) -> Result<Sparkle, crate::domain::DomainError> {
        match self {
            SparkleSpec::Text(t) => Sparkle::new(t.clone()),
            SparkleSpec::Full(s) => {
                s.validate()?;
                Ok(s.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEdit {
    /// Zero-based pick the edit precedes.
    pub pick: usize,
    pub beat: StoryBeat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRefinement {
    pub after_pick: usize,
    pub segment: usize,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptBrainstorm {
    /// Omit to brainstorm before the first pick.
    #[serde(default)]
    pub after_pick: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayScript {
    #[serde(default)]
    pub seed: Option<u64>,
    pub sparkle: SparkleSpec,
    pub picks: Vec<PersonaId>,
    #[serde(default)]
    pub edits: Vec<ScriptEdit>,
    #[serde(default)]
    pub refinements: Vec<ScriptRefinement>,
    #[serde(default)]
    pub brainstorms: Vec<ScriptBrainstorm>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplayStep {
    Create,
    Edit { persona_id: PersonaId, beat: StoryBeat },
    Pick { persona_id: PersonaId },
    Refine { segment: usize, instruction: String },
    Brainstorm { message: String },
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("replay script: {0}")]
    Script(String),
    #[error("step {step}: {error}")]
    Engine { step: usize, error: EngineError },
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl ReplayError {
    pub fn class(&self) -> ErrorClass {
        match self {
            ReplayError::Script(_) => ErrorClass::Invalid,
            ReplayError::Engine { error, .. } => error.class(),
            ReplayError::Store(e) => e.class(),
        }
    }
}

impl ReplayScript {
    pub fn from_json(text: &str) -> Result<Self, ReplayError> {
        let script: Self = serde_json::from_str(text).map_err(|e| ReplayError::Script(e.to_string()))?;
        script.check()?;
        Ok(script)
    }

    fn check(&self) -> Result<(), ReplayError> {
        self.sparkle.to_sparkle().map_err(|e| ReplayError::Script(e.to_string()))?;
        let n = self.picks.len();
        let bad = |what: &str, at: usize| ReplayError::Script(format!("{what} refers to pick {at}, but the script has {n} picks"));
        if let Some(e) = self.edits.iter().find(|e| e.pick >= n) {
            return Err(bad("an edit", e.pick));
        }
        if let Some(r) = self.refinements.iter().find(|r| r.after_pick >= n) {
            return Err(bad("a refinement", r.after_pick));
        }
        if let Some(b) = self.brainstorms.iter().find(|b| b.after_pick.is_some_and(|p| p >= n)) {
            return Err(bad("a brainstorm", b.after_pick.unwrap_or_default()));
        }
        Ok(())
    }

    /// The flattened step list. Brainstorms come before refinements at the
    /// same position; each kind keeps script order.
    pub fn steps(&self) -> Vec<ReplayStep> {
        let brainstorms_at = |at: Option<usize>| {
            self.brainstorms
                .iter()
                .filter(move |b| b.after_pick == at)
                .map(|b| ReplayStep::Brainstorm { message: b.message.clone() })
        };
        let mut steps = vec![ReplayStep::Create];
        steps.extend(brainstorms_at(None));
        for (i, persona_id) in self.picks.iter().enumerate() {
            for edit in self.edits.iter().filter(|e| e.pick == i) {
                steps.push(ReplayStep::Edit {
                    persona_id: persona_id.clone(),
                    beat: edit.beat.clone(),
                });
            }
            steps.push(ReplayStep::Pick {
                persona_id: persona_id.clone(),
            });
            steps.extend(brainstorms_at(Some(i)));
            for r in self.refinements.iter().filter(|r| r.after_pick == i) {
                steps.push(ReplayStep::Refine {
                    segment: r.segment,
                    instruction: r.instruction.clone(),
                });
            }
        }
        steps
    }

    /// Stable id for this script under `seed`, so reruns find their session.
    pub fn session_id(&self, seed: u64) -> SessionId {
        let mut script = self.clone();
        script.seed = Some(seed);
        let bytes = serde_json::to_vec(&script).expect("script serializes");
        SessionId::new(format!("replay-{:016x}", fnv1a64(&bytes))).expect("hex id is valid")
    }
}

/// Steps already reflected in `session`. Every step grows exactly one
/// counter, so the sum locates the resume point.
pub fn steps_done(session: &StorySession) -> usize {
    let edits: usize = session
        .proposal_history
        .iter()
        .flat_map(|r| &r.proposals)
        .map(|p| p.edits.len())
        .sum();
    let revisions: usize = session.segments.iter().map(|s| s.revisions.len()).sum();
    1 + session.selection_log.len() + edits + revisions + session.brainstorm.len() / 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub session: StorySession,
    /// Steps executed by this call.
    pub ran: usize,
    /// Steps complete overall.
    pub done: usize,
    pub total: usize,
}

/// Run `script` to the end, or until `stop_after` steps are complete.
pub async fn replay(
    engine: &StoryEngine,
    script: &ReplayScript,
    seed: u64,
    store: Option<&PortfolioStore>,
    stop_after: Option<usize>,
) -> Result<ReplayOutcome, ReplayError> {
    replay_as(engine, script, script.session_id(seed), store, stop_after).await
}

/// [`replay`] under a caller-chosen session id.
pub async fn replay_as(
    engine: &StoryEngine,
    script: &ReplayScript,
    id: SessionId,
    store: Option<&PortfolioStore>,
    stop_after: Option<usize>,
) -> Result<ReplayOutcome, ReplayError> {
    let steps = script.steps();
    let total = steps.len();
    let limit = stop_after.unwrap_or(total).min(total);
    let mut session = match store {
        Some(store) if store.exists(&id) => Some(store.load(&id)?),
        _ => None,
    };
    let mut done = session.as_ref().map_or(0, steps_done);
    if done > total {
        return Err(ReplayError::Script(format!("session `{}` is past the end of this script", id.as_str())));
    }
    let mut ran = 0;
    for step in &steps[done..limit.max(done)] {
        let fail = |error| ReplayError::Engine { step: done, error };
        match step {
            ReplayStep::Create => {
                let sparkle = script.sparkle.to_sparkle().map_err(|e| ReplayError::Script(e.to_string()))?;
                session = Some(engine.create_session(Some(id.clone()), sparkle).await.map_err(fail)?);
            }
            other => {
                let s = session.as_mut().expect("created by the first step");
                let result = match other {
                    ReplayStep::Edit { persona_id, beat } => engine.edit_beat(s, persona_id, beat.clone()).await,
                    ReplayStep::Pick { persona_id } => engine.pick(s, persona_id, None).await,
                    ReplayStep::Refine { segment, instruction } => engine.refine(s, *segment, instruction).await.map(drop),
                    ReplayStep::Brainstorm { message } => engine.brainstorm(s, message).await.map(drop),
                    ReplayStep::Create => unreachable!(),
                };
                result.map_err(fail)?;
            }
        }
        if let (Some(store), Some(s)) = (store, &session) {
            store.save(s)?;
        }
        done += 1;
        ran += 1;
    }
    let session = session.ok_or_else(|| ReplayError::Script("stopped before the session was created".into()))?;
    Ok(ReplayOutcome { session, ran, done, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SessionStatus;
    use crate::export::export_json;

    fn script() -> ReplayScript {
        ReplayScript::from_json(
            r#"{
                "seed": 7,
                "sparkle": {"text": "A clockmaker's daughter inherits a broken city.", "language": "en",
                            "target_beat_count": 3, "target_segment_words": {"lower": 800, "upper": 1000}},
                "picks": ["mystery", "romance", "scifi"],
                "edits": [{"pick": 1, "beat": {"index": 1, "setting": {"location": "the bell tower", "time": "noon"},
                           "characters": ["Ada"], "key_events": ["Ada climbs", "Ada listens", "Ada waits"]}}],
                "refinements": [{"after_pick": 1, "segment": 0, "instruction": "Add more dialogue."}],
                "brainstorms": [{"message": "What broke the city?"}, {"after_pick": 2, "message": "Ending?"}]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn steps_are_flattened_in_order() {
        let kinds: Vec<&str> = script()
            .steps()
            .iter()
            .map(|s| match s {
                ReplayStep::Create => "create",
                ReplayStep::Edit { .. } => "edit",
                ReplayStep::Pick { .. } => "pick",
                ReplayStep::Refine { .. } => "refine",
                ReplayStep::Brainstorm { .. } => "brainstorm",
            })
            .collect();
        assert_eq!(kinds, ["create", "brainstorm", "pick", "edit", "pick", "refine", "pick", "brainstorm"]);
    }

    #[test]
    fn out_of_range_pick_is_rejected() {
        let err = ReplayScript::from_json(r#"{"sparkle": "x", "picks": ["a"], "edits": [{"pick": 1, "beat": {"setting": {"location": "l", "time": "t"}, "characters": ["A"], "key_events": ["a","b","c"]}}]}"#)
            .unwrap_err();
        assert_eq!(err.class(), ErrorClass::Invalid);
    }

    #[tokio::test]
    async fn resumed_replay_matches_uninterrupted() {
        let engine = StoryEngine::mock(7);
        let s = script();
        let full = replay(&engine, &s, 7, None, None).await.unwrap();
        assert_eq!(full.session.status, SessionStatus::Complete);
        assert_eq!(steps_done(&full.session), full.total);

        let dir = tempfile::tempdir().unwrap();
        let store = PortfolioStore::open(dir.path()).unwrap();
        for stop in [2, 4, 5] {
            let part = replay(&engine, &s, 7, Some(&store), Some(stop)).await.unwrap();
            assert_eq!(part.done, stop);
            assert_eq!(steps_done(&store.load(&part.session.session_id).unwrap()), stop);
        }
        let resumed = replay(&engine, &s, 7, Some(&store), None).await.unwrap();
        assert_eq!(resumed.ran, full.total - 5);
        assert_eq!(export_json(&resumed.session), export_json(&full.session));
        assert_eq!(resumed.session, full.session);
    }
}
