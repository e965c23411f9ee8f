//! Beat-to-prose expansion and the editing aids around it.

use thiserror::Error;

use crate::domain::{
    BeatProposal, DomainError, EditRecord, NarrativeSegment, PersonaId, Roster, SessionStatus,
    StoryBeat, StorySession, WordRange, MANUAL_EDIT,
};
use crate::gateway::{Gateway, GatewayError, PromptBundle};
use crate::plot::{check_consistency, SegmentIndex};
use crate::prompts::{
    assemble_prompt, brainstorm_prompt, refine_prompt, PromptError, PromptTemplates, Stage,
};
use crate::text::word_count;

/// Generation calls per expansion or refine, counting the one retry.
pub const MAX_PROSE_ATTEMPTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExpandError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Stage(#[from] PromptError),
    #[error(transparent)]
    Invalid(#[from] DomainError),
    #[error("segment {0} does not exist")]
    UnknownSegment(usize),
    #[error("persona `{0}` is not in the roster")]
    UnknownPersona(PersonaId),
    #[error("persona `{0}` has no proposal in the current round")]
    NotInRound(PersonaId),
    #[error("no round is open for selection")]
    NoOpenRound,
}

/// Prose from one or two calls. The second call happens only when the first
/// misses `range` by more than 25%; it carries a note about the miss.
pub struct Draft {
    pub prose: String,
    pub attempts: usize,
    pub out_of_range: bool,
}

pub async fn generate_prose(gateway: &Gateway, bundle: &PromptBundle, range: WordRange) -> Result<Draft, GatewayError> {
    let prose = gateway.complete(bundle).await?;
    let words = word_count(&prose);
    if range.within_tolerance(words) {
        return Ok(Draft {
            prose,
            attempts: 1,
            out_of_range: false,
        });
    }
    tracing::info!(words, lower = range.lower, upper = range.upper, "draft outside tolerance, regenerating");
    let mut retry = bundle.clone();
    retry.constraint_layer.push_str(&format!(
        "\n\nA previous draft had {words} words. It must be between {} and {} words.",
        range.lower, range.upper
    ));
    let prose = gateway.complete(&retry).await?;
    let out_of_range = !range.within_tolerance(word_count(&prose));
    Ok(Draft {
        prose,
        attempts: 2,
        out_of_range,
    })
}

/// Expand the session's selected beat with the persona that proposed it.
pub async fn expand_beat(
    gateway: &Gateway,
    templates: &PromptTemplates,
    roster: &Roster,
    session: &StorySession,
) -> Result<NarrativeSegment, ExpandError> {
    let persona_id = session
        .selection_log
        .last()
        .filter(|_| session.status == SessionStatus::Expanding)
        .ok_or(PromptError::IllegalStage {
            stage: Stage::Expansion,
            status: session.status,
            reason: "no selected beat awaits expansion".into(),
        })?;
    let persona = roster
        .get(persona_id)
        .ok_or_else(|| ExpandError::UnknownPersona(persona_id.clone()))?;
    let bundle = assemble_prompt(templates, gateway.profile(), persona, session, Stage::Expansion)?;
    let draft = generate_prose(gateway, &bundle, session.sparkle.target_segment_words).await?;
    let mut segment = NarrativeSegment::new(session.beats.len() - 1, persona_id.clone(), draft.prose);
    segment.out_of_range = draft.out_of_range;
    Ok(segment)
}

/// Rewrite segment `beat_index` by instruction. Returns the revised segment;
/// the persona attribution is unchanged.
pub async fn refine(
    gateway: &Gateway,
    templates: &PromptTemplates,
    roster: &Roster,
    session: &StorySession,
    beat_index: usize,
    instruction: &str,
) -> Result<NarrativeSegment, ExpandError> {
    if instruction.trim().is_empty() {
        return Err(DomainError::invalid("instruction", "must not be empty").into());
    }
    let segment = session
        .segment(beat_index)
        .ok_or(ExpandError::UnknownSegment(beat_index))?;
    let persona = roster
        .get(&segment.persona_id)
        .ok_or_else(|| ExpandError::UnknownPersona(segment.persona_id.clone()))?;
    let bundle = refine_prompt(templates, gateway.profile(), persona, session, beat_index, instruction)
        .ok_or(ExpandError::UnknownSegment(beat_index))?;
    let draft = generate_prose(gateway, &bundle, session.sparkle.target_segment_words).await?;
    let mut revised = segment.clone();
    revised.revise(instruction.trim(), draft.prose);
    revised.out_of_range = draft.out_of_range;
    Ok(revised)
}

/// Replace segment `beat_index` with the writer's own text.
pub fn manual_edit(session: &StorySession, beat_index: usize, new_prose: &str) -> Result<NarrativeSegment, ExpandError> {
    if new_prose.trim().is_empty() {
        return Err(DomainError::invalid("prose", "must not be empty").into());
    }
    let segment = session
        .segment(beat_index)
        .ok_or(ExpandError::UnknownSegment(beat_index))?;
    let mut revised = segment.clone();
    revised.revise(MANUAL_EDIT, new_prose.to_owned());
    revised.out_of_range = !session.sparkle.target_segment_words.within_tolerance(revised.word_count);
    Ok(revised)
}

/// Replace a proposal's beat with the writer's edit and re-check it.
///
/// Only the global 3–5 event bound applies; the position band is advisory
/// once a human has edited the beat. The prior beat is kept as provenance
/// even when the edit changes nothing.
pub async fn edit_beat(
    gateway: &Gateway,
    templates: &PromptTemplates,
    index: &SegmentIndex,
    proposal: &BeatProposal,
    edited: StoryBeat,
) -> Result<BeatProposal, ExpandError> {
    let mut edited = edited;
    edited.index = proposal.beat.index;
    edited.validate()?;
    let mut revised = proposal.clone();
    revised.edits.push(EditRecord {
        prior_beat: std::mem::replace(&mut revised.beat, edited),
    });
    revised.verdict = crate::domain::Verdict::pending();
    revised.rank = None;
    revised.verdict = check_consistency(gateway, templates, index, &revised.beat).await;
    Ok(revised)
}

/// Ask the brainstorm partner. The session is only read.
pub async fn brainstorm(
    gateway: &Gateway,
    templates: &PromptTemplates,
    session: &StorySession,
    message: &str,
) -> Result<String, ExpandError> {
    if message.trim().is_empty() {
        return Err(DomainError::invalid("message", "must not be empty").into());
    }
    let bundle = brainstorm_prompt(templates, gateway.profile(), session, message);
    Ok(gateway.complete(&bundle).await?)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::domain::{ProposalRound, SessionEvent, SessionId, Sparkle};
    use crate::gateway::{BackendProfile, MockBackend, ScriptedBackend};

    fn expanding_session() -> StorySession {
        let sparkle = Sparkle::new("Two rivals share a rowboat.").unwrap();
        let mut s = StorySession::new(SessionId::new("e1").unwrap(), sparkle).unwrap();
        let beat = StoryBeat::new(0, "the lake", "dawn", vec!["Ada".into()], vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let round = ProposalRound {
            beat_index: 0,
            proposals: vec![BeatProposal::new("comedy".into(), beat, "why")],
            failures: vec![],
            selected: None,
        };
        s.apply(SessionEvent::SparkleSubmitted { round }).unwrap();
        s.apply(SessionEvent::BeatSelected { persona_id: "comedy".into() }).unwrap();
        s
    }

    fn scripted(counts: &[usize]) -> (Gateway, Arc<ScriptedBackend>) {
        let backend = Arc::new(ScriptedBackend::new(Arc::new(MockBackend::new(2))).with_prose_word_counts(counts.iter().copied()));
        (Gateway::new(backend.clone(), BackendProfile::mock(2)), backend)
    }

    #[tokio::test]
    async fn mock_expansion_is_the_midpoint() {
        let s = expanding_session();
        let seg = expand_beat(&Gateway::mock(1), &PromptTemplates::builtin(), &Roster::builtin(), &s).await.unwrap();
        assert_eq!(seg.word_count, 900);
        assert!(!seg.out_of_range);
        assert_eq!(seg.persona_id.as_str(), "comedy");
    }

    #[tokio::test]
    async fn short_draft_is_regenerated_once() {
        let (gw, backend) = scripted(&[500, 900]);
        let seg = expand_beat(&gw, &PromptTemplates::builtin(), &Roster::builtin(), &expanding_session()).await.unwrap();
        assert_eq!(seg.word_count, 900);
        assert!(!seg.out_of_range);
        assert_eq!(backend.remaining_prose_scripts(), 0);
    }

    #[tokio::test]
    async fn two_short_drafts_are_flagged() {
        let (gw, backend) = scripted(&[500, 500, 900]);
        let seg = expand_beat(&gw, &PromptTemplates::builtin(), &Roster::builtin(), &expanding_session()).await.unwrap();
        assert_eq!(seg.word_count, 500);
        assert!(seg.out_of_range);
        assert_eq!(backend.remaining_prose_scripts(), 1, "no third attempt");
    }

    #[tokio::test]
    async fn edit_rejects_two_events() {
        let s = expanding_session();
        let proposal = s.proposal_history[0].proposals[0].clone();
        let mut bad = proposal.beat.clone();
        bad.key_events.truncate(2);
        let err = edit_beat(&Gateway::mock(1), &PromptTemplates::builtin(), &s.index, &proposal, bad).await.unwrap_err();
        match err {
            ExpandError::Invalid(e) => assert_eq!(e.field(), Some("key_events")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[tokio::test]
    async fn noop_edit_only_adds_provenance() {
        let s = expanding_session();
        let proposal = s.proposal_history[0].proposals[0].clone();
        let edited = edit_beat(&Gateway::mock(1), &PromptTemplates::builtin(), &s.index, &proposal, proposal.beat.clone())
            .await
            .unwrap();
        assert_eq!(edited.beat, proposal.beat);
        assert_eq!(edited.edits.len(), 1);
        assert_eq!(edited.edits[0].prior_beat, proposal.beat);
    }
}
