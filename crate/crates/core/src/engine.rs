//! The co-writing workflow: every user action as one call on a session.
//!
//! Each method computes first and applies events last, so a failed call
//! leaves the session as it was. `pick` chains several steps and may stop
//! part way; every step it finished stays applied.

use thiserror::Error;

use crate::domain::{
    ChatRole, ChatTurn, DomainError, NarrativeSegment, PersonaFailure, PersonaId, ProposalRound,
    Roster, SessionEvent, SessionId, SessionStatus, Sparkle, StoryBeat, StorySession,
    TransitionError,
};
use crate::error::ErrorClass;
use crate::expand::{self, ExpandError};
use crate::gateway::{Gateway, GatewayError};
use crate::plot::{check_and_rank, check_consistency, embed_segment, rank_proposals, IndexSegmentError, PlotError};
use crate::prompts::{PromptError, PromptTemplates, Stage};
use crate::variation::{generate_proposals, regenerate_for_persona, LegError, VariationError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Invalid(#[from] DomainError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Stage(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Index(PlotError),
    #[error("all {} personas failed", .0.len())]
    AllPersonasFailed(Vec<PersonaFailure>),
    #[error("persona `{persona_id}` failed: {error}")]
    PersonaFailed { persona_id: PersonaId, error: LegError },
    #[error("persona `{0}` is not in the roster")]
    UnknownPersona(PersonaId),
    #[error("persona `{0}` has no proposal in the current round")]
    NotInRound(PersonaId),
    #[error("segment {0} does not exist")]
    UnknownSegment(usize),
    #[error("no round is open for selection")]
    NoOpenRound,
}

impl EngineError {
    pub fn class(&self) -> ErrorClass {
        match self {
            EngineError::Invalid(_) => ErrorClass::Invalid,
            EngineError::Transition(_) | EngineError::NoOpenRound | EngineError::NotInRound(_) => ErrorClass::Conflict,
            EngineError::Stage(PromptError::IllegalStage { .. }) => ErrorClass::Conflict,
            EngineError::Stage(_) | EngineError::Index(_) => ErrorClass::Internal,
            EngineError::Gateway(e) => gateway_class(e),
            EngineError::PersonaFailed {
                error: LegError::Gateway(e),
                ..
            } => gateway_class(e),
            EngineError::PersonaFailed { .. } | EngineError::AllPersonasFailed(_) => ErrorClass::Backend,
            EngineError::UnknownPersona(_) | EngineError::UnknownSegment(_) => ErrorClass::NotFound,
        }
    }

    /// Per-persona failures, when the error carries them.
    pub fn failures(&self) -> &[PersonaFailure] {
        match self {
            EngineError::AllPersonasFailed(f) => f,
            _ => &[],
        }
    }
}

fn gateway_class(e: &GatewayError) -> ErrorClass {
    match e {
        GatewayError::RateLimited { .. } => ErrorClass::RateLimited,
        GatewayError::EmptyInput => ErrorClass::Invalid,
        GatewayError::Config(_) => ErrorClass::Internal,
        _ => ErrorClass::Backend,
    }
}

impl From<VariationError> for EngineError {
    fn from(e: VariationError) -> Self {
        match e {
            VariationError::Stage(e) => e.into(),
            VariationError::UnknownPersona(p) => EngineError::UnknownPersona(p),
            VariationError::AllPersonasFailed(f) => EngineError::AllPersonasFailed(f),
            VariationError::Leg { persona_id, error } => EngineError::PersonaFailed { persona_id, error },
        }
    }
}

impl From<ExpandError> for EngineError {
    fn from(e: ExpandError) -> Self {
        match e {
            ExpandError::Gateway(e) => e.into(),
            ExpandError::Stage(e) => e.into(),
            ExpandError::Invalid(e) => e.into(),
            ExpandError::UnknownSegment(n) => EngineError::UnknownSegment(n),
            ExpandError::UnknownPersona(p) => EngineError::UnknownPersona(p),
            ExpandError::NotInRound(p) => EngineError::NotInRound(p),
            ExpandError::NoOpenRound => EngineError::NoOpenRound,
        }
    }
}

impl From<IndexSegmentError> for EngineError {
    fn from(e: IndexSegmentError) -> Self {
        match e {
            IndexSegmentError::Gateway(e) => e.into(),
            IndexSegmentError::Index(PlotError::EmptyText) => DomainError::invalid("prose", "must not be empty").into(),
            IndexSegmentError::Index(e) => EngineError::Index(e),
        }
    }
}

/// Gateway, templates and roster: everything a session step needs besides
/// the session itself. Cheap to clone.
#[derive(Debug, Clone)]
pub struct StoryEngine {
    pub gateway: Gateway,
    pub templates: PromptTemplates,
    pub roster: Roster,
}

impl StoryEngine {
    pub fn new(gateway: Gateway, templates: PromptTemplates, roster: Roster) -> Self {
        Self {
            gateway,
            templates,
            roster,
        }
    }

    /// Offline engine with the built-in prompts and roster.
    pub fn mock(seed: u64) -> Self {
        Self::new(Gateway::mock(seed), PromptTemplates::builtin(), Roster::builtin())
    }

    async fn round(&self, session: &StorySession) -> Result<ProposalRound, EngineError> {
        let stage = Stage::for_next_beat(session);
        let variations = generate_proposals(&self.gateway, &self.templates, &self.roster, session, stage).await?;
        let proposals = check_and_rank(&self.gateway, &self.templates, &session.index, variations.proposals).await;
        Ok(ProposalRound {
            beat_index: session.beats.len(),
            proposals,
            failures: variations.failures,
            selected: None,
        })
    }

    /// Start a session from a sparkle and run the first round.
    pub async fn create_session(&self, id: Option<SessionId>, sparkle: Sparkle) -> Result<StorySession, EngineError> {
        let mut session = StorySession::new(id.unwrap_or_else(SessionId::random), sparkle)?;
        let round = self.round(&session).await?;
        session.apply(SessionEvent::SparkleSubmitted { round })?;
        Ok(session)
    }

    /// Run a round for the next beat. Replaces an open round if there is one.
    pub async fn next_round(&self, session: &mut StorySession) -> Result<(), EngineError> {
        if session.status != SessionStatus::AwaitingSelection || session.beats.len() >= usize::from(session.sparkle.target_beat_count) {
            return Err(TransitionError::Illegal {
                status: session.status,
                event: crate::domain::EventKind::RoundGenerated,
            }
            .into());
        }
        let round = self.round(session).await?;
        session.apply(SessionEvent::RoundGenerated { round })?;
        Ok(())
    }

    fn open_round(session: &StorySession) -> Result<&ProposalRound, EngineError> {
        if session.status != SessionStatus::AwaitingSelection {
            return Err(EngineError::NoOpenRound);
        }
        session.current_round().ok_or(EngineError::NoOpenRound)
    }

    /// Re-run one persona in the open round, replacing its proposal or failure.
    pub async fn retry_persona(&self, session: &mut StorySession, persona_id: &PersonaId) -> Result<(), EngineError> {
        let mut round = Self::open_round(session)?.clone();
        let stage = Stage::for_next_beat(session);
        let mut proposal = regenerate_for_persona(&self.gateway, &self.templates, &self.roster, session, persona_id, stage).await?;
        proposal.verdict = check_consistency(&self.gateway, &self.templates, &session.index, &proposal.beat).await;
        round.failures.retain(|f| &f.persona_id != persona_id);
        round.proposals.retain(|p| &p.persona_id != persona_id);
        round.proposals.push(proposal);
        round.proposals = rank_proposals(self.roster_order(round.proposals));
        session.apply(SessionEvent::RoundRevised { round })?;
        Ok(())
    }

    fn roster_order(&self, mut proposals: Vec<crate::domain::BeatProposal>) -> Vec<crate::domain::BeatProposal> {
        let ids: Vec<&PersonaId> = self.roster.ids().collect();
        proposals.sort_by_key(|p| ids.iter().position(|id| *id == &p.persona_id).unwrap_or(usize::MAX));
        proposals
    }

    /// Replace a proposal's beat in the open round and re-rank.
    pub async fn edit_beat(&self, session: &mut StorySession, persona_id: &PersonaId, beat: StoryBeat) -> Result<(), EngineError> {
        let mut round = Self::open_round(session)?.clone();
        let current = round
            .proposal(persona_id)
            .ok_or_else(|| EngineError::NotInRound(persona_id.clone()))?;
        let edited = expand::edit_beat(&self.gateway, &self.templates, &session.index, current, beat).await?;
        *round.proposal_mut(persona_id).expect("checked above") = edited;
        round.proposals = rank_proposals(self.roster_order(round.proposals));
        session.apply(SessionEvent::RoundRevised { round })?;
        Ok(())
    }

    pub fn select(&self, session: &mut StorySession, persona_id: &PersonaId) -> Result<(), EngineError> {
        let round = Self::open_round(session)?;
        if round.proposal(persona_id).is_none() {
            return Err(EngineError::NotInRound(persona_id.clone()));
        }
        session.apply(SessionEvent::BeatSelected {
            persona_id: persona_id.clone(),
        })?;
        Ok(())
    }

    /// Expand the selected beat, index the prose and accept it.
    pub async fn expand<'s>(&self, session: &'s mut StorySession) -> Result<&'s NarrativeSegment, EngineError> {
        let segment = expand::expand_beat(&self.gateway, &self.templates, &self.roster, session).await?;
        let embedding = embed_segment(&self.gateway, &segment).await?;
        let n = segment.beat_index;
        session.apply(SessionEvent::SegmentAccepted { segment, embedding })?;
        Ok(session.segment(n).expect("just accepted"))
    }

    pub async fn refine<'s>(&self, session: &'s mut StorySession, beat_index: usize, instruction: &str) -> Result<&'s NarrativeSegment, EngineError> {
        let segment = expand::refine(&self.gateway, &self.templates, &self.roster, session, beat_index, instruction).await?;
        self.revise(session, segment).await
    }

    pub async fn manual_edit<'s>(&self, session: &'s mut StorySession, beat_index: usize, prose: &str) -> Result<&'s NarrativeSegment, EngineError> {
        let segment = expand::manual_edit(session, beat_index, prose)?;
        self.revise(session, segment).await
    }

    async fn revise<'s>(&self, session: &'s mut StorySession, segment: NarrativeSegment) -> Result<&'s NarrativeSegment, EngineError> {
        let embedding = embed_segment(&self.gateway, &segment).await?;
        let n = segment.beat_index;
        session.apply(SessionEvent::SegmentRevised { segment, embedding })?;
        Ok(session.segment(n).expect("just revised"))
    }

    /// Brainstorm reply. The exchange is logged on the session, outside the draft.
    pub async fn brainstorm(&self, session: &mut StorySession, message: &str) -> Result<String, EngineError> {
        let reply = expand::brainstorm(&self.gateway, &self.templates, session, message).await?;
        session.brainstorm.push(ChatTurn {
            role: ChatRole::User,
            content: message.trim().to_owned(),
        });
        session.brainstorm.push(ChatTurn {
            role: ChatRole::Assistant,
            content: reply.clone(),
        });
        Ok(reply)
    }

    pub fn finish(&self, session: &mut StorySession) -> Result<(), EngineError> {
        session.apply(SessionEvent::FinishEarly)?;
        Ok(())
    }

    /// Optional edit, then select, expand and open the next round.
    pub async fn pick(&self, session: &mut StorySession, persona_id: &PersonaId, edit: Option<StoryBeat>) -> Result<(), EngineError> {
        if let Some(beat) = edit {
            self.edit_beat(session, persona_id, beat).await?;
        }
        self.select(session, persona_id)?;
        self.expand(session).await?;
        if session.status == SessionStatus::AwaitingSelection {
            self.next_round(session).await?;
        }
        Ok(())
    }
}
