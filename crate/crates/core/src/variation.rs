//! Blind variation: every roster persona proposes the next beat on its own.

use futures::future::join_all;
use thiserror::Error;

use crate::domain::{
    parse_beat_with_range, BeatParseError, BeatProposal, Persona, PersonaFailure, PersonaId, Roster,
    StorySession,
};
use crate::gateway::{Gateway, GatewayError};
use crate::prompts::{assemble_prompt, expected_event_range, PromptError, PromptTemplates, Stage};

/// Shown when a model omits the `rationale` field.
pub const MISSING_RATIONALE: &str = "(the persona gave no rationale)";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LegError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("unusable beat: {0}")]
    Parse(#[from] BeatParseError),
}

impl LegError {
    pub fn class(&self) -> &'static str {
        match self {
            LegError::Gateway(e) => e.class(),
            LegError::Parse(_) => "invalid_beat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VariationError {
    #[error(transparent)]
    Stage(#[from] PromptError),
    #[error("persona `{0}` is not in the roster")]
    UnknownPersona(PersonaId),
    #[error("all {} personas failed", .0.len())]
    AllPersonasFailed(Vec<PersonaFailure>),
    #[error("persona `{persona_id}` failed: {error}")]
    Leg { persona_id: PersonaId, error: LegError },
}

/// Successful proposals (roster order, verdicts pending) and itemized failures.
#[derive(Debug, Clone, PartialEq)]
pub struct Variations {
    pub proposals: Vec<BeatProposal>,
    pub failures: Vec<PersonaFailure>,
}

/// One persona's leg: prompt, call, parse against the position band.
pub async fn propose(
    gateway: &Gateway,
    templates: &PromptTemplates,
    persona: &Persona,
    session: &StorySession,
    stage: Stage,
) -> Result<Result<BeatProposal, LegError>, PromptError> {
    let bundle = assemble_prompt(templates, gateway.profile(), persona, session, stage)?;
    let index = session.beats.len();
    let range = expected_event_range(index, usize::from(session.sparkle.target_beat_count));
    let leg = async {
        let reply = gateway.complete(&bundle).await?;
        let parsed = parse_beat_with_range(&reply, range.min, range.max)?;
        let mut beat = parsed.beat;
        beat.index = index;
        let rationale = parsed
            .rationale
            .filter(|r| !r.trim().is_empty())
            .unwrap_or_else(|| MISSING_RATIONALE.to_owned());
        let mut proposal = BeatProposal::new(persona.id.clone(), beat, rationale);
        proposal.repairs = parsed.repairs;
        Ok(proposal)
    };
    Ok(leg.await)
}

/// Fan out to every persona concurrently and wait for all legs.
///
/// Each leg sees only the persona and the session, so reordering the roster
/// never changes any single proposal. At least one success is required.
pub async fn generate_proposals(
    gateway: &Gateway,
    templates: &PromptTemplates,
    roster: &Roster,
    session: &StorySession,
    stage: Stage,
) -> Result<Variations, VariationError> {
    let legs = roster
        .personas()
        .iter()
        .map(|persona| propose(gateway, templates, persona, session, stage));
    let results = join_all(legs).await;
    let mut proposals = Vec::new();
    let mut failures = Vec::new();
    for (persona, result) in roster.personas().iter().zip(results) {
        match result? {
            Ok(p) => proposals.push(p),
            Err(e) => {
                tracing::warn!(persona = %persona.id, error = %e, "persona leg failed");
                failures.push(PersonaFailure {
                    persona_id: persona.id.clone(),
                    class: e.class().to_owned(),
                    message: e.to_string(),
                })
            }
        }
    }
    if proposals.is_empty() {
        return Err(VariationError::AllPersonasFailed(failures));
    }
    Ok(Variations { proposals, failures })
}

/// Re-run a single persona's leg, e.g. after it failed in the round.
pub async fn regenerate_for_persona(
    gateway: &Gateway,
    templates: &PromptTemplates,
    roster: &Roster,
    session: &StorySession,
    persona_id: &PersonaId,
    stage: Stage,
) -> Result<BeatProposal, VariationError> {
    let persona = roster
        .get(persona_id)
        .ok_or_else(|| VariationError::UnknownPersona(persona_id.clone()))?;
    propose(gateway, templates, persona, session, stage)
        .await?
        .map_err(|error| VariationError::Leg {
            persona_id: persona_id.clone(),
            error,
        })
}
