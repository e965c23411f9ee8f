//! Domain types shared by every other module.

mod beat;
mod embedding;
mod persona;
mod proposal;
mod segment;
mod session;
mod sparkle;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use beat::{
    parse_beat, parse_beat_with_range, serialize_beat, BeatParseError, ParsedBeat, Repair,
    Setting, StoryBeat, MAX_EVENTS, MIN_EVENTS,
};
pub use embedding::{EmbeddingVector, EMBEDDING_DIM};
pub use persona::{
    Persona, PersonaId, PersonaParameter, Roster, DIALOGUE_RATIO_TARGET, LEXICAL_DIVERSITY_TARGET,
};
pub use proposal::{
    BeatProposal, ConsistencyVerdict, EditRecord, PersonaFailure, ProposalRound, Verdict,
};
pub use segment::{NarrativeSegment, Revision, MANUAL_EDIT};
pub use session::{
    transition, ChatRole, ChatTurn, EventKind, Progress, SessionEvent, SessionId, SessionStatus,
    StorySession, TransitionError,
};
pub use sparkle::{Sparkle, WordRange, DEFAULT_BEAT_COUNT, DEFAULT_SEGMENT_WORDS, MAX_BEAT_COUNT};

/// One failed invariant, addressed by a JSON-style field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldViolation {
    pub field: String,
    pub message: String,
}

impl FieldViolation {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("{0}")]
    Invalid(FieldViolation),
    #[error("invalid beat: {}", join(.0))]
    InvalidBeat(Vec<FieldViolation>),
    #[error("embedding has dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

fn join(violations: &[FieldViolation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl DomainError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        DomainError::Invalid(FieldViolation::new(field, message))
    }

    /// The first offending field path, when there is one.
    pub fn field(&self) -> Option<&str> {
        match self {
            DomainError::Invalid(v) => Some(&v.field),
            DomainError::InvalidBeat(vs) => vs.first().map(|v| v.field.as_str()),
            DomainError::DimensionMismatch { .. } => None,
        }
    }

    pub fn violations(&self) -> Vec<FieldViolation> {
        match self {
            DomainError::Invalid(v) => vec![v.clone()],
            DomainError::InvalidBeat(vs) => vs.clone(),
            DomainError::DimensionMismatch { .. } => vec![FieldViolation::new("embedding", self.to_string())],
        }
    }
}
