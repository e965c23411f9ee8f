//! Session state and the workflow state machine.
//!
//! ```text
//! Ideation --SparkleSubmitted--> AwaitingSelection --BeatSelected--> Expanding
//!                                    ^    |  (RoundGenerated, RoundRevised,       |
//!                                    |    |   SegmentRevised: self-loops)         |
//!                                    |    +--FinishEarly--> Complete              |
//!                                    +------------SegmentAccepted-----------------+
//!                                              (last beat: --> Complete)
//! ```
//!
//! Every mutation of a [`StorySession`] goes through [`StorySession::apply`],
//! which checks the event against the table in [`transition`] before touching
//! any field.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    DomainError, EmbeddingVector, NarrativeSegment, PersonaId, ProposalRound, Sparkle, StoryBeat,
};
use crate::plot::SegmentIndex;
use crate::text::fnv1a64;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SessionId(String);

impl SessionId {
    pub fn new(id: impl Into<String>) -> Result<Self, DomainError> {
        let id = id.into();
        let ok = !id.is_empty()
            && id.len() <= 64
            && id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if ok {
            Ok(Self(id))
        } else {
            Err(DomainError::invalid(
                "session_id",
                format!("`{id}` must be 1-64 characters of [A-Za-z0-9_-]"),
            ))
        }
    }

    pub fn random() -> Self {
        Self(uuid::Uuid::new_v4().simple().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for SessionId {
    type Error = DomainError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<SessionId> for String {
    fn from(id: SessionId) -> Self {
        id.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Ideation,
    AwaitingSelection,
    Expanding,
    Complete,
}

impl fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SessionStatus::Ideation => "ideation",
            SessionStatus::AwaitingSelection => "awaiting_selection",
            SessionStatus::Expanding => "expanding",
            SessionStatus::Complete => "complete",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    SparkleSubmitted,
    RoundGenerated,
    RoundRevised,
    BeatSelected,
    SegmentAccepted,
    SegmentRevised,
    FinishEarly,
}

impl EventKind {
    pub const ALL: [EventKind; 7] = [
        EventKind::SparkleSubmitted,
        EventKind::RoundGenerated,
        EventKind::RoundRevised,
        EventKind::BeatSelected,
        EventKind::SegmentAccepted,
        EventKind::SegmentRevised,
        EventKind::FinishEarly,
    ];
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone)]
pub enum SessionEvent {
    /// The first round of proposals for a fresh session.
    SparkleSubmitted { round: ProposalRound },
    /// A new round for the next beat position (or a re-roll of the open one).
    RoundGenerated { round: ProposalRound },
    /// The open round after an edit or a single-persona retry.
    RoundRevised { round: ProposalRound },
    BeatSelected { persona_id: PersonaId },
    SegmentAccepted {
        segment: NarrativeSegment,
        embedding: EmbeddingVector,
    },
    /// A refined or manually edited segment, with the embedding of its new prose.
    SegmentRevised {
        segment: NarrativeSegment,
        embedding: EmbeddingVector,
    },
    FinishEarly,
}

impl SessionEvent {
    pub fn kind(&self) -> EventKind {
        match self {
            SessionEvent::SparkleSubmitted { .. } => EventKind::SparkleSubmitted,
            SessionEvent::RoundGenerated { .. } => EventKind::RoundGenerated,
            SessionEvent::RoundRevised { .. } => EventKind::RoundRevised,
            SessionEvent::BeatSelected { .. } => EventKind::BeatSelected,
            SessionEvent::SegmentAccepted { .. } => EventKind::SegmentAccepted,
            SessionEvent::SegmentRevised { .. } => EventKind::SegmentRevised,
            SessionEvent::FinishEarly => EventKind::FinishEarly,
        }
    }
}

/// Counters the transition table needs beyond the current status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    pub beats: usize,
    pub segments: usize,
    pub target: usize,
}

/// The declared transition table. `None` means the event is illegal.
pub fn transition(status: SessionStatus, event: EventKind, progress: Progress) -> Option<SessionStatus> {
    use EventKind::*;
    use SessionStatus::*;
    match (status, event) {
        (Ideation, SparkleSubmitted) => Some(AwaitingSelection),
        (AwaitingSelection, RoundGenerated) if progress.beats < progress.target => {
            Some(AwaitingSelection)
        }
        (AwaitingSelection, RoundRevised) => Some(AwaitingSelection),
        (AwaitingSelection, BeatSelected) if progress.beats < progress.target => Some(Expanding),
        (Expanding, SegmentAccepted) => {
            if progress.segments + 1 >= progress.target {
                Some(Complete)
            } else {
                Some(AwaitingSelection)
            }
        }
        (AwaitingSelection | Complete, SegmentRevised) if progress.segments > 0 => Some(status),
        (AwaitingSelection, FinishEarly) if progress.segments > 0 => Some(Complete),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransitionError {
    #[error("{event} is not allowed while the session is {status}")]
    Illegal { status: SessionStatus, event: EventKind },
    #[error("{event} rejected: {reason}")]
    Rejected { event: EventKind, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChatRole {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: ChatRole,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorySession {
    pub session_id: SessionId,
    pub sparkle: Sparkle,
    pub status: SessionStatus,
    pub beats: Vec<StoryBeat>,
    pub segments: Vec<NarrativeSegment>,
    pub selection_log: Vec<PersonaId>,
    pub proposal_history: Vec<ProposalRound>,
    pub index: SegmentIndex,
    /// Brainstorm exchanges. Kept apart from the draft.
    #[serde(default)]
    pub brainstorm: Vec<ChatTurn>,
}

impl StorySession {
    pub fn new(session_id: SessionId, sparkle: Sparkle) -> Result<Self, DomainError> {
        sparkle.validate()?;
        Ok(Self {
            session_id,
            sparkle,
            status: SessionStatus::Ideation,
            beats: Vec::new(),
            segments: Vec::new(),
            selection_log: Vec::new(),
            proposal_history: Vec::new(),
            index: SegmentIndex::default(),
            brainstorm: Vec::new(),
        })
    }

    pub fn progress(&self) -> Progress {
        Progress {
            beats: self.beats.len(),
            segments: self.segments.len(),
            target: usize::from(self.sparkle.target_beat_count),
        }
    }

    /// The round awaiting a selection for the next beat position, if any.
    pub fn current_round(&self) -> Option<&ProposalRound> {
        self.proposal_history
            .last()
            .filter(|r| r.is_open() && r.beat_index == self.beats.len())
    }

    /// The round whose selection is waiting to be expanded.
    pub fn selected_round(&self) -> Option<&ProposalRound> {
        if self.status != SessionStatus::Expanding {
            return None;
        }
        self.proposal_history
            .iter()
            .rev()
            .find(|r| r.selected.is_some() && r.beat_index + 1 == self.beats.len())
    }

    pub fn segment(&self, beat_index: usize) -> Option<&NarrativeSegment> {
        self.segments.iter().find(|s| s.beat_index == beat_index)
    }

    /// The story prose, segments joined by blank lines.
    pub fn story_text(&self) -> String {
        self.segments
            .iter()
            .map(|s| s.prose.trim_end())
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// Stable hash of the draft (beats, segments, selections).
    pub fn draft_fingerprint(&self) -> u64 {
        let draft = (&self.beats, &self.segments, &self.selection_log);
        fnv1a64(&serde_json::to_vec(&draft).expect("draft serializes"))
    }

    /// Apply one workflow event. On error the session is left untouched.
    pub fn apply(&mut self, event: SessionEvent) -> Result<SessionStatus, TransitionError> {
        let kind = event.kind();
        let next = transition(self.status, kind, self.progress()).ok_or(TransitionError::Illegal {
            status: self.status,
            event: kind,
        })?;
        let reject = |reason: String| TransitionError::Rejected { event: kind, reason };

        match event {
            SessionEvent::SparkleSubmitted { round } | SessionEvent::RoundGenerated { round } => {
                if round.beat_index != self.beats.len() {
                    return Err(reject(format!(
                        "round targets beat {} but the next beat is {}",
                        round.beat_index,
                        self.beats.len()
                    )));
                }
                if round.proposals.is_empty() {
                    return Err(reject("round has no proposals".into()));
                }
                // A re-roll leaves the superseded open round in history, unselected.
                self.proposal_history.push(round);
            }
            SessionEvent::RoundRevised { round } => {
                let Some(open) = self.current_round() else {
                    return Err(reject("no open round to revise".into()));
                };
                if open.beat_index != round.beat_index || round.proposals.is_empty() {
                    return Err(reject("revised round does not match the open round".into()));
                }
                *self.proposal_history.last_mut().expect("open round exists") = round;
            }
            SessionEvent::BeatSelected { persona_id } => {
                let next_index = self.beats.len();
                let Some(round) = self.current_round() else {
                    return Err(reject("no open round".into()));
                };
                let Some(proposal) = round.proposal(&persona_id) else {
                    return Err(reject(format!("persona `{persona_id}` has no proposal in the current round")));
                };
                let mut beat = proposal.beat.clone();
                beat.index = next_index;
                let round = self.proposal_history.last_mut().expect("open round exists");
                round.selected = Some(persona_id.clone());
                self.beats.push(beat);
                self.selection_log.push(persona_id);
            }
            SessionEvent::SegmentAccepted { segment, embedding } => {
                let expected = self.segments.len();
                if segment.beat_index != expected || self.beats.len() != expected + 1 {
                    return Err(reject(format!(
                        "segment for beat {} does not follow the selected beat {}",
                        segment.beat_index, expected
                    )));
                }
                if segment.prose.trim().is_empty() {
                    return Err(reject("segment prose is empty".into()));
                }
                self.index
                    .insert(segment.beat_index, embedding, segment.prose.clone())
                    .map_err(|e| reject(e.to_string()))?;
                self.segments.push(segment);
            }
            SessionEvent::SegmentRevised { segment, embedding } => {
                let Some(pos) = self.segments.iter().position(|s| s.beat_index == segment.beat_index) else {
                    return Err(reject(format!("no segment {}", segment.beat_index)));
                };
                if segment.prose.trim().is_empty() {
                    return Err(reject("segment prose is empty".into()));
                }
                self.index
                    .supersede(segment.beat_index, embedding, segment.prose.clone())
                    .map_err(|e| reject(e.to_string()))?;
                self.segments[pos] = segment;
            }
            SessionEvent::FinishEarly => {
                if self.segments.len() != self.beats.len() {
                    return Err(reject("the selected beat has not been expanded".into()));
                }
            }
        }
        self.status = next;
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BeatProposal, EMBEDDING_DIM};
    use proptest::prelude::*;

    fn beat(i: usize) -> StoryBeat {
        StoryBeat::new(
            i,
            "the harbor",
            "dawn",
            vec!["Ivo".into()],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap()
    }

    fn round(index: usize, personas: &[&str]) -> ProposalRound {
        ProposalRound {
            beat_index: index,
            proposals: personas
                .iter()
                .map(|p| BeatProposal::new((*p).into(), beat(index), "why"))
                .collect(),
            failures: vec![],
            selected: None,
        }
    }

    fn unit(i: usize) -> EmbeddingVector {
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[i % EMBEDDING_DIM] = 1.0;
        EmbeddingVector::new(v).unwrap()
    }

    fn session(beats: u8) -> StorySession {
        let sparkle = Sparkle::new("A keeper and a letter.").unwrap().with_beats(beats).unwrap();
        StorySession::new(SessionId::new("t1").unwrap(), sparkle).unwrap()
    }

    fn accept(s: &mut StorySession) -> SessionStatus {
        let i = s.segments.len();
        s.apply(SessionEvent::SegmentAccepted {
            segment: NarrativeSegment::new(i, "mystery".into(), format!("prose {i}")),
            embedding: unit(i),
        })
        .unwrap()
    }

    #[test]
    fn ideation_to_awaiting() {
        let mut s = session(6);
        let st = s.apply(SessionEvent::SparkleSubmitted { round: round(0, &["mystery"]) }).unwrap();
        assert_eq!(st, SessionStatus::AwaitingSelection);
    }

    #[test]
    fn selection_moves_to_expanding() {
        let mut s = session(6);
        s.apply(SessionEvent::SparkleSubmitted { round: round(0, &["mystery", "horror"]) }).unwrap();
        let st = s.apply(SessionEvent::BeatSelected { persona_id: "horror".into() }).unwrap();
        assert_eq!(st, SessionStatus::Expanding);
        assert_eq!(s.selection_log, vec![PersonaId::from("horror")]);
        assert_eq!(s.beats.len(), 1);
    }

    #[test]
    fn full_six_beat_walk_completes() {
        let mut s = session(6);
        s.apply(SessionEvent::SparkleSubmitted { round: round(0, &["mystery"]) }).unwrap();
        for i in 0..6 {
            if i > 0 {
                s.apply(SessionEvent::RoundGenerated { round: round(i, &["mystery"]) }).unwrap();
            }
            s.apply(SessionEvent::BeatSelected { persona_id: "mystery".into() }).unwrap();
            let st = accept(&mut s);
            let want = if i == 5 { SessionStatus::Complete } else { SessionStatus::AwaitingSelection };
            assert_eq!(st, want);
        }
        assert_eq!(s.beats.len(), 6);
        assert_eq!(s.segments.len(), 6);
        assert_eq!(s.index.live_len(), 6);
        assert!(matches!(
            s.apply(SessionEvent::RoundGenerated { round: round(6, &["mystery"]) }),
            Err(TransitionError::Illegal { .. })
        ));
    }

    #[test]
    fn selecting_absent_persona_is_rejected_without_mutation() {
        let mut s = session(6);
        s.apply(SessionEvent::SparkleSubmitted { round: round(0, &["mystery"]) }).unwrap();
        let before = s.clone();
        let err = s.apply(SessionEvent::BeatSelected { persona_id: "comedy".into() }).unwrap_err();
        assert!(matches!(err, TransitionError::Rejected { .. }));
        assert_eq!(s, before);
    }

    #[test]
    fn finish_early_requires_an_expanded_segment() {
        let mut s = session(6);
        s.apply(SessionEvent::SparkleSubmitted { round: round(0, &["mystery"]) }).unwrap();
        assert!(s.apply(SessionEvent::FinishEarly).is_err());
        s.apply(SessionEvent::BeatSelected { persona_id: "mystery".into() }).unwrap();
        assert!(s.apply(SessionEvent::FinishEarly).is_err());
        accept(&mut s);
        assert_eq!(s.apply(SessionEvent::FinishEarly).unwrap(), SessionStatus::Complete);
    }

    #[test]
    fn revising_a_segment_supersedes_its_index_entry() {
        let mut s = session(2);
        s.apply(SessionEvent::SparkleSubmitted { round: round(0, &["mystery"]) }).unwrap();
        s.apply(SessionEvent::BeatSelected { persona_id: "mystery".into() }).unwrap();
        accept(&mut s);
        let mut seg = s.segments[0].clone();
        seg.revise("manual", "new prose".into());
        s.apply(SessionEvent::SegmentRevised { segment: seg, embedding: unit(9) }).unwrap();
        assert_eq!(s.index.entries().len(), 2);
        assert_eq!(s.index.live_len(), 1);
        assert_eq!(s.segments[0].prose, "new prose");
    }

    #[test]
    fn session_json_round_trips() {
        let mut s = session(3);
        s.apply(SessionEvent::SparkleSubmitted { round: round(0, &["mystery"]) }).unwrap();
        s.apply(SessionEvent::BeatSelected { persona_id: "mystery".into() }).unwrap();
        accept(&mut s);
        let json = serde_json::to_string(&s).unwrap();
        let back: StorySession = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }

    #[test]
    fn session_id_charset() {
        assert!(SessionId::new("abc-DEF_123").is_ok());
        assert!(SessionId::new("../etc").is_err());
        assert!(SessionId::new("").is_err());
    }

    #[derive(Debug, Clone)]
    enum Op {
        Submit,
        Generate,
        Revise,
        Select(bool),
        Accept,
        ReviseSegment,
        Finish,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            Just(Op::Submit),
            Just(Op::Generate),
            Just(Op::Revise),
            any::<bool>().prop_map(Op::Select),
            Just(Op::Accept),
            Just(Op::ReviseSegment),
            Just(Op::Finish),
        ]
    }

    fn allowed(from: SessionStatus, to: SessionStatus) -> bool {
        use SessionStatus::*;
        matches!(
            (from, to),
            (Ideation, AwaitingSelection)
                | (AwaitingSelection, AwaitingSelection)
                | (AwaitingSelection, Expanding)
                | (AwaitingSelection, Complete)
                | (Expanding, AwaitingSelection)
                | (Expanding, Complete)
                | (Complete, Complete)
        )
    }

    proptest! {
        #[test]
        fn random_event_sequences_stay_on_the_diagram(
            beats in 1u8..=4,
            ops in prop::collection::vec(op(), 0..60),
        ) {
            let mut s = session(beats);
            for op in ops {
                let before = s.clone();
                let next = s.beats.len();
                let event = match op {
                    Op::Submit => SessionEvent::SparkleSubmitted { round: round(next, &["mystery", "horror"]) },
                    Op::Generate => SessionEvent::RoundGenerated { round: round(next, &["mystery", "horror"]) },
                    Op::Revise => SessionEvent::RoundRevised { round: round(next, &["horror"]) },
                    Op::Select(first) => SessionEvent::BeatSelected {
                        persona_id: if first { "mystery".into() } else { "horror".into() },
                    },
                    Op::Accept => SessionEvent::SegmentAccepted {
                        segment: NarrativeSegment::new(s.segments.len(), "mystery".into(), "prose".into()),
                        embedding: unit(s.segments.len()),
                    },
                    Op::ReviseSegment => SessionEvent::SegmentRevised {
                        segment: NarrativeSegment::new(0, "mystery".into(), "revised".into()),
                        embedding: unit(99),
                    },
                    Op::Finish => SessionEvent::FinishEarly,
                };
                let kind = event.kind();
                let declared = transition(before.status, kind, before.progress());
                match s.apply(event) {
                    Ok(status) => {
                        prop_assert_eq!(Some(status), declared);
                        prop_assert!(allowed(before.status, status));
                    }
                    Err(_) => prop_assert_eq!(&s, &before),
                }
                prop_assert_eq!(s.selection_log.len(), s.beats.len());
                prop_assert!(s.segments.len() <= s.beats.len());
                prop_assert!(s.beats.len() <= usize::from(beats));
            }
        }
    }
}
