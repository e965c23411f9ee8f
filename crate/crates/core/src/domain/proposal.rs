use serde::{Deserialize, Serialize};

use super::{PersonaId, Repair, StoryBeat};

/// Retrieval-grounded yes/no judgment on a proposed beat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyVerdict {
    pub has_error: bool,
    pub error_description: String,
    pub retrieved_segment_ids: Vec<usize>,
    pub similarity_scores: Vec<f64>,
    /// The verifier reply had no leading yes/no and was read as consistent.
    #[serde(default)]
    pub parse_warning: bool,
}

impl ConsistencyVerdict {
    /// Verdict for a beat checked against an empty history.
    pub fn vacuous() -> Self {
        Self {
            has_error: false,
            error_description: String::new(),
            retrieved_segment_ids: Vec::new(),
            similarity_scores: Vec::new(),
            parse_warning: false,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.retrieved_segment_ids.len() == self.similarity_scores.len()
            && self
                .similarity_scores
                .iter()
                .all(|s| (-1.0..=1.0).contains(s))
            && (self.has_error || self.error_description.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Verdict {
    /// Not yet checked, or the verifier could not be reached.
    Pending {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    Checked(ConsistencyVerdict),
}

impl Verdict {
    pub fn pending() -> Self {
        Verdict::Pending { reason: None }
    }

    pub fn is_pending(&self) -> bool {
        matches!(self, Verdict::Pending { .. })
    }

    pub fn has_error(&self) -> bool {
        matches!(self, Verdict::Checked(v) if v.has_error)
    }

    pub fn is_consistent(&self) -> bool {
        matches!(self, Verdict::Checked(v) if !v.has_error)
    }
}

/// Record of a human edit applied to a proposal before expansion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRecord {
    pub prior_beat: StoryBeat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatProposal {
    pub persona_id: PersonaId,
    pub beat: StoryBeat,
    pub rationale: String,
    pub verdict: Verdict,
    /// 1-based position after ranking; `None` until ranked.
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub repairs: Vec<Repair>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edits: Vec<EditRecord>,
}

impl BeatProposal {
    pub fn new(persona_id: PersonaId, beat: StoryBeat, rationale: impl Into<String>) -> Self {
        Self {
            persona_id,
            beat,
            rationale: rationale.into(),
            verdict: Verdict::pending(),
            rank: None,
            repairs: Vec::new(),
            edits: Vec::new(),
        }
    }
}

/// A persona leg that produced no proposal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaFailure {
    pub persona_id: PersonaId,
    pub class: String,
    pub message: String,
}

/// One blind-variation round: the proposals for a single beat position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRound {
    pub beat_index: usize,
    /// Proposals in rank order.
    pub proposals: Vec<BeatProposal>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<PersonaFailure>,
    pub selected: Option<PersonaId>,
}

impl ProposalRound {
    pub fn proposal(&self, persona_id: &PersonaId) -> Option<&BeatProposal> {
        self.proposals.iter().find(|p| &p.persona_id == persona_id)
    }

    pub fn proposal_mut(&mut self, persona_id: &PersonaId) -> Option<&mut BeatProposal> {
        self.proposals.iter_mut().find(|p| &p.persona_id == persona_id)
    }

    pub fn is_open(&self) -> bool {
        self.selected.is_none()
    }
}
