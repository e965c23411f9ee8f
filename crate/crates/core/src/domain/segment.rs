use serde::{Deserialize, Serialize};

use super::PersonaId;
use crate::text;

pub const MANUAL_EDIT: &str = "manual";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revision {
    /// The refine instruction, or `"manual"` for a direct edit.
    pub instruction: String,
    pub prior_prose: String,
}

/// Prose expansion of one selected beat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeSegment {
    pub beat_index: usize,
    pub persona_id: PersonaId,
    pub prose: String,
    pub word_count: usize,
    #[serde(default)]
    pub revisions: Vec<Revision>,
    /// Word count fell outside the tolerated range after the retry.
    #[serde(default)]
    pub out_of_range: bool,
}

impl NarrativeSegment {
    pub fn new(beat_index: usize, persona_id: PersonaId, prose: String) -> Self {
        let word_count = text::word_count(&prose);
        Self {
            beat_index,
            persona_id,
            prose,
            word_count,
            revisions: Vec::new(),
            out_of_range: false,
        }
    }

    /// Replace the prose, recording the old text under `instruction`.
    pub fn revise(&mut self, instruction: impl Into<String>, prose: String) {
        let prior_prose = std::mem::replace(&mut self.prose, prose);
        self.revisions.push(Revision {
            instruction: instruction.into(),
            prior_prose,
        });
        self.word_count = text::word_count(&self.prose);
    }

    /// The prose as first expanded, reconstructed from the revision chain.
    pub fn original_prose(&self) -> &str {
        self.revisions
            .first()
            .map(|r| r.prior_prose.as_str())
            .unwrap_or(&self.prose)
    }

    /// Every version of the prose, oldest first, ending with the current one.
    pub fn history(&self) -> Vec<&str> {
        let mut versions: Vec<&str> = self.revisions.iter().map(|r| r.prior_prose.as_str()).collect();
        versions.push(&self.prose);
        versions
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_count_tracks_prose() {
        let mut s = NarrativeSegment::new(0, "mystery".into(), "One two -- three.".into());
        assert_eq!(s.word_count, 3);
        s.revise("shorter", "One.".into());
        assert_eq!(s.word_count, 1);
        assert_eq!(s.revisions.len(), 1);
        assert_eq!(s.revisions[0].prior_prose, "One two -- three.");
    }

    #[test]
    fn revision_chain_replays_backward() {
        let mut s = NarrativeSegment::new(2, "horror".into(), "v0".into());
        s.revise("a", "v1".into());
        s.revise(MANUAL_EDIT, "v2".into());
        s.revise("b", "v3".into());
        assert_eq!(s.history(), vec!["v0", "v1", "v2", "v3"]);
        let mut prose = s.prose.clone();
        for r in s.revisions.iter().rev() {
            prose = r.prior_prose.clone();
        }
        assert_eq!(prose, "v0");
        assert_eq!(s.original_prose(), "v0");
    }
}
