//! Retrieval-grounded consistency checks and soft-constraint ranking.
//!
//! Completed segments are embedded into a per-session [`SegmentIndex`]. Each
//! new proposal is turned into a query (its canonical beat JSON), the top
//! [`RETRIEVAL_K`] segments by cosine similarity are retrieved, and the
//! verification model is asked whether the beat's events contradict them.
//! A flagged proposal is labelled, never removed: [`rank_proposals`] only
//! reorders.

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    serialize_beat, BeatProposal, ConsistencyVerdict, EmbeddingVector, NarrativeSegment, StoryBeat,
    Verdict,
};
use crate::gateway::{Gateway, GatewayError};
use crate::prompts::{verification_prompt, PromptTemplates};

/// Retrieved passages per consistency check.
pub const RETRIEVAL_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlotError {
    #[error("cosine similarity is undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("segment {0} is already indexed")]
    DuplicateSegment(usize),
    #[error("segment {0} is not indexed")]
    UnknownSegment(usize),
    #[error("cannot index a segment with empty prose")]
    EmptyText,
}

/// One stored document. Entries are never modified once written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub segment_id: usize,
    pub embedding: EmbeddingVector,
    pub text: String,
    /// Position of the entry this one replaces, for re-embedded segments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<usize>,
}

/// Append-only vector store over a session's segments.
///
/// A revised segment is recorded by appending a superseding entry; the older
/// entry stays in [`entries`](Self::entries) but drops out of retrieval.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentIndex {
    entries: Vec<IndexEntry>,
}

impl SegmentIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every entry ever written, in write order.
    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    fn live_position(&self, segment_id: usize) -> Option<usize> {
        self.entries.iter().rposition(|e| e.segment_id == segment_id)
    }

    /// The current entry per segment, ordered by segment id.
    pub fn live(&self) -> Vec<&IndexEntry> {
        let mut live: Vec<&IndexEntry> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(pos, e)| self.live_position(e.segment_id) == Some(*pos))
            .map(|(_, e)| e)
            .collect();
        live.sort_by_key(|e| e.segment_id);
        live
    }

    pub fn live_len(&self) -> usize {
        self.live().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, segment_id: usize) -> Option<&IndexEntry> {
        self.live_position(segment_id).map(|p| &self.entries[p])
    }

    pub fn insert(&mut self, segment_id: usize, embedding: EmbeddingVector, text: String) -> Result<(), PlotError> {
        if self.live_position(segment_id).is_some() {
            return Err(PlotError::DuplicateSegment(segment_id));
        }
        self.push(segment_id, embedding, text, None)
    }

    pub fn supersede(&mut self, segment_id: usize, embedding: EmbeddingVector, text: String) -> Result<(), PlotError> {
        let prior = self
            .live_position(segment_id)
            .ok_or(PlotError::UnknownSegment(segment_id))?;
        self.push(segment_id, embedding, text, Some(prior))
    }

    fn push(&mut self, segment_id: usize, embedding: EmbeddingVector, text: String, supersedes: Option<usize>) -> Result<(), PlotError> {
        if text.trim().is_empty() {
            return Err(PlotError::EmptyText);
        }
        if embedding.norm() == 0.0 {
            return Err(PlotError::ZeroNorm);
        }
        self.entries.push(IndexEntry {
            segment_id,
            embedding,
            text,
            supersedes,
        });
        Ok(())
    }

    /// Top `min(k, live entries)` segments by similarity to `query`, scores
    /// non-increasing, ties broken toward the older segment.
    pub fn retrieve(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<(usize, f64)>, PlotError> {
        let mut scored = self
            .live()
            .into_iter()
            .map(|e| cosine_similarity(query, &e.embedding).map(|s| (e.segment_id, s)))
            .collect::<Result<Vec<_>, _>>()?;
        // Stable sort keeps segment order among equal scores.
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(k);
        Ok(scored)
    }
}

/// `dot(a, b) / (|a| |b|)`, clamped to [-1, 1] against rounding.
///
/// ```
/// use loom_core::domain::{EmbeddingVector, EMBEDDING_DIM};
/// use loom_core::plot::cosine_similarity;
/// let mut x = vec![0.0; EMBEDDING_DIM];
/// let mut y = vec![0.0; EMBEDDING_DIM];
/// x[0] = 1.0;
/// y[1] = 1.0;
/// let (x, y) = (EmbeddingVector::new(x).unwrap(), EmbeddingVector::new(y).unwrap());
/// assert_eq!(cosine_similarity(&x, &y).unwrap(), 0.0);
/// ```
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, PlotError> {
    if a.norm() == 0.0 || b.norm() == 0.0 {
        return Err(PlotError::ZeroNorm);
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Ok((dot / (a.norm() * b.norm())).clamp(-1.0, 1.0))
}

#[derive(Debug, Error)]
pub enum IndexSegmentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Index(#[from] PlotError),
}

/// Embed a segment's full prose.
pub async fn embed_segment(gateway: &Gateway, segment: &NarrativeSegment) -> Result<EmbeddingVector, IndexSegmentError> {
    if segment.prose.trim().is_empty() {
        return Err(PlotError::EmptyText.into());
    }
    Ok(gateway.embed(&segment.prose).await?)
}

/// Embed `segment` and append it to `index`.
pub async fn index_segment(gateway: &Gateway, index: &mut SegmentIndex, segment: &NarrativeSegment) -> Result<(), IndexSegmentError> {
    let embedding = embed_segment(gateway, segment).await?;
    index.insert(segment.beat_index, embedding, segment.prose.clone())?;
    Ok(())
}

/// Segments most similar to `beat`, queried by its canonical JSON.
pub async fn retrieve_context(
    gateway: &Gateway,
    index: &SegmentIndex,
    beat: &StoryBeat,
    k: usize,
) -> Result<Vec<(usize, f64)>, IndexSegmentError> {
    if index.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let query = gateway.embed(&serialize_beat(beat)).await?;
    Ok(index.retrieve(&query, k)?)
}

/// What a verifier reply says.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifierReply {
    pub has_error: bool,
    pub description: String,
    pub parse_warning: bool,
}

/// Read a leading yes/no (any case, brackets optional) and keep the rest as
/// the description. A reply without one is read as consistent, with a
/// warning.
///
/// ```
/// use loom_core::plot::parse_verifier_reply;
/// let r = parse_verifier_reply("[Yes] Mara died in segment 2.");
/// assert!(r.has_error);
/// assert_eq!(r.description, "Mara died in segment 2.");
/// assert!(!parse_verifier_reply("No.").has_error);
/// ```
pub fn parse_verifier_reply(reply: &str) -> VerifierReply {
    let text = reply.trim_start();
    let (bracketed, body) = match text.strip_prefix('[') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let word_len = body.chars().take_while(|c| c.is_alphabetic()).map(char::len_utf8).sum::<usize>();
    let word = body[..word_len].to_lowercase();
    let mut rest = &body[word_len..];
    let answer = match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    };
    let Some(has_error) = answer else {
        return VerifierReply {
            has_error: false,
            description: String::new(),
            parse_warning: true,
        };
    };
    if bracketed {
        match rest.strip_prefix(']') {
            Some(r) => rest = r,
            None => {
                return VerifierReply {
                    has_error: false,
                    description: String::new(),
                    parse_warning: true,
                }
            }
        }
    }
    let description = rest
        .trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '.' | ',' | ':' | ';' | '-' | '!'))
        .trim_end()
        .to_owned();
    VerifierReply {
        has_error,
        description: if has_error { description } else { String::new() },
        parse_warning: false,
    }
}

/// Check one beat against the story so far.
///
/// An empty index gives a clean verdict without any model call. Any backend
/// failure leaves the verdict pending with the reason attached.
pub async fn check_consistency(
    gateway: &Gateway,
    templates: &PromptTemplates,
    index: &SegmentIndex,
    beat: &StoryBeat,
) -> Verdict {
    if index.is_empty() {
        return Verdict::Checked(ConsistencyVerdict::vacuous());
    }
    let retrieved = match retrieve_context(gateway, index, beat, RETRIEVAL_K).await {
        Ok(r) => r,
        Err(e) => return Verdict::Pending { reason: Some(e.to_string()) },
    };
    let passages: Vec<(usize, &str)> = retrieved
        .iter()
        .filter_map(|(id, _)| index.get(*id).map(|e| (*id, e.text.as_str())))
        .collect();
    let bundle = verification_prompt(templates, gateway.profile(), beat, &passages);
    match gateway.complete(&bundle).await {
        Ok(reply) => {
            let parsed = parse_verifier_reply(&reply);
            if parsed.parse_warning {
                tracing::warn!(reply = %reply, "unparseable verifier reply, treating as consistent");
            }
            Verdict::Checked(ConsistencyVerdict {
                has_error: parsed.has_error,
                error_description: parsed.description,
                retrieved_segment_ids: retrieved.iter().map(|(id, _)| *id).collect(),
                similarity_scores: retrieved.iter().map(|(_, s)| *s).collect(),
                parse_warning: parsed.parse_warning,
            })
        }
        Err(e) => Verdict::Pending { reason: Some(e.to_string()) },
    }
}

/// Check every proposal concurrently and return them ranked.
pub async fn check_and_rank(
    gateway: &Gateway,
    templates: &PromptTemplates,
    index: &SegmentIndex,
    proposals: Vec<BeatProposal>,
) -> Vec<BeatProposal> {
    let verdicts = join_all(
        proposals
            .iter()
            .map(|p| check_consistency(gateway, templates, index, &p.beat)),
    )
    .await;
    let checked = proposals
        .into_iter()
        .zip(verdicts)
        .map(|(mut p, v)| {
            p.verdict = v;
            p
        })
        .collect();
    rank_proposals(checked)
}

/// Stable three-way partition: consistent, then pending, then flagged.
/// Input order (roster order) is kept within each group; ranks are 1-based.
pub fn rank_proposals(proposals: Vec<BeatProposal>) -> Vec<BeatProposal> {
    let group = |p: &BeatProposal| match &p.verdict {
        Verdict::Checked(v) if !v.has_error => 0,
        Verdict::Pending { .. } => 1,
        Verdict::Checked(_) => 2,
    };
    let mut ranked = proposals;
    ranked.sort_by_key(group);
    for (i, p) in ranked.iter_mut().enumerate() {
        p.rank = Some(i + 1);
    }
    ranked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{PersonaId, EMBEDDING_DIM};
    use crate::gateway::mock_embedding;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vector(rng: &mut ChaCha8Rng) -> EmbeddingVector {
        EmbeddingVector::new((0..EMBEDDING_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn self_similarity_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let v = random_vector(&mut rng);
            assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_norm_is_an_error() {
        let zero = EmbeddingVector::new(vec![0.0; EMBEDDING_DIM]).unwrap();
        let one = mock_embedding("a");
        assert_eq!(cosine_similarity(&zero, &one), Err(PlotError::ZeroNorm));
    }

    #[test]
    fn index_is_append_only_with_superseding_entries() {
        let mut index = SegmentIndex::new();
        index.insert(0, mock_embedding("first"), "first".into()).unwrap();
        index.insert(1, mock_embedding("second"), "second".into()).unwrap();
        assert_eq!(index.insert(0, mock_embedding("again"), "again".into()), Err(PlotError::DuplicateSegment(0)));
        let before = index.entries()[0].clone();
        index.supersede(0, mock_embedding("edited"), "edited".into()).unwrap();
        assert_eq!(index.entries().len(), 3);
        assert_eq!(index.entries()[0], before);
        assert_eq!(index.live_len(), 2);
        assert_eq!(index.get(0).unwrap().text, "edited");
        assert_eq!(index.supersede(7, mock_embedding("x"), "x".into()), Err(PlotError::UnknownSegment(7)));
    }

    #[test]
    fn retrieval_prefers_exact_text_and_older_ties() {
        let mut index = SegmentIndex::new();
        for (i, text) in ["the keeper lights the lamp", "a ship in the fog", "the keeper lights the lamp"].iter().enumerate() {
            index.insert(i, mock_embedding(text), (*text).into()).unwrap();
        }
        let hits = index.retrieve(&mock_embedding("the keeper lights the lamp"), 3).unwrap();
        assert_eq!(hits[0].0, 0);
        assert_eq!(hits[1].0, 2);
        assert!((hits[0].1 - 1.0).abs() < 1e-9);
        assert!(hits.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn verifier_reply_parsing() {
        let yes = parse_verifier_reply("[Yes] Character Mara died in segment 2.");
        assert_eq!(
            yes,
            VerifierReply {
                has_error: true,
                description: "Character Mara died in segment 2.".into(),
                parse_warning: false
            }
        );
        assert!(!parse_verifier_reply("No.").has_error);
        assert!(!parse_verifier_reply("[no]").parse_warning);
        assert!(parse_verifier_reply("yes, the timeline breaks").has_error);
        let garbage = parse_verifier_reply("Maybe? Hard to say.");
        assert!(!garbage.has_error && garbage.parse_warning);
        assert!(parse_verifier_reply("Nothing wrong").parse_warning);
        assert!(parse_verifier_reply("Yesterday it rained").parse_warning);
    }

    fn proposal(persona: &str, verdict: Verdict) -> BeatProposal {
        let beat = StoryBeat::new(0, "x", "y", vec!["A".into()], vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let mut p = BeatProposal::new(PersonaId::from(persona), beat, "r");
        p.verdict = verdict;
        p
    }

    fn checked(has_error: bool) -> Verdict {
        let mut v = ConsistencyVerdict::vacuous();
        v.has_error = has_error;
        if has_error {
            v.error_description = "e".into();
        }
        Verdict::Checked(v)
    }

    #[test]
    fn inconsistent_moves_behind_consistent() {
        let ranked = rank_proposals(vec![proposal("p1", checked(true)), proposal("p2", checked(false))]);
        let ids: Vec<_> = ranked.iter().map(|p| p.persona_id.as_str()).collect();
        assert_eq!(ids, ["p2", "p1"]);
        assert_eq!(ranked[0].rank, Some(1));
        assert_eq!(ranked[1].rank, Some(2));
    }

    proptest! {
        #[test]
        fn ranking_never_discards_or_inverts(pattern in prop::collection::vec(0u8..3, 0..12)) {
            let input: Vec<_> = pattern
                .iter()
                .enumerate()
                .map(|(i, k)| proposal(&format!("p{i}"), match k { 0 => checked(false), 1 => Verdict::pending(), _ => checked(true) }))
                .collect();
            let out = rank_proposals(input.clone());
            prop_assert_eq!(out.len(), input.len());
            let mut ids: Vec<_> = out.iter().map(|p| p.persona_id.clone()).collect();
            ids.sort();
            let mut expected: Vec<_> = input.iter().map(|p| p.persona_id.clone()).collect();
            expected.sort();
            prop_assert_eq!(ids, expected);
            let first_bad = out.iter().position(|p| p.verdict.has_error()).unwrap_or(out.len());
            prop_assert!(out[first_bad..].iter().all(|p| p.verdict.has_error()));
        }
    }
}
