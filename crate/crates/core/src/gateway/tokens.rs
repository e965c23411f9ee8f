use serde::{Deserialize, Serialize};

use crate::domain::{serialize_beat, NarrativeSegment, StoryBeat};

/// Narrative history carried into every generation call.
pub const HISTORY_TOKEN_BUDGET: usize = 8000;

/// Offline token estimate: `ceil(chars / 4)` over Unicode scalar values.
///
/// Conservative for English prose with GPT-style tokenizers. Exact usage
/// reported by a remote backend is only logged; the budget guard always uses
/// this estimate.
pub fn count_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressedHistory {
    pub text: String,
    /// Beat indices included as full prose.
    pub verbatim: Vec<usize>,
    /// Beat indices included as a serialized beat instead of prose.
    pub summarized: Vec<usize>,
    /// Beat indices omitted entirely.
    pub dropped: Vec<usize>,
    /// The newest segment alone exceeded the budget and was cut.
    pub truncated: bool,
}

impl CompressedHistory {
    pub fn tokens(&self) -> usize {
        count_tokens(&self.text)
    }
}

fn verbatim_piece(segment: &NarrativeSegment) -> String {
    format!("[Segment {}]\n{}\n\n", segment.beat_index + 1, segment.prose.trim())
}

fn summary_piece(beat: &StoryBeat) -> String {
    format!("[Beat {} summary] {}\n\n", beat.index + 1, serialize_beat(beat))
}

/// Fit the story so far into `budget` tokens.
///
/// Segments are taken verbatim from the newest backward until one does not
/// fit; that segment and everything older fall back to their beat summaries,
/// newest first, while those fit. Output is in story order. Because
/// `ceil(a/4) + ceil(b/4) >= ceil((a+b)/4)`, charging each piece separately
/// bounds the token count of the joined text.
pub fn compress_history(
    segments: &[NarrativeSegment],
    beats: &[StoryBeat],
    budget: usize,
) -> CompressedHistory {
    let mut remaining = budget;
    let mut verbatim: Vec<(usize, String)> = Vec::new();
    let mut summaries: Vec<(usize, String)> = Vec::new();
    let mut dropped = Vec::new();
    let mut truncated = false;

    let mut newest_first = segments.iter().rev().peekable();
    while let Some(segment) = newest_first.peek() {
        let piece = verbatim_piece(segment);
        let cost = count_tokens(&piece);
        if cost > remaining {
            break;
        }
        remaining -= cost;
        verbatim.push((segment.beat_index, piece));
        newest_first.next();
    }

    if verbatim.is_empty() {
        if let Some(newest) = newest_first.next() {
            let header = format!("[Segment {}]\n", newest.beat_index + 1);
            let room = (budget * 4).saturating_sub(header.chars().count() + 2);
            if room > 0 {
                let cut: String = newest.prose.trim().chars().take(room).collect();
                let piece = format!("{header}{cut}\n\n");
                remaining = remaining.saturating_sub(count_tokens(&piece));
                verbatim.push((newest.beat_index, piece));
                truncated = true;
            } else {
                dropped.push(newest.beat_index);
            }
        }
    }

    let mut out_of_room = false;
    for segment in newest_first {
        let piece = beats
            .iter()
            .find(|b| b.index == segment.beat_index)
            .map(summary_piece);
        match piece {
            Some(piece) if !out_of_room && count_tokens(&piece) <= remaining => {
                remaining -= count_tokens(&piece);
                summaries.push((segment.beat_index, piece));
            }
            _ => {
                out_of_room = true;
                dropped.push(segment.beat_index);
            }
        }
    }

    summaries.reverse();
    verbatim.reverse();
    dropped.reverse();
    let text: String = summaries
        .iter()
        .chain(verbatim.iter())
        .map(|(_, piece)| piece.as_str())
        .collect();

    CompressedHistory {
        text: text.trim_end().to_owned(),
        verbatim: verbatim.into_iter().map(|(i, _)| i).collect(),
        summarized: summaries.into_iter().map(|(i, _)| i).collect(),
        dropped,
        truncated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PersonaId;
    use proptest::prelude::*;

    #[test]
    fn token_heuristic() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens(&"a".repeat(400)), 100);
        assert_eq!(count_tokens("abcde"), 2);
        assert_eq!(count_tokens("ééé"), 1);
    }

    fn beat(i: usize) -> StoryBeat {
        StoryBeat {
            index: i,
            setting: crate::domain::Setting {
                location: "the harbor".into(),
                time: "dawn".into(),
            },
            characters: vec!["Ivo".into()],
            key_events: vec!["Ivo waits".into(), "A bell rings".into(), "Lena runs".into()],
        }
    }

    fn segment(i: usize, chars: usize) -> NarrativeSegment {
        let word = "word ";
        let prose: String = word.repeat(chars / word.len() + 1).chars().take(chars).collect();
        NarrativeSegment::new(i, PersonaId::from("mystery"), prose)
    }

    #[test]
    fn under_budget_is_verbatim_in_order() {
        let segs: Vec<_> = (0..3).map(|i| segment(i, 400)).collect();
        let beats: Vec<_> = (0..3).map(beat).collect();
        let h = compress_history(&segs, &beats, HISTORY_TOKEN_BUDGET);
        assert_eq!(h.verbatim, vec![0, 1, 2]);
        assert!(h.summarized.is_empty() && h.dropped.is_empty() && !h.truncated);
        let expected: String = segs.iter().map(verbatim_piece).collect();
        assert_eq!(h.text, expected.trim_end());
    }

    #[test]
    fn ten_segments_of_1500_tokens() {
        let segs: Vec<_> = (0..10).map(|i| segment(i, 6000)).collect();
        assert!(segs.iter().all(|s| count_tokens(&s.prose) == 1500));
        let beats: Vec<_> = (0..10).map(beat).collect();
        let h = compress_history(&segs, &beats, 8000);
        assert_eq!(h.verbatim, vec![5, 6, 7, 8, 9]);
        assert_eq!(h.summarized, vec![0, 1, 2, 3, 4]);
        assert!(h.dropped.is_empty());
        assert!(h.tokens() <= 8000);
        let first_verbatim = h.text.find("[Segment 6]").unwrap();
        let last_summary = h.text.find("[Beat 5 summary]").unwrap();
        assert!(last_summary < first_verbatim);
        assert!(h.text.find("[Segment 10]").unwrap() > first_verbatim);
    }

    #[test]
    fn oversized_newest_segment_is_truncated() {
        let segs = vec![segment(0, 200), segment(1, 50_000)];
        let beats: Vec<_> = (0..2).map(beat).collect();
        let h = compress_history(&segs, &beats, 1000);
        assert!(h.truncated);
        assert_eq!(h.verbatim, vec![1]);
        assert!(h.tokens() <= 1000);
    }

    #[test]
    fn empty_history() {
        let h = compress_history(&[], &[], 10);
        assert_eq!(h.text, "");
        assert!(h.verbatim.is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn never_exceeds_budget(
            sizes in prop::collection::vec(0usize..40_000, 0..12),
            budget in 1usize..10_000,
        ) {
            let segs: Vec<_> = sizes.iter().enumerate().map(|(i, n)| segment(i, (*n).max(1))).collect();
            let beats: Vec<_> = (0..segs.len()).map(beat).collect();
            let h = compress_history(&segs, &beats, budget);
            prop_assert!(h.tokens() <= budget);
            let mut all: Vec<_> = h.verbatim.iter().chain(&h.summarized).chain(&h.dropped).copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..segs.len()).collect::<Vec<_>>());
            // Verbatim segments are a suffix of the story.
            if let Some(first) = h.verbatim.first() {
                prop_assert_eq!(h.verbatim.clone(), (*first..segs.len()).collect::<Vec<_>>());
            }
        }
    }
}
