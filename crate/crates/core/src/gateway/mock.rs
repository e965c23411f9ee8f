use std::sync::LazyLock;

use async_trait::async_trait;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{Backend, GatewayError, OutputFormat, PromptBundle};
use crate::domain::{EmbeddingVector, EMBEDDING_DIM};
use crate::text::fnv1a64;

/// The fixed 2000-word vocabulary the mock writes prose from.
pub static LEXICON: LazyLock<Vec<&'static str>> =
    LazyLock::new(|| include_str!("../../assets/lexicon.txt").lines().collect());

/// Added to the dialogue share when a refine instruction mentions dialogue.
pub const MOCK_DIALOGUE_DELTA: f64 = 0.15;

const NAMES: &[&str] = &[
    "Mara", "Ivo", "Lena", "Tomas", "Ada", "Cyrus", "Nell", "Ruth", "Oskar", "Yara", "Bram",
    "Elise", "Pilar", "Hugo", "Wren", "Soren",
];

const TIMES: &[&str] = &[
    "dawn", "midnight", "late afternoon", "the first night of winter", "the morning after",
    "dusk", "a rainy Tuesday", "the hour before the storm",
];

const ACTIONS: &[&str] = &[
    "discovers a letter hidden in {place}",
    "refuses to give up the key",
    "follows a stranger through the crowd",
    "hears a bell that should not ring",
    "admits the truth about the missing year",
    "breaks the seal on the old map",
    "bargains with {other} for safe passage",
    "finds {other}'s coat abandoned by the door",
    "decides to stay and wait",
    "sets out before anyone wakes",
    "hides the evidence from {other}",
    "recognizes a face from the photograph",
    "loses the only lantern",
    "confronts {other} about the promise",
    "opens the door that was always locked",
    "realizes the message was meant for someone else",
];

fn places(persona: Option<&str>) -> &'static [&'static str] {
    match persona {
        Some("fantasy") => &["the Tower of Ash", "a moonlit forest", "the dragon's pass"],
        Some("scifi") => &["the orbital dock", "a derelict research ship", "the colony dome"],
        Some("mystery") => &["the locked study", "the rail station", "a shuttered pawn shop"],
        Some("romance") => &["the harbor cafe", "a rooftop garden", "the old ferry"],
        Some("historical") => &["the guild hall", "a field hospital", "the royal archive"],
        Some("horror") => &["the cellar", "an abandoned chapel", "the flooded mill"],
        Some("adventure") => &["the river gorge", "a smugglers' cove", "the high desert"],
        Some("comedy") => &["the bakery", "a wedding rehearsal", "the town council office"],
        Some("dystopian") => &["the ration depot", "Sector Nine", "the surveillance tower"],
        Some("magical_realism") => &["the grandmother's kitchen", "a street where it always rains", "the lighthouse"],
        _ => &["the lighthouse", "the harbor", "the market square"],
    }
}

/// Offline backend: every reply is a pure function of the seed and the
/// serialized request.
#[derive(Debug, Clone, Copy)]
pub struct MockBackend {
    seed: u64,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn rng_for(&self, bundle: &PromptBundle) -> ChaCha8Rng {
        let bytes = serde_json::to_vec(bundle).expect("bundle serializes");
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&fnv1a64(&bytes).to_le_bytes());
        ChaCha8Rng::from_seed(key)
    }

    /// The reply `complete` would return, without the async wrapper.
    pub fn reply(&self, bundle: &PromptBundle) -> String {
        let mut rng = self.rng_for(bundle);
        let persona = bundle.persona_id.as_ref().map(|p| p.as_str());
        match &bundle.format {
            OutputFormat::Beat {
                beat_index,
                min_events,
                max_events,
            } => mock_beat(&mut rng, persona, *beat_index, *min_events, *max_events),
            OutputFormat::Prose {
                min_words,
                max_words,
                dialogue_ratio,
                instruction,
            } => {
                let mut ratio = *dialogue_ratio;
                if instruction
                    .as_deref()
                    .is_some_and(|i| i.to_lowercase().contains("dialogue"))
                {
                    ratio = (ratio + MOCK_DIALOGUE_DELTA).min(1.0);
                }
                mock_prose(&mut rng, (min_words + max_words) / 2, ratio)
            }
            OutputFormat::Verdict => {
                if rng.random_ratio(1, 5) {
                    let name = NAMES.choose(&mut rng).expect("names");
                    format!("[Yes] {name} is placed somewhere the earlier segments rule out.")
                } else {
                    "[No]".to_owned()
                }
            }
            OutputFormat::Chat => {
                let place = places(persona).choose(&mut rng).expect("places");
                let name = NAMES.choose(&mut rng).expect("names");
                format!(
                    "One direction: let {name} return to {place} with something to hide. \
                     Another: {} Which feels closer to the story you want?",
                    capitalize(&sentence(&mut rng, 8))
                )
            }
        }
    }
}

#[async_trait]
impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    async fn complete(&self, bundle: &PromptBundle) -> Result<String, GatewayError> {
        Ok(self.reply(bundle))
    }

    async fn embed(&self, text: &str, _model_id: &str) -> Result<EmbeddingVector, GatewayError> {
        Ok(mock_embedding(text))
    }
}

fn mock_beat(
    rng: &mut ChaCha8Rng,
    persona: Option<&str>,
    beat_index: usize,
    min_events: usize,
    max_events: usize,
) -> String {
    let places = places(persona);
    let location = *places.choose(rng).expect("places");
    let time = *TIMES.choose(rng).expect("times");
    let cast_size = rng.random_range(1..=3);
    let cast: Vec<&str> = NAMES.choose_multiple(rng, cast_size).copied().collect();
    let n = rng.random_range(min_events..=max_events.max(min_events));
    let key_events: Vec<String> = (0..n)
        .map(|_| {
            let who = cast.choose(rng).expect("cast");
            let others: Vec<&str> = NAMES.iter().copied().filter(|n| n != who).collect();
            let other = *others.choose(rng).expect("two names");
            let action = ACTIONS
                .choose(rng)
                .expect("actions")
                .replace("{place}", places.choose(rng).expect("places"))
                .replace("{other}", other);
            format!("{who} {action}")
        })
        .collect();
    let rationale = format!(
        "From the {} angle, {} at {} raises the stakes while keeping {} at the center.",
        persona.unwrap_or("default").replace('_', " "),
        location,
        time,
        cast[0]
    );
    json!({
        "index": beat_index,
        "setting": {"location": location, "time": time},
        "characters": cast,
        "key_events": key_events,
        "rationale": rationale,
    })
    .to_string()
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn sentence(rng: &mut impl Rng, words: usize) -> String {
    let mut out: Vec<&str> = Vec::with_capacity(words);
    for _ in 0..words {
        out.push(LEXICON.choose(rng).expect("lexicon"));
    }
    format!("{}.", out.join(" "))
}

fn split_lengths(rng: &mut impl Rng, total: usize, min: usize, max: usize) -> Vec<usize> {
    let mut lengths = Vec::new();
    let mut left = total;
    while left > 0 {
        let take = if left <= max { left } else { rng.random_range(min..=max).min(left - min) };
        lengths.push(take);
        left -= take;
    }
    lengths
}

/// Synthetic prose with exactly `words` canonical tokens, of which
/// `round(words * dialogue_ratio)` sit inside double-quoted spans.
pub fn mock_prose(rng: &mut impl Rng, words: usize, dialogue_ratio: f64) -> String {
    let quoted = ((words as f64) * dialogue_ratio.clamp(0.0, 1.0)).round() as usize;
    let quoted = quoted.min(words);
    let mut units: Vec<String> = split_lengths(rng, words - quoted, 5, 14)
        .into_iter()
        .map(|n| capitalize(&sentence(rng, n)))
        .collect();
    for n in split_lengths(rng, quoted, 3, 10) {
        let line = format!("\"{}\"", capitalize(&sentence(rng, n)));
        let at = rng.random_range(0..=units.len());
        units.insert(at, line);
    }
    let mut paragraphs = Vec::new();
    let mut rest = units.as_slice();
    while !rest.is_empty() {
        let take = rng.random_range(3..=6).min(rest.len());
        paragraphs.push(rest[..take].join(" "));
        rest = &rest[take..];
    }
    paragraphs.join("\n\n")
}

/// Hashed bag-of-words embedding: each lowercased word adds ±1 to one of
/// 1536 buckets, then the vector is L2-normalized. Word order is ignored.
pub fn mock_embedding(text: &str) -> EmbeddingVector {
    let mut values = vec![0.0f64; EMBEDDING_DIM];
    for word in text.split_whitespace() {
        let word: String = word
            .trim_matches(|c: char| !c.is_alphanumeric())
            .to_lowercase();
        if word.is_empty() {
            continue;
        }
        let h = fnv1a64(word.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        values[(h % EMBEDDING_DIM as u64) as usize] += sign;
    }
    if values.iter().all(|v| *v == 0.0) {
        let h = fnv1a64(text.as_bytes());
        values[(h % EMBEDDING_DIM as u64) as usize] = 1.0;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    values.iter_mut().for_each(|v| *v /= norm);
    EmbeddingVector::new(values).expect("finite and 1536-dimensional")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{tokens, word_count};
    use proptest::prelude::*;

    fn quoted_tokens(text: &str) -> usize {
        let mut open = false;
        let mut n = 0;
        for token in tokens(text) {
            let quotes = token.matches('"').count();
            if open || quotes > 0 {
                n += 1;
            }
            if quotes % 2 == 1 {
                open = !open;
            }
        }
        n
    }

    #[test]
    fn lexicon_is_two_thousand_unique_words() {
        assert_eq!(LEXICON.len(), 2000);
        let mut sorted = LEXICON.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 2000);
        assert!(LEXICON.iter().all(|w| w.chars().all(|c| c.is_ascii_lowercase())));
    }

    #[test]
    fn prose_hits_word_count_and_dialogue_share() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let text = mock_prose(&mut rng, 900, 0.2);
        assert_eq!(word_count(&text), 900);
        assert_eq!(quoted_tokens(&text), 180);
    }

    #[test]
    fn embedding_is_order_invariant_and_unit() {
        let a = mock_embedding("the lighthouse keeper");
        let b = mock_embedding("lighthouse keeper the");
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert!((mock_embedding("...").norm() - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn prose_is_exact_for_any_request(seed: u64, words in 0usize..1500, ratio in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let text = mock_prose(&mut rng, words, ratio);
            prop_assert_eq!(word_count(&text), words);
            prop_assert_eq!(quoted_tokens(&text), ((words as f64) * ratio).round() as usize);
        }

        #[test]
        fn embedding_norm_is_one(text in ".{1,200}") {
            prop_assert!((mock_embedding(&text).norm() - 1.0).abs() < 1e-9);
        }
    }
}
