use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::StoryBeat;
use crate::text::tokens;

/// Surface measures of one story.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NarrativeMetrics {
    pub word_count: usize,
    pub gunning_fog: f64,
    pub dialogue_ratio: f64,
    pub location_count: usize,
}

/// Spatial prepositions that introduce a place name in running text.
pub const LOCATION_PREPOSITIONS: [&str; 6] = ["in", "at", "inside", "near", "beneath", "across"];

/// Tokens ending in a period that do not end a sentence.
const ABBREVIATIONS: [&str; 14] = [
    "mr.", "mrs.", "ms.", "dr.", "st.", "prof.", "jr.", "sr.", "vs.", "etc.", "e.g.", "i.e.", "mt.", "no.",
];

const CLOSERS: &[char] = &['"', '\u{201d}', '\u{2019}', '\'', ')', ']'];
const OPENERS: &[char] = &['"', '\u{201c}', '\u{2018}', '\'', '(', '['];

pub fn compute_metrics(story_text: &str, beats: &[StoryBeat]) -> NarrativeMetrics {
    NarrativeMetrics {
        word_count: tokens(story_text).count(),
        gunning_fog: gunning_fog(story_text),
        dialogue_ratio: dialogue_ratio(story_text),
        location_count: locations(story_text, beats).len(),
    }
}

/// Number of vowel groups (`aeiouy`) in the word's letters.
pub fn vowel_groups(word: &str) -> usize {
    let mut groups = 0;
    let mut in_group = false;
    for c in word.chars().filter(|c| c.is_alphabetic()).flat_map(char::to_lowercase) {
        let vowel = "aeiouy".contains(c);
        if vowel && !in_group {
            groups += 1;
        }
        in_group = vowel;
    }
    groups
}

/// Vowel groups, minus one for a silent trailing `e`, never below 1.
///
/// ```
/// use loom_core::analytics::syllables;
/// assert_eq!(syllables("lighthouse"), 2);
/// assert_eq!(syllables("the"), 1);
/// assert_eq!(syllables("beautiful"), 3);
/// ```
pub fn syllables(word: &str) -> usize {
    let letters: String = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    let mut n = vowel_groups(&letters);
    if letters.ends_with('e') {
        n = n.saturating_sub(1);
    }
    n.max(1)
}

pub fn is_complex(word: &str) -> bool {
    syllables(word) >= 3
}

fn is_sentence_end(token: &str) -> bool {
    let core = token.trim_end_matches(CLOSERS);
    core.ends_with(['.', '!', '?']) && !ABBREVIATIONS.contains(&core.to_lowercase().as_str())
}

fn starts_capitalized(token: &str) -> bool {
    token
        .trim_start_matches(OPENERS)
        .chars()
        .next()
        .is_some_and(|c| c.is_uppercase() || c.is_numeric())
}

/// Sentence count: a token ending in `.`, `!` or `?` (closing quotes
/// allowed) ends a sentence when the next token is capitalized or the text
/// ends. Known abbreviations never end one. Trailing words without terminal
/// punctuation form a final sentence.
pub fn sentence_count(text: &str) -> usize {
    let words: Vec<&str> = tokens(text).collect();
    let mut count = 0;
    let mut open = false;
    for (i, token) in words.iter().enumerate() {
        open = true;
        let boundary = is_sentence_end(token) && words.get(i + 1).is_none_or(|next| starts_capitalized(next));
        if boundary {
            count += 1;
            open = false;
        }
    }
    count + usize::from(open)
}

/// `0.4 * (words / sentences + 100 * complex / words)`; 0 for empty text.
pub fn gunning_fog(text: &str) -> f64 {
    let words: Vec<&str> = tokens(text).collect();
    if words.is_empty() {
        return 0.0;
    }
    let sentences = sentence_count(text).max(1);
    let complex = words.iter().filter(|w| is_complex(w)).count();
    let w = words.len() as f64;
    0.4 * (w / sentences as f64 + 100.0 * complex as f64 / w)
}

/// Share of tokens inside double-quoted spans (straight or curly). A token
/// counts as quoted if a span is open when it starts or it carries a quote
/// mark itself.
pub fn dialogue_ratio(text: &str) -> f64 {
    let mut total = 0usize;
    let mut quoted = 0usize;
    let mut open = false;
    for token in tokens(text) {
        total += 1;
        let mut marked = false;
        let was_open = open;
        for c in token.chars() {
            match c {
                '"' => {
                    open = !open;
                    marked = true;
                }
                '\u{201c}' => {
                    open = true;
                    marked = true;
                }
                '\u{201d}' => {
                    open = false;
                    marked = true;
                }
                _ => {}
            }
        }
        if was_open || marked {
            quoted += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        quoted as f64 / total as f64
    }
}

fn normalize_location(raw: &str) -> String {
    let lower = raw
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect::<Vec<_>>();
    let start = usize::from(matches!(lower.first().map(String::as_str), Some("the" | "a" | "an")));
    lower[start.min(lower.len())..].join(" ")
}

/// Unique normalized place names: every beat setting, plus capitalized
/// phrases that follow a spatial preposition in the text.
pub fn locations(text: &str, beats: &[StoryBeat]) -> BTreeSet<String> {
    let mut found: BTreeSet<String> = beats
        .iter()
        .map(|b| normalize_location(&b.setting.location))
        .filter(|l| !l.is_empty())
        .collect();
    let words: Vec<&str> = tokens(text).collect();
    let bare = |t: &str| t.trim_matches(|c: char| !c.is_alphanumeric()).to_owned();
    let ends_clause = |t: &str| t.ends_with(|c: char| !c.is_alphanumeric());
    for (i, token) in words.iter().enumerate() {
        if ends_clause(token) || !LOCATION_PREPOSITIONS.contains(&bare(token).to_lowercase().as_str()) {
            continue;
        }
        let mut j = i + 1;
        if words
            .get(j)
            .is_some_and(|t| matches!(bare(t).as_str(), "the" | "a" | "an") && !ends_clause(t))
        {
            j += 1;
        }
        let mut phrase: Vec<String> = Vec::new();
        while let Some(t) = words.get(j) {
            let word = bare(t);
            let capital = word.chars().next().is_some_and(char::is_uppercase);
            let connector = matches!(word.as_str(), "of" | "de")
                && !phrase.is_empty()
                && !ends_clause(t)
                && words.get(j + 1).is_some_and(|n| bare(n).chars().next().is_some_and(char::is_uppercase));
            if !(capital || connector) {
                break;
            }
            phrase.push(word);
            j += 1;
            if ends_clause(t) {
                break;
            }
        }
        if !phrase.is_empty() {
            found.insert(normalize_location(&phrase.join(" ")));
        }
    }
    found
}
