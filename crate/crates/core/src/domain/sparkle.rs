use serde::{Deserialize, Serialize};

use super::DomainError;

pub const DEFAULT_BEAT_COUNT: u8 = 6;
pub const MAX_BEAT_COUNT: u8 = 10;
pub const DEFAULT_SEGMENT_WORDS: WordRange = WordRange {
    lower: 800,
    upper: 1000,
};

/// Inclusive word range a prose segment should land in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordRange {
    pub lower: usize,
    pub upper: usize,
}

impl WordRange {
    pub fn new(lower: usize, upper: usize) -> Result<Self, DomainError> {
        let range = Self { lower, upper };
        range.validate("target_segment_words")?;
        Ok(range)
    }

    pub fn validate(&self, field: &str) -> Result<(), DomainError> {
        if self.lower < 1 {
            return Err(DomainError::invalid(
                format!("{field}.lower"),
                "lower bound must be at least 1",
            ));
        }
        if self.lower > self.upper {
            return Err(DomainError::invalid(
                format!("{field}.upper"),
                format!("upper bound {} is below lower bound {}", self.upper, self.lower),
            ));
        }
        Ok(())
    }

    pub fn midpoint(&self) -> usize {
        (self.lower + self.upper) / 2
    }

    pub fn contains(&self, words: usize) -> bool {
        (self.lower..=self.upper).contains(&words)
    }

    /// Whether `words` is within the range widened by 25% on each side.
    pub fn within_tolerance(&self, words: usize) -> bool {
        // 4w >= 3·lower and 4w <= 5·upper, kept in integers.
        4 * words >= 3 * self.lower && 4 * words <= 5 * self.upper
    }
}

impl Default for WordRange {
    fn default() -> Self {
        DEFAULT_SEGMENT_WORDS
    }
}

/// The free-text seed that launches a session, with its story parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sparkle {
    pub text: String,
    #[serde(default = "default_language")]
    pub language: String,
    #[serde(default = "default_beat_count")]
    pub target_beat_count: u8,
    #[serde(default)]
    pub target_segment_words: WordRange,
}

fn default_language() -> String {
    "en".to_owned()
}

fn default_beat_count() -> u8 {
    DEFAULT_BEAT_COUNT
}

impl Sparkle {
    /// A sparkle with the default language, beat count and segment range.
    pub fn new(text: impl Into<String>) -> Result<Self, DomainError> {
        let sparkle = Self {
            text: text.into(),
            language: default_language(),
            target_beat_count: DEFAULT_BEAT_COUNT,
            target_segment_words: DEFAULT_SEGMENT_WORDS,
        };
        sparkle.validate()?;
        Ok(sparkle)
    }

    pub fn with_beats(mut self, count: u8) -> Result<Self, DomainError> {
        self.target_beat_count = count;
        self.validate()?;
        Ok(self)
    }

    pub fn with_language(mut self, language: impl Into<String>) -> Result<Self, DomainError> {
        self.language = language.into();
        self.validate()?;
        Ok(self)
    }

    pub fn with_segment_words(mut self, range: WordRange) -> Result<Self, DomainError> {
        self.target_segment_words = range;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.text.trim().is_empty() {
            return Err(DomainError::invalid("sparkle.text", "must not be empty"));
        }
        if !is_language_tag(&self.language) {
            return Err(DomainError::invalid(
                "sparkle.language",
                format!("`{}` is not a language tag", self.language),
            ));
        }
        if !(1..=MAX_BEAT_COUNT).contains(&self.target_beat_count) {
            return Err(DomainError::invalid(
                "sparkle.target_beat_count",
                format!("{} is outside 1..=10", self.target_beat_count),
            ));
        }
        self.target_segment_words
            .validate("sparkle.target_segment_words")
    }
}

// Loose BCP 47 shape check: alphanumeric subtags of 1-8 chars joined by '-',
// primary subtag alphabetic.
fn is_language_tag(tag: &str) -> bool {
    let mut parts = tag.split('-');
    let Some(primary) = parts.next() else {
        return false;
    };
    let primary_ok =
        (2..=8).contains(&primary.len()) && primary.chars().all(|c| c.is_ascii_alphabetic());
    primary_ok
        && parts.all(|p| (1..=8).contains(&p.len()) && p.chars().all(|c| c.is_ascii_alphanumeric()))
}
