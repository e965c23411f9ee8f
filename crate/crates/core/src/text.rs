//! Canonical word tokenization shared by segment word counts and analytics.
//!
//! A word is any whitespace-delimited token containing at least one
//! alphanumeric character. Tokens made only of punctuation (`--`, `"`, `...`)
//! are dropped.

/// Iterate over the canonical word tokens of `text`, punctuation attached.
pub fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
        .filter(|token| token.chars().any(char::is_alphanumeric))
}

/// Number of canonical word tokens in `text`.
pub fn word_count(text: &str) -> usize {
    tokens(text).count()
}

/// Stable 64-bit FNV-1a hash. Used wherever a hash must survive process
/// restarts and toolchain upgrades (mock backend seeding, session ids).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |hash, byte| {
        (hash ^ u64::from(*byte)).wrapping_mul(PRIME)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_only_tokens_are_dropped() {
        assert_eq!(word_count("Hello -- world ... \"  !"), 2);
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("   \n\t "), 0);
    }

    #[test]
    fn attached_punctuation_keeps_the_token() {
        let words: Vec<_> = tokens("\"Wait,\" she said. 42!").collect();
        assert_eq!(words, vec!["\"Wait,\"", "she", "said.", "42!"]);
    }

    #[test]
    fn unicode_whitespace_splits() {
        assert_eq!(word_count("a\u{00A0}b\u{2003}c"), 3);
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
    }
}
