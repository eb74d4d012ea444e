//! Shared analyzer for keyword search, the mock embedder and the overlap reranker.

/// Lowercases, strips punctuation and splits on whitespace.
///
/// Any character that is neither alphanumeric nor whitespace is removed, so
/// `"Markov-Random field's"` becomes `["markovrandom", "fields"]`.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// FNV-1a, 64 bit. Stable across platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |hash, &b| (hash ^ u64::from(b)).wrapping_mul(PRIME))
}

pub(crate) fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_strips_punctuation_and_case() {
        assert_eq!(tokenize("Cat, sat!  on the MAT."), vec!["cat", "sat", "on", "the", "mat"]);
        assert_eq!(tokenize("field's x^2"), vec!["fields", "x2"]);
        assert!(tokenize(" ?! ").is_empty());
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
