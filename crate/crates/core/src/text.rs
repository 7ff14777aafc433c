//! Shared text utilities: the tokenizer used by the offline embedder, the
//! lexical index analyzer, and the rule extractor, plus the stopword list
//! that separates content words from filler.

/// Lowercase tokens, split on any non-alphanumeric character.
///
/// This is the single analyzer shared by the offline embedder and the
/// lexical index so that dense and sparse views agree on term identity.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Case-preserving variant of [`tokenize`], used for entity detection.
pub fn tokenize_cased(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "any", "are", "as", "at", "be", "been", "both", "but", "by", "did", "do",
    "does", "for", "from", "had", "has", "have", "he", "her", "here", "him", "his", "how", "i",
    "if", "in", "into", "is", "it", "its", "me", "my", "no", "not", "of", "on", "or", "our", "s",
    "she", "so", "some", "that", "the", "their", "them", "then", "there", "they", "this", "those",
    "to", "too", "up", "was", "we", "were", "what", "when", "where", "which", "who", "why",
    "will", "with", "would", "you", "your",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Content words of a text: lowercase tokens with stopwords removed.
pub fn content_words(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !is_stopword(t))
        .collect()
}
