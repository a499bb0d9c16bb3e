//! Text analysis for the word vocabulary: lowercasing, tokenization on
//! non-alphanumeric characters, stopword removal and Porter stemming.
//!
//! Entity identifiers never pass through this module; they are indexed as
//! opaque atoms.

pub mod porter;

/// The classic 33-word English stopword list.
pub const STOPWORDS: [&str; 33] = [
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "if", "in", "into", "is", "it",
    "no", "not", "of", "on", "or", "such", "that", "the", "their", "then", "there", "these",
    "they", "this", "to", "was", "will", "with",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Tokenize, drop stopwords and stem.
pub fn analyze_text(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|tok| !tok.is_empty() && !is_stopword(tok))
        .map(porter::stem)
        .collect()
}

/// Unique analyzed terms of `text`, in first-occurrence order.
pub fn analyze_unique(text: &str) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    analyze_text(text)
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect()
}
