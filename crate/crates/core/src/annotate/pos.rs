//! Heuristic coarse part-of-speech tags.
//!
//! Tags: NOUN, VERB, ADJ, NUM, PUNCT, PROPN, OTHER. Decision order is
//! punctuation, numbers, closed-class lists, the verb list, capitalization,
//! suffixes, and NOUN as the fallback.

const FUNCTION_WORDS: &[&str] = &[
    "a", "about", "above", "after", "against", "all", "also", "an", "and", "any", "as", "at",
    "because", "before", "below", "between", "both", "but", "by", "during", "each", "either",
    "for", "from", "he", "her", "hers", "him", "his", "however", "i", "if", "in", "into", "it",
    "its", "me", "my", "neither", "no", "nor", "not", "of", "off", "on", "or", "our", "over",
    "she", "so", "some", "than", "that", "the", "their", "them", "then", "there", "these",
    "they", "this", "those", "though", "through", "to", "under", "until", "up", "upon", "us",
    "very", "we", "what", "when", "where", "which", "while", "who", "whom", "whose", "why",
    "with", "within", "without", "you", "your",
];

const VERBS: &[&str] = &[
    "am", "are", "attend", "attended", "be", "became", "become", "been", "being", "born", "call",
    "called", "can", "could", "did", "do", "does", "elected", "get", "got", "had", "has", "have",
    "is", "know", "made", "make", "may", "might", "must", "received", "said", "say", "says",
    "see", "seen", "send", "sent", "serve", "served", "shall", "should", "take", "taken",
    "told", "took", "was", "went", "were", "will", "won", "would", "wrote",
];

const ADJ_SUFFIXES: &[&str] = &["ous", "ful", "ive", "able", "ible", "ical", "less", "ish", "ary"];
const VERB_SUFFIXES: &[&str] = &["ing", "ed", "ize", "ise", "ify"];

fn tag_one(token: &str) -> &'static str {
    if token.is_empty() {
        return "OTHER";
    }
    if token.chars().all(|c| c.is_ascii_punctuation()) {
        return "PUNCT";
    }
    if token.chars().any(|c| c.is_ascii_digit())
        && token
            .chars()
            .all(|c| c.is_ascii_digit() || matches!(c, '.' | ',' | '-' | '/' | ':'))
    {
        return "NUM";
    }
    let lower = token.to_lowercase();
    if FUNCTION_WORDS.binary_search(&lower.as_str()).is_ok() {
        return "OTHER";
    }
    if VERBS.binary_search(&lower.as_str()).is_ok() {
        return "VERB";
    }
    if token.chars().next().is_some_and(char::is_uppercase) {
        return "PROPN";
    }
    if lower.len() > 4 && lower.ends_with("ly") {
        return "OTHER";
    }
    if lower.len() > 4 && VERB_SUFFIXES.iter().any(|s| lower.ends_with(s)) {
        return "VERB";
    }
    if lower.len() > 4 && ADJ_SUFFIXES.iter().any(|s| lower.ends_with(s)) {
        return "ADJ";
    }
    "NOUN"
}

/// One coarse POS tag per token. Deterministic.
pub fn pos_lite<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens
        .iter()
        .map(|t| tag_one(t.as_ref()).to_owned())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_lists_are_sorted_for_binary_search() {
        assert!(FUNCTION_WORDS.windows(2).all(|w| w[0] < w[1]));
        assert!(VERBS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn fixed_lookups() {
        assert_eq!(pos_lite(&["born"]), ["VERB"]);
        assert_eq!(pos_lite(&["35801"]), ["NUM"]);
        assert_eq!(pos_lite(&[","]), ["PUNCT"]);
    }

    #[test]
    fn sentence() {
        let toks = ["Roby", "was", "born", "in", "Montgomery", ",", "a", "famous", "city", "quickly", "growing"];
        assert_eq!(
            pos_lite(&toks),
            ["PROPN", "VERB", "VERB", "OTHER", "PROPN", "PUNCT", "OTHER", "ADJ", "NOUN", "OTHER", "VERB"]
        );
    }

    #[test]
    fn sentence_initial_function_word_is_not_propn() {
        assert_eq!(pos_lite(&["The", "Was"]), ["OTHER", "VERB"]);
    }

    #[test]
    fn dates_and_phone_numbers_are_num() {
        assert_eq!(pos_lite(&["03/14/2001", "555-123-4567", "1,200.50"]), ["NUM", "NUM", "NUM"]);
    }
}
