//! Shared tokenizer and stopword list.
//!
//! Every lexical computation in the crate (scenario length filtering, QC
//! heuristics, corpus statistics, persona coverage and all evaluation metrics)
//! goes through [`tokenize`]. A token is a maximal run of alphanumeric
//! characters after Unicode lowercasing, so punctuation and emoji never
//! produce tokens. Changing this function changes every reported number,
//! which is why it carries a version string that reports embed.

use std::collections::HashSet;
use std::sync::OnceLock;

/// Version tag written into metric and analytics reports.
pub const TOKENIZER_VERSION: &str = "alnum-lower/1";

/// Version tag of [`STOPWORDS`].
pub const STOPWORDS_VERSION: &str = "en-function-150/1";

/// Splits `text` into lowercase alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Number of tokens [`tokenize`] would produce, without allocating them.
pub fn word_count(text: &str) -> usize {
    let mut count = 0;
    let mut in_word = false;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            if !in_word {
                count += 1;
                in_word = true;
            }
        } else {
            in_word = false;
        }
    }
    count
}

/// Fixed English function-word list used to pick out content tokens.
pub const STOPWORDS: [&str; 150] = [
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and",
    "any", "are", "as", "at", "be", "because", "been", "before", "being", "below",
    "between", "both", "but", "by", "can", "could", "did", "do", "does", "doing",
    "down", "during", "each", "few", "for", "from", "further", "had", "has", "have",
    "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how",
    "i", "if", "in", "into", "is", "it", "its", "itself", "just", "me",
    "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off",
    "on", "once", "only", "or", "other", "our", "ours", "ourselves", "out", "over",
    "own", "same", "she", "should", "so", "some", "such", "than", "that", "the",
    "their", "theirs", "them", "themselves", "then", "there", "these", "they", "this", "those",
    "through", "to", "too", "under", "until", "up", "very", "was", "we", "were",
    "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with",
    "would", "you", "your", "yours", "yourself", "yourselves", "s", "t", "don", "ll",
    "re", "ve", "m", "d", "also", "may", "might", "must", "shall", "yet",
    "per", "upon", "via", "among", "within", "without", "toward", "towards", "onto", "whether",
];

fn stopword_set() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS.iter().copied().collect())
}

pub fn is_stopword(token: &str) -> bool {
    stopword_set().contains(token)
}

/// Tokens of `text` with stopwords removed, in order, duplicates kept.
pub fn content_tokens(text: &str) -> Vec<String> {
    tokenize(text).into_iter().filter(|t| !is_stopword(t)).collect()
}

/// Distinct content tokens of `text` that occur in `vocab`, as a share of
/// all distinct content tokens. `None` when `text` has no content tokens.
pub fn word_overlap(text: &str, vocab: &HashSet<String>) -> Option<f64> {
    let mut toks = content_tokens(text);
    toks.sort_unstable();
    toks.dedup();
    if toks.is_empty() {
        return None;
    }
    Some(toks.iter().filter(|t| vocab.contains(*t)).count() as f64 / toks.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_punctuation_and_emoji() {
        assert_eq!(
            tokenize("Hello, how has your day been? 😊"),
            vec!["hello", "how", "has", "your", "day", "been"]
        );
        assert_eq!(tokenize("It's fine!!"), vec!["it", "s", "fine"]);
        assert!(tokenize("🙂 ... !!").is_empty());
    }

    #[test]
    fn lowercases_unicode() {
        assert_eq!(tokenize("ÉCOLE Straße"), vec!["école", "straße"]);
    }

    #[test]
    fn word_count_matches_tokenize() {
        for s in ["", "a", " a  b ", "x1y2-z3", "día, 😊 noche", "...hello"] {
            assert_eq!(word_count(s), tokenize(s).len(), "{s:?}");
        }
    }

    #[test]
    fn stopword_list_has_150_unique_lowercase_entries() {
        let set: HashSet<_> = STOPWORDS.iter().collect();
        assert_eq!(set.len(), 150);
        for w in STOPWORDS {
            assert_eq!(tokenize(w), vec![w.to_string()]);
        }
    }

    #[test]
    fn content_tokens_drop_function_words() {
        assert_eq!(content_tokens("I feel guilty about my words"), vec!["feel", "guilty", "words"]);
    }

    #[test]
    fn overlap_uses_distinct_content_tokens() {
        let vocab: HashSet<String> = ["guilty", "words"].iter().map(|s| s.to_string()).collect();
        assert_eq!(word_overlap("guilty guilty feel", &vocab), Some(0.5));
        assert_eq!(word_overlap("I am", &vocab), None);
        assert_eq!(word_overlap("words, guilty!", &vocab), Some(1.0));
    }
}
