//! Tokenization and n-gram helpers shared by the concept pipeline and the
//! question-indicator grounding.

/// Lowercase and split on non-alphanumeric boundaries.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// All contiguous n-grams of the token list for n in 1..=max_n, joined by
/// single spaces.
pub fn ngrams(tokens: &[String], max_n: usize) -> Vec<String> {
    let mut out = Vec::new();
    for n in 1..=max_n.min(tokens.len()) {
        for window in tokens.windows(n) {
            out.push(window.join(" "));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowers_and_splits() {
        assert_eq!(tokenize("What's THIS, a pony-tail?"), ["what", "s", "this", "a", "pony", "tail"]);
    }

    #[test]
    fn ngrams_are_contiguous() {
        let toks: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let grams = ngrams(&toks, 2);
        assert_eq!(grams, ["a", "b", "c", "a b", "b c"]);
    }

    #[test]
    fn ngram_cap_respected() {
        let toks: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        assert!(!ngrams(&toks, 3).contains(&"a b c".to_string()));
        assert_eq!(ngrams(&toks, 3).len(), 3);
    }
}
