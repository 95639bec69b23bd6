//! Knowledge triples, concept normalization, concept sets and stop words.

use crate::text::{ngrams, tokenize};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;

/// Which knowledge source a triple came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TripleSource {
    #[serde(rename = "encyclopedic")]
    Encyclopedic,
    #[serde(rename = "commonsense")]
    Commonsense,
    #[serde(rename = "scene-graph")]
    SceneGraph,
    #[serde(rename = "has-part")]
    HasPart,
}

impl TripleSource {
    pub const ALL: [TripleSource; 4] = [
        TripleSource::Encyclopedic,
        TripleSource::Commonsense,
        TripleSource::SceneGraph,
        TripleSource::HasPart,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TripleSource::Encyclopedic => "encyclopedic",
            TripleSource::Commonsense => "commonsense",
            TripleSource::SceneGraph => "scene-graph",
            TripleSource::HasPart => "has-part",
        }
    }

    pub fn parse(s: &str) -> Option<TripleSource> {
        TripleSource::ALL.iter().find(|t| t.as_str() == s).copied()
    }
}

impl fmt::Display for TripleSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Normalize a concept string: lowercase, underscores to spaces, collapse
/// internal whitespace, trim. No stemming.
pub fn normalize_concept(raw: &str) -> String {
    let lowered = raw.to_lowercase().replace('_', " ");
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalize a relation string: lowercase and trim. Underscores are part of
/// relation names (`is_a`, `has_part`) and are kept.
pub fn normalize_relation(raw: &str) -> String {
    raw.trim().to_lowercase()
}

/// One typed, directed, source-tagged fact over string concepts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub source: TripleSource,
}

impl Triple {
    /// Build a normalized triple; `None` if any field normalizes to empty.
    pub fn new(head: &str, relation: &str, tail: &str, source: TripleSource) -> Option<Triple> {
        let head = normalize_concept(head);
        let relation = normalize_relation(relation);
        let tail = normalize_concept(tail);
        if head.is_empty() || relation.is_empty() || tail.is_empty() {
            return None;
        }
        Some(Triple { head, relation, tail, source })
    }
}

/// Task-relevant concept strings: question tokens/n-grams, answer vocabulary
/// and visual symbol labels, all normalized.
#[derive(Debug, Clone, Default)]
pub struct ConceptSet {
    concepts: HashSet<String>,
}

impl ConceptSet {
    pub fn new() -> Self {
        ConceptSet::default()
    }

    pub fn insert(&mut self, concept: &str) {
        let c = normalize_concept(concept);
        if !c.is_empty() {
            self.concepts.insert(c);
        }
    }

    pub fn contains(&self, concept: &str) -> bool {
        self.concepts.contains(concept)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    /// One concept per line.
    pub fn from_reader<R: BufRead>(r: R) -> std::io::Result<ConceptSet> {
        let mut set = ConceptSet::new();
        for line in r.lines() {
            set.insert(&line?);
        }
        Ok(set)
    }

    /// Collect concepts from question texts (tokens and n-grams up to
    /// `ngram_cap`), answer strings, and visual symbol labels.
    pub fn collect<'a>(
        questions: impl IntoIterator<Item = &'a str>,
        answers: impl IntoIterator<Item = &'a str>,
        visual_labels: impl IntoIterator<Item = &'a str>,
        ngram_cap: usize,
    ) -> ConceptSet {
        let mut set = ConceptSet::new();
        for q in questions {
            let toks = tokenize(q);
            for gram in ngrams(&toks, ngram_cap) {
                set.insert(&gram);
            }
        }
        for a in answers {
            set.insert(a);
        }
        for v in visual_labels {
            set.insert(v);
        }
        set
    }

    /// Concepts in sorted order, for deterministic serialization.
    pub fn sorted(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.concepts.iter().map(String::as_str).collect();
        v.sort_unstable();
        v
    }
}

/// Fixed stop-word list. The bundled list is version-pinned in the repo;
/// callers may substitute their own.
#[derive(Debug, Clone)]
pub struct StopWords {
    words: HashSet<String>,
}

impl StopWords {
    /// The bundled English function-word list.
    pub fn bundled() -> StopWords {
        StopWords::from_lines(include_str!("stopwords_en.txt"))
    }

    pub fn from_lines(text: &str) -> StopWords {
        let words = text
            .lines()
            .map(normalize_concept)
            .filter(|w| !w.is_empty())
            .collect();
        StopWords { words }
    }

    pub fn from_reader<R: BufRead>(r: R) -> std::io::Result<StopWords> {
        let mut words = HashSet::new();
        for line in r.lines() {
            let w = normalize_concept(&line?);
            if !w.is_empty() {
                words.insert(w);
            }
        }
        Ok(StopWords { words })
    }

    pub fn contains(&self, concept: &str) -> bool {
        self.words.contains(concept)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_concept("Tadeusz_Borowski"), "tadeusz borowski");
        assert_eq!(normalize_concept("  Pony   Tail "), "pony tail");
        assert_eq!(normalize_relation(" Is_A "), "is_a");
    }

    #[test]
    fn empty_fields_rejected() {
        assert!(Triple::new("", "is_a", "x", TripleSource::Commonsense).is_none());
        assert!(Triple::new("x", "is_a", "_", TripleSource::Commonsense).is_none());
        assert!(Triple::new("dog", "is_a", "animal", TripleSource::Commonsense).is_some());
    }

    #[test]
    fn bundled_stopwords_contain_function_words() {
        let sw = StopWords::bundled();
        for w in ["the", "is", "a", "of"] {
            assert!(sw.contains(w), "missing stop word {}", w);
        }
        assert!(!sw.contains("dog"));
    }

    #[test]
    fn concept_collection_includes_ngrams() {
        let set = ConceptSet::collect(
            ["What is a pony tail?"],
            ["haircut"],
            ["person"],
            3,
        );
        assert!(set.contains("pony tail"));
        assert!(set.contains("pony"));
        assert!(set.contains("haircut"));
        assert!(set.contains("person"));
        assert!(!set.contains("ponytail"));
    }
}
