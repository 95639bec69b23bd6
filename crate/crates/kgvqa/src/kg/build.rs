//! Filtering raw triples down to the task-relevant graph.
//!
//! Stages: stop-word endpoint removal, concept-set membership for both
//! endpoints, exact-duplicate removal, then a frequency cap on relation
//! types. Deduplication runs before the frequency count so that feeding the
//! builder a multiset of duplicates cannot change which relations survive.

use crate::error::{Error, Result};
use crate::kg::graph::{Edge, KnowledgeGraph};
use crate::kg::triple::{ConceptSet, StopWords, Triple, TripleSource};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, HashMap};

pub const DEFAULT_RELATION_CAP: usize = 25;

/// Per-source survival counts through the filter stages.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct SourceCounts {
    pub input: usize,
    pub after_stopwords: usize,
    pub after_concept_filter: usize,
    pub after_dedup: usize,
    pub output: usize,
}

/// What the build did, for the JSON build report.
#[derive(Debug, Clone, Serialize)]
pub struct BuildReport {
    pub per_source: Vec<(TripleSource, SourceCounts)>,
    /// Surviving relations with their (deduplicated) frequencies, in id order.
    pub relations: Vec<(String, usize)>,
    /// Relations dropped by the cap, with frequencies.
    pub dropped_relations: Vec<(String, usize)>,
    pub node_count: usize,
    pub edge_count: usize,
}

/// Build the knowledge graph from a triple stream.
///
/// Keeps a triple iff neither endpoint is a stop word, both endpoints are in
/// the concept set, and its relation lands in the `relation_cap` most
/// frequent relations of the surviving set (ties broken lexicographically).
/// Node ids are dense and assigned in lexicographic concept order, so the
/// same inputs always rebuild the identical graph.
pub fn build_graph(
    triples: impl IntoIterator<Item = Triple>,
    concepts: &ConceptSet,
    stopwords: &StopWords,
    relation_cap: usize,
) -> Result<(KnowledgeGraph, BuildReport)> {
    if concepts.is_empty() {
        return Err(Error::InvalidArgument("empty concept set".into()));
    }
    if relation_cap == 0 {
        return Err(Error::InvalidArgument("relation_cap must be >= 1".into()));
    }

    let mut per_source: BTreeMap<TripleSource, SourceCounts> = BTreeMap::new();
    let mut survivors: BTreeSet<Triple> = BTreeSet::new();

    for t in triples {
        let counts = per_source.entry(t.source).or_default();
        counts.input += 1;
        if stopwords.contains(&t.head) || stopwords.contains(&t.tail) {
            continue;
        }
        counts.after_stopwords += 1;
        if !concepts.contains(&t.head) || !concepts.contains(&t.tail) {
            continue;
        }
        counts.after_concept_filter += 1;
        if survivors.insert(t) {
            // counted below once the set is final
        }
    }
    for (source, counts) in per_source.iter_mut() {
        counts.after_dedup = survivors.iter().filter(|t| t.source == *source).count();
    }

    if survivors.is_empty() {
        return Err(Error::EmptyGraph);
    }

    // Relation frequencies over the deduplicated survivors.
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for t in &survivors {
        *freq.entry(t.relation.as_str()).or_default() += 1;
    }
    let mut ranked: Vec<(String, usize)> =
        freq.iter().map(|(r, c)| (r.to_string(), *c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let (kept, dropped) =
        ranked.split_at(relation_cap.min(ranked.len()));
    let kept_set: BTreeSet<&str> = kept.iter().map(|(r, _)| r.as_str()).collect();

    let final_triples: Vec<&Triple> =
        survivors.iter().filter(|t| kept_set.contains(t.relation.as_str())).collect();
    if final_triples.is_empty() {
        return Err(Error::EmptyGraph);
    }
    for (source, counts) in per_source.iter_mut() {
        counts.output = final_triples.iter().filter(|t| t.source == *source).count();
    }

    // Dense ids: nodes lexicographic, relations by (frequency desc, name).
    let node_names: BTreeSet<&str> = final_triples
        .iter()
        .flat_map(|t| [t.head.as_str(), t.tail.as_str()])
        .collect();
    let nodes: Vec<String> = node_names.iter().map(|s| s.to_string()).collect();
    let node_id: HashMap<&str, usize> =
        node_names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let relations: Vec<String> = kept.iter().map(|(r, _)| r.clone()).collect();
    let relation_id: HashMap<&str, usize> =
        relations.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();

    let edges: Vec<Edge> = final_triples
        .iter()
        .map(|t| Edge {
            head: node_id[t.head.as_str()],
            relation: relation_id[t.relation.as_str()],
            tail: node_id[t.tail.as_str()],
            source: t.source,
        })
        .collect();

    let graph = KnowledgeGraph::from_parts(nodes, relations, edges)?;
    let report = BuildReport {
        per_source: per_source.into_iter().collect(),
        relations: kept.to_vec(),
        dropped_relations: dropped.to_vec(),
        node_count: graph.num_nodes(),
        edge_count: graph.num_edges(),
    };
    Ok((graph, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(h: &str, r: &str, tl: &str) -> Triple {
        Triple::new(h, r, tl, TripleSource::Commonsense).unwrap()
    }

    fn concepts(words: &[&str]) -> ConceptSet {
        let mut c = ConceptSet::new();
        for w in words {
            c.insert(w);
        }
        c
    }

    #[test]
    fn stopword_endpoints_dropped() {
        let cs = concepts(&["the", "thing", "dog", "animal"]);
        let sw = StopWords::bundled();
        let (g, report) = build_graph(
            vec![t("the", "is_a", "thing"), t("dog", "is_a", "animal")],
            &cs,
            &sw,
            25,
        )
        .unwrap();
        assert_eq!(g.num_edges(), 1);
        assert!(g.node_id("the").is_none());
        let (_, counts) = report.per_source[0];
        assert_eq!(counts.input, 2);
        assert_eq!(counts.after_stopwords, 1);
    }

    #[test]
    fn both_endpoints_must_be_concepts() {
        let cs = concepts(&["dog", "animal"]);
        let sw = StopWords::bundled();
        let triples = vec![t("dog", "is_a", "animal"), t("dog", "chases", "cat")];
        let (g, _) = build_graph(triples, &cs, &sw, 25).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert!(g.node_id("cat").is_none());
    }

    #[test]
    fn relation_cap_keeps_most_frequent_with_lex_ties() {
        let cs = concepts(&["a", "b"]);
        // avoid real stop words in this fixture: use single letters not in the list
        let sw = StopWords::from_lines("");
        let mut triples = Vec::new();
        // rel_x appears twice, rel_a and rel_b once each -> cap 2 keeps rel_x and rel_a
        triples.push(t("a", "rel_x", "b"));
        triples.push(t("b", "rel_x", "a"));
        triples.push(t("a", "rel_a", "b"));
        triples.push(t("a", "rel_b", "b"));
        let (g, report) = build_graph(triples, &cs, &sw, 2).unwrap();
        assert_eq!(g.relations(), &["rel_x".to_string(), "rel_a".to_string()]);
        assert_eq!(report.dropped_relations, vec![("rel_b".to_string(), 1)]);
        assert_eq!(g.num_edges(), 3);
    }

    #[test]
    fn duplicates_do_not_change_the_build() {
        let cs = concepts(&["a", "b", "c"]);
        let sw = StopWords::from_lines("");
        let base = vec![t("a", "r1", "b"), t("b", "r2", "c"), t("a", "r2", "c")];
        let mut noisy = base.clone();
        noisy.extend(base.clone());
        noisy.extend(base.clone());
        let (g1, _) = build_graph(base, &cs, &sw, 1).unwrap();
        let (g2, _) = build_graph(noisy, &cs, &sw, 1).unwrap();
        assert_eq!(g1.nodes(), g2.nodes());
        assert_eq!(g1.relations(), g2.relations());
        assert_eq!(g1.edges(), g2.edges());
    }

    #[test]
    fn empty_result_is_an_error() {
        let cs = concepts(&["zebra"]);
        let sw = StopWords::bundled();
        assert!(matches!(
            build_graph(vec![t("dog", "is_a", "animal")], &cs, &sw, 25),
            Err(Error::EmptyGraph)
        ));
    }
}
