//! The filtered knowledge graph: dense node ids, a capped relation table,
//! and typed directed edges. Immutable once built.

use crate::error::{Error, Result};
use crate::kg::triple::TripleSource;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const GRAPH_FORMAT_VERSION: u32 = 1;

/// One directed typed edge between dense node ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
    pub source: TripleSource,
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    nodes: Vec<String>,
    node_ids: HashMap<String, usize>,
    relations: Vec<String>,
    edges: Vec<Edge>,
    /// Per relation: (head, tail) pairs, sorted. Derived, not serialized.
    by_relation: Vec<Vec<(usize, usize)>>,
}

impl KnowledgeGraph {
    /// Assemble a graph from parts. Edges are validated, deduplicated and
    /// sorted so that identical inputs always produce identical graphs.
    pub fn from_parts(
        nodes: Vec<String>,
        relations: Vec<String>,
        edges: Vec<Edge>,
    ) -> Result<KnowledgeGraph> {
        if nodes.is_empty() || edges.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let mut node_ids = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if node_ids.insert(n.clone(), i).is_some() {
                return Err(Error::GraphFormat(format!("duplicate node {}", n)));
            }
        }
        let mut dedup = BTreeSet::new();
        for e in &edges {
            if e.head >= nodes.len() || e.tail >= nodes.len() {
                return Err(Error::GraphFormat(format!(
                    "edge endpoint out of range: {:?}",
                    e
                )));
            }
            if e.relation >= relations.len() {
                return Err(Error::GraphFormat(format!("edge relation out of range: {:?}", e)));
            }
            dedup.insert(*e);
        }
        let edges: Vec<Edge> = dedup.into_iter().collect();
        let mut by_relation = vec![Vec::new(); relations.len()];
        for e in &edges {
            by_relation[e.relation].push((e.head, e.tail));
        }
        Ok(KnowledgeGraph { nodes, node_ids, relations, edges, by_relation })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node_id(&self, concept: &str) -> Option<usize> {
        self.node_ids.get(concept).copied()
    }

    pub fn node_name(&self, id: usize) -> &str {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn relation_name(&self, id: usize) -> &str {
        &self.relations[id]
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// (head, tail) pairs of one relation, sorted.
    pub fn relation_edges(&self, relation: usize) -> &[(usize, usize)] {
        &self.by_relation[relation]
    }

    /// Edge count per relation id.
    pub fn relation_counts(&self) -> Vec<usize> {
        self.by_relation.iter().map(Vec::len).collect()
    }

    /// All edges touching a node, for explanation traces.
    pub fn incident_edges(&self, node: usize) -> Vec<&Edge> {
        self.edges.iter().filter(|e| e.head == node || e.tail == node).collect()
    }

    /// Sorted node-name list (the canonical id order used by the builder).
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        let header = GraphHeader {
            format_version: GRAPH_FORMAT_VERSION,
            node_count: self.nodes.len(),
            edge_count: self.edges.len(),
            relation_count: self.relations.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n#relations\n")?;
        for r in &self.relations {
            writeln!(w, "{}", r)?;
        }
        w.write_all(b"#nodes\n")?;
        for n in &self.nodes {
            writeln!(w, "{}", n)?;
        }
        w.write_all(b"#edges\n")?;
        for e in &self.edges {
            writeln!(w, "{}\t{}\t{}\t{}", e.head, e.relation, e.tail, e.source.as_str())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<KnowledgeGraph> {
        let mut lines = BufReader::new(std::fs::File::open(path)?).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::GraphFormat("empty graph file".into()))??;
        let header: GraphHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::GraphFormat(format!("bad header: {}", e)))?;
        if header.format_version != GRAPH_FORMAT_VERSION {
            return Err(Error::GraphFormat(format!(
                "unsupported graph format version {}",
                header.format_version
            )));
        }
        let expect = |lines: &mut std::io::Lines<BufReader<std::fs::File>>, tag: &str| -> Result<()> {
            match lines.next() {
                Some(Ok(l)) if l == tag => Ok(()),
                other => Err(Error::GraphFormat(format!(
                    "expected {} marker, got {:?}",
                    tag, other
                ))),
            }
        };
        expect(&mut lines, "#relations")?;
        let mut relations = Vec::with_capacity(header.relation_count);
        for _ in 0..header.relation_count {
            relations.push(lines.next().ok_or_else(|| {
                Error::GraphFormat("truncated relation table".into())
            })??);
        }
        expect(&mut lines, "#nodes")?;
        let mut nodes = Vec::with_capacity(header.node_count);
        for _ in 0..header.node_count {
            nodes.push(
                lines
                    .next()
                    .ok_or_else(|| Error::GraphFormat("truncated node table".into()))??,
            );
        }
        expect(&mut lines, "#edges")?;
        let mut edges = Vec::with_capacity(header.edge_count);
        for _ in 0..header.edge_count {
            let line = lines
                .next()
                .ok_or_else(|| Error::GraphFormat("truncated edge list".into()))??;
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::GraphFormat(format!("bad edge record: {}", line)));
            }
            let parse_idx = |s: &str| -> Result<usize> {
                s.parse().map_err(|_| Error::GraphFormat(format!("bad id in edge: {}", line)))
            };
            let source = TripleSource::parse(cols[3])
                .ok_or_else(|| Error::GraphFormat(format!("unknown source: {}", cols[3])))?;
            edges.push(Edge {
                head: parse_idx(cols[0])?,
                relation: parse_idx(cols[1])?,
                tail: parse_idx(cols[2])?,
                source,
            });
        }
        KnowledgeGraph::from_parts(nodes, relations, edges)
    }

    /// New graph keeping only edges from the given sources. Node and
    /// relation tables are preserved so ids stay stable across ablations.
    pub fn filter_sources(&self, keep: &[TripleSource]) -> Result<KnowledgeGraph> {
        let edges: Vec<Edge> =
            self.edges.iter().filter(|e| keep.contains(&e.source)).copied().collect();
        if edges.is_empty() {
            return Err(Error::EmptyGraph);
        }
        KnowledgeGraph::from_parts(self.nodes.clone(), self.relations.clone(), edges)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphHeader {
    format_version: u32,
    node_count: usize,
    edge_count: usize,
    relation_count: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn toy() -> KnowledgeGraph {
        KnowledgeGraph::from_parts(
            vec!["animal".into(), "dog".into(), "whiskers".into()],
            vec!["is_a".into(), "has_part".into()],
            vec![
                Edge { head: 1, relation: 0, tail: 0, source: TripleSource::Commonsense },
                Edge { head: 1, relation: 1, tail: 2, source: TripleSource::HasPart },
            ],
        )
        .unwrap()
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = KnowledgeGraph::from_parts(
            vec!["a".into(), "b".into()],
            vec!["r".into()],
            vec![
                Edge { head: 0, relation: 0, tail: 1, source: TripleSource::Commonsense },
                Edge { head: 0, relation: 0, tail: 1, source: TripleSource::Commonsense },
            ],
        )
        .unwrap();
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn out_of_range_edge_rejected() {
        let r = KnowledgeGraph::from_parts(
            vec!["a".into()],
            vec!["r".into()],
            vec![Edge { head: 0, relation: 0, tail: 5, source: TripleSource::Commonsense }],
        );
        assert!(r.is_err());
    }

    #[test]
    fn save_load_roundtrip_is_byte_identical() {
        let dir = tempdir().unwrap();
        let g = toy();
        let p1 = dir.path().join("a.kg");
        let p2 = dir.path().join("b.kg");
        g.save(&p1).unwrap();
        let g2 = KnowledgeGraph::load(&p1).unwrap();
        g2.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(g2.num_nodes(), 3);
        assert_eq!(g2.relation_edges(1), &[(1, 2)]);
    }

    #[test]
    fn source_filter_keeps_tables() {
        let g = toy();
        let only_parts = g.filter_sources(&[TripleSource::HasPart]).unwrap();
        assert_eq!(only_parts.num_nodes(), 3);
        assert_eq!(only_parts.num_edges(), 1);
        assert_eq!(only_parts.num_relations(), 2);
        assert!(g.filter_sources(&[TripleSource::Encyclopedic]).is_err());
    }
}
