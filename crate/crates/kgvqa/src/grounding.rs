//! Per-node graph inputs for one (question, image) pair: question
//! indicator, four visual-classifier confidences, word vectors, and the
//! compressed implicit state.

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::numerics::tensor::{Real, Tensor};
use crate::text::ngrams;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::io::BufRead;

/// Number of visual classifier/detector slots.
pub const SYMBOL_SLOTS: usize = 4;

/// Shipped node-input layout: 1 indicator + 4 confidences + 300-d word
/// vector + 128-d compressed implicit state.
pub const NODE_INPUT_DIM: usize = 433;
pub const WORD_VECTOR_DIM: usize = 300;
pub const COMPRESS_DIM: usize = 128;

/// Which visual system produced an observation. Slot order is fixed and is
/// the column order of the confidence block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SymbolSource {
    /// 1000-class object classifier.
    #[serde(rename = "objects-1k")]
    Objects1k,
    /// Scene/place classifier.
    #[serde(rename = "places")]
    Places,
    /// Long-tail object and part detector.
    #[serde(rename = "long-tail")]
    LongTail,
    /// Scene-graph detector (objects, parts, attributes).
    #[serde(rename = "scene-graph")]
    SceneGraph,
}

impl SymbolSource {
    pub const ALL: [SymbolSource; SYMBOL_SLOTS] = [
        SymbolSource::Objects1k,
        SymbolSource::Places,
        SymbolSource::LongTail,
        SymbolSource::SceneGraph,
    ];

    pub fn slot(&self) -> usize {
        match self {
            SymbolSource::Objects1k => 0,
            SymbolSource::Places => 1,
            SymbolSource::LongTail => 2,
            SymbolSource::SceneGraph => 3,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SymbolSource::Objects1k => "objects-1k",
            SymbolSource::Places => "places",
            SymbolSource::LongTail => "long-tail",
            SymbolSource::SceneGraph => "scene-graph",
        }
    }

    pub fn parse(s: &str) -> Result<SymbolSource> {
        SymbolSource::ALL
            .iter()
            .find(|v| v.as_str() == s)
            .copied()
            .ok_or_else(|| Error::UnknownSymbolSource(s.to_string()))
    }
}

/// One detection: a concept with a confidence from one visual system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VisualSymbolObservation {
    pub concept: String,
    pub confidence: f64,
    pub source: SymbolSource,
}

impl VisualSymbolObservation {
    pub fn new(concept: &str, confidence: f64, source: SymbolSource) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidArgument(format!(
                "confidence {} outside [0, 1]",
                confidence
            )));
        }
        Ok(VisualSymbolObservation {
            concept: crate::kg::normalize_concept(concept),
            confidence,
            source,
        })
    }
}

/// word → fixed-dimension vector. Unknown words look up to the zero vector.
#[derive(Debug, Clone)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> WordVectorTable {
        WordVectorTable { dim, vectors: HashMap::new() }
    }

    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "WordVectorTable::insert",
                detail: format!("{}: {} dims, table is {}", word, vector.len(), self.dim),
            });
        }
        self.vectors.insert(word.to_lowercase(), vector);
        Ok(())
    }

    /// Text lines "word v1 v2 ... vD". The first line fixes the dimension.
    pub fn from_reader<R: BufRead>(r: R) -> Result<WordVectorTable> {
        let mut table: Option<WordVectorTable> = None;
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts
                .next()
                .ok_or_else(|| Error::Data("empty word-vector line".into()))?;
            let vals: std::result::Result<Vec<f64>, _> =
                parts.map(str::parse::<f64>).collect();
            let vals =
                vals.map_err(|e| Error::Data(format!("bad vector for {}: {}", word, e)))?;
            let t = table.get_or_insert_with(|| WordVectorTable::new(vals.len()));
            t.insert(word, vals)?;
        }
        table.ok_or_else(|| Error::Data("empty word-vector file".into()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word)
    }

    /// Vector for a word; zeros when out of table.
    pub fn get(&self, word: &str) -> Vec<f64> {
        self.vectors.get(word).cloned().unwrap_or_else(|| vec![0.0; self.dim])
    }
}

/// n×433 (shipped) per-node input matrix, column layout
/// [indicator | conf×4 | wordvec | implicit].
#[derive(Debug, Clone)]
pub struct NodeInputMatrix<T: Real> {
    tensor: Tensor<T>,
    word_dim: usize,
    implicit_dim: usize,
}

impl<T: Real> NodeInputMatrix<T> {
    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn width(&self) -> usize {
        self.tensor.cols()
    }

    pub fn rows(&self) -> usize {
        self.tensor.rows()
    }

    pub fn word_dim(&self) -> usize {
        self.word_dim
    }

    pub fn implicit_dim(&self) -> usize {
        self.implicit_dim
    }
}

/// 0/1 per node: does the node's concept appear in the question as a token
/// or contiguous n-gram (n ≤ ngram_cap)?
pub fn question_indicator<T: Real>(
    question_tokens: &[String],
    graph: &KnowledgeGraph,
    ngram_cap: usize,
) -> Tensor<T> {
    let grams: HashSet<String> = ngrams(question_tokens, ngram_cap).into_iter().collect();
    let n = graph.num_nodes();
    let mut out = Tensor::zeros(vec![n, 1]);
    for i in 0..n {
        if grams.contains(graph.node_name(i)) {
            out.data_mut()[i] = T::one();
        }
    }
    out
}

/// n×4 confidences: cell (i, slot) is the max confidence over observations
/// of node i's concept in that slot, 0 if undetected. Returns the count of
/// observations whose concept is not a graph node.
pub fn symbol_confidences<T: Real>(
    observations: &[VisualSymbolObservation],
    graph: &KnowledgeGraph,
) -> (Tensor<T>, usize) {
    let n = graph.num_nodes();
    let mut out = Tensor::zeros(vec![n, SYMBOL_SLOTS]);
    let mut out_of_graph = 0;
    for obs in observations {
        match graph.node_id(&obs.concept) {
            Some(i) => {
                let slot = obs.source.slot();
                let cur = out.at(i, slot);
                let v = T::from_f64(obs.confidence);
                if v > cur {
                    out.set(i, slot, v);
                }
            }
            None => out_of_graph += 1,
        }
    }
    (out, out_of_graph)
}

/// n×dim word-vector block: per node, the mean of its in-table word
/// vectors. Out-of-table words are excluded from the mean; an all-OOV
/// concept gets the zero vector.
pub fn word_vectors<T: Real>(graph: &KnowledgeGraph, table: &WordVectorTable) -> Tensor<T> {
    let n = graph.num_nodes();
    let d = table.dim();
    let mut out = Tensor::zeros(vec![n, d]);
    for i in 0..n {
        let words: Vec<&str> = graph.node_name(i).split(' ').collect();
        let in_table: Vec<&str> =
            words.iter().copied().filter(|w| table.contains(*w)).collect();
        if in_table.is_empty() {
            continue;
        }
        let inv = 1.0 / in_table.len() as f64;
        for w in in_table {
            let vec = table.get(w);
            for (j, v) in vec.iter().enumerate() {
                let cur = out.at(i, j);
                out.set(i, j, cur + T::from_f64(v * inv));
            }
        }
    }
    out
}

/// Column-concatenate the four blocks; the implicit vector is broadcast to
/// every node row.
pub fn assemble<T: Real>(
    indicator: &Tensor<T>,
    confidences: &Tensor<T>,
    wordvecs: &Tensor<T>,
    implicit: &Tensor<T>,
) -> Result<NodeInputMatrix<T>> {
    let n = indicator.rows();
    if indicator.cols() != 1 {
        return Err(Error::ShapeMismatch {
            op: "assemble",
            detail: format!("indicator must be n x 1, got {:?}", indicator.shape()),
        });
    }
    if confidences.rows() != n || confidences.cols() != SYMBOL_SLOTS {
        return Err(Error::ShapeMismatch {
            op: "assemble",
            detail: format!("confidences {:?}, expected {}x{}", confidences.shape(), n, SYMBOL_SLOTS),
        });
    }
    if wordvecs.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "assemble",
            detail: format!("wordvec rows {} != {}", wordvecs.rows(), n),
        });
    }
    if implicit.shape().len() != 2 || implicit.rows() != 1 {
        return Err(Error::ShapeMismatch {
            op: "assemble",
            detail: format!("implicit must be 1 x d, got {:?}", implicit.shape()),
        });
    }
    let word_dim = wordvecs.cols();
    let implicit_dim = implicit.cols();
    let width = 1 + SYMBOL_SLOTS + word_dim + implicit_dim;
    let mut data = Vec::with_capacity(n * width);
    for i in 0..n {
        data.push(indicator.at(i, 0));
        for s in 0..SYMBOL_SLOTS {
            data.push(confidences.at(i, s));
        }
        data.extend_from_slice(&wordvecs.data()[i * word_dim..(i + 1) * word_dim]);
        data.extend_from_slice(implicit.data());
    }
    Ok(NodeInputMatrix {
        tensor: Tensor::new(vec![n, width], data)?,
        word_dim,
        implicit_dim,
    })
}

/// The static (question+image dependent, implicit-independent) block
/// [indicator | conf | wordvec], used by the model to splice the
/// differentiable implicit columns on the tape.
pub fn assemble_static<T: Real>(
    indicator: &Tensor<T>,
    confidences: &Tensor<T>,
    wordvecs: &Tensor<T>,
) -> Result<Tensor<T>> {
    let n = indicator.rows();
    if confidences.rows() != n || wordvecs.rows() != n || indicator.cols() != 1 {
        return Err(Error::ShapeMismatch {
            op: "assemble_static",
            detail: format!(
                "rows disagree: {:?} {:?} {:?}",
                indicator.shape(),
                confidences.shape(),
                wordvecs.shape()
            ),
        });
    }
    let wd = wordvecs.cols();
    let width = 1 + SYMBOL_SLOTS + wd;
    let mut data = Vec::with_capacity(n * width);
    for i in 0..n {
        data.push(indicator.at(i, 0));
        for s in 0..SYMBOL_SLOTS {
            data.push(confidences.at(i, s));
        }
        data.extend_from_slice(&wordvecs.data()[i * wd..(i + 1) * wd]);
    }
    Tensor::new(vec![n, width], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Edge, TripleSource};
    use crate::text::tokenize;

    fn graph(names: &[&str]) -> KnowledgeGraph {
        // connect consecutive nodes so from_parts accepts the node table
        let edges: Vec<Edge> = (1..names.len())
            .map(|i| Edge { head: i - 1, relation: 0, tail: i, source: TripleSource::Commonsense })
            .collect();
        KnowledgeGraph::from_parts(
            names.iter().map(|s| s.to_string()).collect(),
            vec!["r".into()],
            edges,
        )
        .unwrap()
    }

    #[test]
    fn indicator_matches_tokens_and_ngrams() {
        let g = graph(&["fruit", "pony tail", "zebra"]);
        let toks = tokenize("what fruit is on the pony tail");
        let ind = question_indicator::<f64>(&toks, &g, 3);
        assert_eq!(ind.data(), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn indicator_ignores_duplicates_and_is_idempotent() {
        let g = graph(&["fruit", "melon"]);
        let once = question_indicator::<f64>(&tokenize("fruit fruit fruit"), &g, 3);
        let single = question_indicator::<f64>(&tokenize("fruit"), &g, 3);
        assert_eq!(once.data(), single.data());
    }

    #[test]
    fn confidences_take_max_and_count_out_of_graph() {
        let g = graph(&["dog", "cat"]);
        let obs = vec![
            VisualSymbolObservation::new("dog", 0.3, SymbolSource::LongTail).unwrap(),
            VisualSymbolObservation::new("dog", 0.8, SymbolSource::LongTail).unwrap(),
            VisualSymbolObservation::new("unicorn", 0.9, SymbolSource::Places).unwrap(),
        ];
        let (m, oog) = symbol_confidences::<f64>(&obs, &g);
        assert_eq!(m.at(0, SymbolSource::LongTail.slot()), 0.8);
        assert_eq!(m.at(0, SymbolSource::Objects1k.slot()), 0.0);
        assert_eq!(oog, 1);
    }

    #[test]
    fn no_observations_give_zero_matrix() {
        let g = graph(&["dog", "cat"]);
        let (m, oog) = symbol_confidences::<f64>(&[], &g);
        assert!(m.data().iter().all(|v| *v == 0.0));
        assert_eq!(oog, 0);
    }

    #[test]
    fn confidence_bounds_checked() {
        assert!(VisualSymbolObservation::new("dog", 1.2, SymbolSource::Places).is_err());
        assert!(VisualSymbolObservation::new("dog", -0.1, SymbolSource::Places).is_err());
    }

    #[test]
    fn word_vectors_average_in_table_words_only() {
        let g = graph(&["dog", "pony tail", "void concept"]);
        let mut table = WordVectorTable::new(2);
        table.insert("dog", vec![1.0, 2.0]).unwrap();
        table.insert("pony", vec![2.0, 4.0]).unwrap();
        table.insert("tail", vec![4.0, 8.0]).unwrap();
        let m = word_vectors::<f64>(&g, &table);
        assert_eq!(&m.data()[0..2], &[1.0, 2.0], "single in-table word is verbatim");
        assert_eq!(&m.data()[2..4], &[3.0, 6.0], "(u+v)/2 for two-word concepts");
        assert_eq!(&m.data()[4..6], &[0.0, 0.0], "all-OOV concept is zero");
    }

    #[test]
    fn partial_oov_averages_over_in_table_only() {
        let g = graph(&["pony tail", "x"]);
        let mut table = WordVectorTable::new(2);
        table.insert("pony", vec![2.0, 4.0]).unwrap();
        let m = word_vectors::<f64>(&g, &table);
        assert_eq!(&m.data()[0..2], &[2.0, 4.0], "mean over the one in-table word");
    }

    #[test]
    fn assemble_layout_and_broadcast() {
        let n = 3;
        let ind = Tensor::<f64>::new(vec![n, 1], vec![1.0, 0.0, 1.0]).unwrap();
        let conf = Tensor::zeros(vec![n, 4]);
        let wv = Tensor::full(vec![n, 2], 0.5);
        let imp = Tensor::new(vec![1, 3], vec![7.0, 8.0, 9.0]).unwrap();
        let x = assemble(&ind, &conf, &wv, &imp).unwrap();
        assert_eq!(x.width(), 1 + 4 + 2 + 3);
        for i in 0..n {
            let row = &x.tensor().data()[i * x.width()..(i + 1) * x.width()];
            assert_eq!(&row[7..10], &[7.0, 8.0, 9.0], "implicit block broadcast to row {}", i);
        }
        assert_eq!(x.tensor().at(1, 0), 0.0);
    }

    #[test]
    fn assemble_rejects_row_mismatch() {
        let ind = Tensor::<f64>::zeros(vec![3, 1]);
        let conf = Tensor::zeros(vec![2, 4]);
        let wv = Tensor::zeros(vec![3, 2]);
        let imp = Tensor::zeros(vec![1, 3]);
        assert!(assemble(&ind, &conf, &wv, &imp).is_err());
    }

    #[test]
    fn shipped_layout_is_433() {
        assert_eq!(1 + SYMBOL_SLOTS + WORD_VECTOR_DIM + COMPRESS_DIM, NODE_INPUT_DIM);
    }
}
