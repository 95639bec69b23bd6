//! Dual answer heads and late fusion.
//!
//! The implicit head scores the whole answer vocabulary from the pooled
//! hidden state; the symbolic head scores only answers that exist as graph
//! nodes, via a bilinear interaction between each node's hidden state and
//! the implicit state. The final answer is the highest-scoring entry across
//! both heads, tie going to the implicit head.

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::numerics::store::{BoundParams, ParameterStore};
use crate::numerics::tape::{Tape, TensorId};
use crate::numerics::tensor::{Real, Tensor};
use rand::Rng;
use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

pub const DEFAULT_ANSWER_MIN_COUNT: usize = 10;

/// Ordered answer list: every entry appeared at least `min_count` times in
/// the training annotations. Order is frequency-descending with
/// lexicographic tie-break, so index + 1 is the answer's frequency rank.
#[derive(Debug, Clone)]
pub struct AnswerVocab {
    answers: Vec<String>,
    index: HashMap<String, usize>,
}

impl AnswerVocab {
    /// Build from (answer, annotation-count) pairs; counts for repeated
    /// answers accumulate.
    pub fn build<'a>(
        annotations: impl IntoIterator<Item = (&'a str, usize)>,
        min_count: usize,
    ) -> AnswerVocab {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for (answer, count) in annotations {
            let norm = crate::kg::normalize_concept(answer);
            if !norm.is_empty() {
                *counts.entry(norm).or_default() += count;
            }
        }
        let mut kept: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        AnswerVocab::from_ordered(kept.into_iter().map(|(a, _)| a))
    }

    fn from_ordered(answers: impl IntoIterator<Item = String>) -> AnswerVocab {
        let answers: Vec<String> = answers.into_iter().collect();
        let index = answers.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        AnswerVocab { answers, index }
    }

    /// One answer per line, canonical order.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<AnswerVocab> {
        let file = std::fs::File::open(path)?;
        let mut answers = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            let a = line?;
            if !a.trim().is_empty() {
                answers.push(a.trim().to_string());
            }
        }
        Ok(AnswerVocab::from_ordered(answers))
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, self.answers.join("\n") + "\n")?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn answer(&self, idx: usize) -> &str {
        &self.answers[idx]
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn index_of(&self, answer: &str) -> Option<usize> {
        self.index.get(answer).copied()
    }

    /// Frequency rank, 1 = most common.
    pub fn rank(&self, idx: usize) -> usize {
        idx + 1
    }
}

/// vocab index → graph node id, for answers that exist as graph concepts.
#[derive(Debug, Clone)]
pub struct AnswerNodeMap {
    /// Parallel to the vocab: node id or absent.
    node_for: Vec<Option<usize>>,
    /// (vocab index, node id) for mapped answers, in vocab order.
    mapped: Vec<(usize, usize)>,
}

impl AnswerNodeMap {
    pub fn build(vocab: &AnswerVocab, graph: &KnowledgeGraph) -> AnswerNodeMap {
        let node_for: Vec<Option<usize>> =
            vocab.answers().iter().map(|a| graph.node_id(a)).collect();
        let mapped = node_for
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.map(|node| (i, node)))
            .collect();
        AnswerNodeMap { node_for, mapped }
    }

    /// Map with no graph; every answer is unmapped (implicit-only model).
    pub fn unmapped(vocab_len: usize) -> AnswerNodeMap {
        AnswerNodeMap { node_for: vec![None; vocab_len], mapped: Vec::new() }
    }

    pub fn node_of(&self, vocab_idx: usize) -> Option<usize> {
        self.node_for[vocab_idx]
    }

    pub fn mapped(&self) -> &[(usize, usize)] {
        &self.mapped
    }

    pub fn mapped_vocab_indices(&self) -> Vec<usize> {
        self.mapped.iter().map(|(v, _)| *v).collect()
    }

    pub fn mapped_node_ids(&self) -> Vec<usize> {
        self.mapped.iter().map(|(_, n)| *n).collect()
    }

    pub fn num_mapped(&self) -> usize {
        self.mapped.len()
    }
}

pub mod names {
    pub const IMPLICIT_W: &str = "head.implicit.w";
    pub const IMPLICIT_B: &str = "head.implicit.b";
    pub const SYMBOLIC_WS: &str = "head.symbolic.ws";
    pub const SYMBOLIC_BS: &str = "head.symbolic.bs";
    pub const SYMBOLIC_WZ: &str = "head.symbolic.wz";
    pub const SYMBOLIC_BZ: &str = "head.symbolic.bz";
    pub const SYMBOLIC_LINEAR_W: &str = "head.symbolic_linear.w";
    pub const SYMBOLIC_LINEAR_B: &str = "head.symbolic_linear.b";
}

pub fn init_implicit_head<T: Real, R: Rng>(
    store: &mut ParameterStore<T>,
    d_z: usize,
    vocab_len: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert_fan_in(names::IMPLICIT_W, vec![d_z, vocab_len], rng)?;
    store.insert(names::IMPLICIT_B, Tensor::zeros(vec![1, vocab_len]))?;
    Ok(())
}

/// Bilinear symbolic head: projections of node state and implicit state
/// share the inner dimension `fusion_dim`.
///
/// The two projections multiply into a `fusion_dim`-term inner product, so
/// plain fan-in scaling would start the logits at O(sqrt(fusion_dim)) and
/// saturate the sigmoid before training begins. The init divides each
/// projection's scale by fusion_dim^(1/4) to keep initial logits O(1).
pub fn init_symbolic_head<T: Real, R: Rng>(
    store: &mut ParameterStore<T>,
    node_hidden: usize,
    d_z: usize,
    fusion_dim: usize,
    rng: &mut R,
) -> Result<()> {
    let damp = (fusion_dim.max(1) as f64).sqrt().sqrt();
    let scale = |fan_in: usize| (6.0 / fan_in.max(1) as f64).sqrt() / damp;
    store.insert_uniform(names::SYMBOLIC_WS, vec![node_hidden, fusion_dim], scale(node_hidden), rng)?;
    store.insert(names::SYMBOLIC_BS, Tensor::zeros(vec![1, fusion_dim]))?;
    store.insert_uniform(names::SYMBOLIC_WZ, vec![d_z, fusion_dim], scale(d_z), rng)?;
    store.insert(names::SYMBOLIC_BZ, Tensor::zeros(vec![1, fusion_dim]))?;
    Ok(())
}

/// "No late fusion" ablation head: a plain linear layer over the node state.
pub fn init_symbolic_linear_head<T: Real, R: Rng>(
    store: &mut ParameterStore<T>,
    node_hidden: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert_fan_in(names::SYMBOLIC_LINEAR_W, vec![node_hidden, 1], rng)?;
    store.insert(names::SYMBOLIC_LINEAR_B, Tensor::zeros(vec![1, 1]))?;
    Ok(())
}

/// σ(W z + b) over the whole answer vocabulary. Output 1×a.
pub fn implicit_head<T: Real>(
    tape: &mut Tape<T>,
    z: TensorId,
    bound: &BoundParams,
) -> Result<TensorId> {
    let w = bound.id(names::IMPLICIT_W)?;
    let b = bound.id(names::IMPLICIT_B)?;
    let lin = tape.matmul(z, w)?;
    let lin = tape.add_row_broadcast(lin, b)?;
    tape.sigmoid(lin)
}

/// σ((Wˢ z_i + bˢ)ᵀ (Wᶻ z + bᶻ)) for every mapped answer node i.
/// Output m×1, rows in `map.mapped()` order.
pub fn symbolic_head<T: Real>(
    tape: &mut Tape<T>,
    node_hidden: TensorId,
    z: TensorId,
    map: &AnswerNodeMap,
    bound: &BoundParams,
) -> Result<TensorId> {
    if map.num_mapped() == 0 {
        return Err(Error::InvalidArgument("symbolic head needs mapped answers".into()));
    }
    let gm = tape.gather_rows(node_hidden, map.mapped_node_ids())?;
    let ws = bound.id(names::SYMBOLIC_WS)?;
    let bs = bound.id(names::SYMBOLIC_BS)?;
    let wz = bound.id(names::SYMBOLIC_WZ)?;
    let bz = bound.id(names::SYMBOLIC_BZ)?;
    let p = tape.matmul(gm, ws)?;
    let p = tape.add_row_broadcast(p, bs)?;
    let q = tape.matmul(z, wz)?;
    let q = tape.add_row_broadcast(q, bz)?;
    let qt = tape.transpose(q)?;
    let scores = tape.matmul(p, qt)?;
    tape.sigmoid(scores)
}

/// σ(linear(z_i)) per mapped node: the "no late fusion" replacement that
/// ignores the implicit state.
pub fn symbolic_linear_head<T: Real>(
    tape: &mut Tape<T>,
    node_hidden: TensorId,
    map: &AnswerNodeMap,
    bound: &BoundParams,
) -> Result<TensorId> {
    if map.num_mapped() == 0 {
        return Err(Error::InvalidArgument("symbolic head needs mapped answers".into()));
    }
    let gm = tape.gather_rows(node_hidden, map.mapped_node_ids())?;
    let w = bound.id(names::SYMBOLIC_LINEAR_W)?;
    let b = bound.id(names::SYMBOLIC_LINEAR_B)?;
    let lin = tape.matmul(gm, w)?;
    let lin = tape.add_row_broadcast(lin, b)?;
    tape.sigmoid(lin)
}

/// Which head produced the chosen answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Implicit,
    Symbolic,
}

/// Both heads' scores plus the fused choice.
#[derive(Debug, Clone)]
pub struct PredictionPair {
    /// Scores over the full vocabulary.
    pub implicit: Vec<f64>,
    /// (vocab index, score) for mapped answers; unmapped entries count as 0.
    pub symbolic: Vec<(usize, f64)>,
    pub chosen_index: usize,
    pub chosen_score: f64,
    pub head: Head,
}

impl PredictionPair {
    pub fn implicit_argmax(&self) -> usize {
        argmax(&self.implicit)
    }

    pub fn symbolic_argmax(&self) -> Option<usize> {
        self.symbolic
            .iter()
            .copied()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(idx, _)| idx)
    }
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in scores.iter().enumerate() {
        if *v > scores[best] {
            best = i;
        }
    }
    best
}

/// Choose the final answer: the highest score across both heads. An exact
/// tie goes to the implicit head, which covers the full vocabulary.
pub fn fuse(implicit: Vec<f64>, symbolic: Vec<(usize, f64)>) -> PredictionPair {
    let imp_idx = argmax(&implicit);
    let imp_score = implicit[imp_idx];
    let sym_best = symbolic
        .iter()
        .copied()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)));
    let (chosen_index, chosen_score, head) = match sym_best {
        Some((sym_idx, sym_score)) if sym_score > imp_score => {
            (sym_idx, sym_score, Head::Symbolic)
        }
        _ => (imp_idx, imp_score, Head::Implicit),
    };
    PredictionPair { implicit, symbolic, chosen_index, chosen_score, head }
}

/// BCE(implicit, targets) + BCE(symbolic, targets at mapped indices).
/// Answers the graph cannot express are excluded from the symbolic term.
pub fn joint_loss<T: Real>(
    tape: &mut Tape<T>,
    y_implicit: TensorId,
    y_symbolic: Option<TensorId>,
    targets: &Tensor<T>,
    map: &AnswerNodeMap,
) -> Result<TensorId> {
    let implicit_loss = tape.bce_loss(y_implicit, targets)?;
    match y_symbolic {
        Some(y_sym) => {
            let mapped_targets: Vec<T> = map
                .mapped_vocab_indices()
                .iter()
                .map(|&i| targets.data()[i])
                .collect();
            let m = mapped_targets.len();
            let target_col = Tensor::new(vec![m, 1], mapped_targets)?;
            let symbolic_loss = tape.bce_loss(y_sym, &target_col)?;
            tape.add(implicit_loss, symbolic_loss)
        }
        None => Ok(implicit_loss),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Edge, TripleSource};

    #[test]
    fn vocab_threshold_and_order() {
        let annotations = [
            ("pizza", 30),
            ("sushi", 12),
            ("apple", 12),
            ("rare bird", 9),
        ];
        let vocab = AnswerVocab::build(annotations.iter().map(|(a, c)| (*a, *c)), 10);
        assert_eq!(vocab.answers(), &["pizza", "apple", "sushi"], "freq desc then lex");
        assert!(vocab.index_of("rare bird").is_none(), "below threshold");
        assert_eq!(vocab.rank(0), 1);
    }

    #[test]
    fn vocab_counts_accumulate() {
        let annotations = [("dog", 6), ("dog", 6)];
        let vocab = AnswerVocab::build(annotations.iter().map(|(a, c)| (*a, *c)), 10);
        assert_eq!(vocab.len(), 1);
    }

    #[test]
    fn answer_map_is_injective_and_partial() {
        let graph = KnowledgeGraph::from_parts(
            vec!["apple".into(), "pizza".into()],
            vec!["r".into()],
            vec![Edge { head: 0, relation: 0, tail: 1, source: TripleSource::Commonsense }],
        )
        .unwrap();
        let vocab = AnswerVocab::from_ordered(
            ["pizza", "apple", "sushi"].map(String::from),
        );
        let map = AnswerNodeMap::build(&vocab, &graph);
        assert_eq!(map.num_mapped(), 2);
        assert_eq!(map.node_of(0), Some(1));
        assert_eq!(map.node_of(2), None);
        let mut nodes = map.mapped_node_ids();
        nodes.dedup();
        assert_eq!(nodes.len(), 2, "mapping injective on mapped indices");
    }

    #[test]
    fn implicit_head_zero_params_is_half() {
        let mut store = ParameterStore::<f64>::new();
        store.insert(names::IMPLICIT_W, Tensor::zeros(vec![4, 5])).unwrap();
        store.insert(names::IMPLICIT_B, Tensor::zeros(vec![1, 5])).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape).unwrap();
        let z = tape.leaf(Tensor::full(vec![1, 4], 0.7)).unwrap();
        let y = implicit_head(&mut tape, z, &bound).unwrap();
        assert!(tape.value(y).data().iter().all(|v| (*v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn implicit_head_large_bias_saturates() {
        let mut store = ParameterStore::<f64>::new();
        store.insert(names::IMPLICIT_W, Tensor::zeros(vec![2, 3])).unwrap();
        store
            .insert(names::IMPLICIT_B, Tensor::new(vec![1, 3], vec![0.0, 10.0, -10.0]).unwrap())
            .unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape).unwrap();
        let z = tape.leaf(Tensor::zeros(vec![1, 2])).unwrap();
        let y = implicit_head(&mut tape, z, &bound).unwrap();
        assert!(tape.value(y).data()[1] > 0.9999);
        assert!(tape.value(y).data()[2] < 0.0001);
    }

    #[test]
    fn symbolic_head_zero_projection_is_half() {
        let graph = KnowledgeGraph::from_parts(
            vec!["a".into(), "b".into()],
            vec!["r".into()],
            vec![Edge { head: 0, relation: 0, tail: 1, source: TripleSource::Commonsense }],
        )
        .unwrap();
        let vocab = AnswerVocab::from_ordered(["a", "b"].map(String::from));
        let map = AnswerNodeMap::build(&vocab, &graph);
        let mut store = ParameterStore::<f64>::new();
        store.insert(names::SYMBOLIC_WS, Tensor::zeros(vec![3, 2])).unwrap();
        store.insert(names::SYMBOLIC_BS, Tensor::zeros(vec![1, 2])).unwrap();
        store.insert(names::SYMBOLIC_WZ, Tensor::full(vec![4, 2], 0.3)).unwrap();
        store.insert(names::SYMBOLIC_BZ, Tensor::zeros(vec![1, 2])).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape).unwrap();
        let g = tape.leaf(Tensor::full(vec![2, 3], 1.0)).unwrap();
        let z = tape.leaf(Tensor::full(vec![1, 4], 1.0)).unwrap();
        let y = symbolic_head(&mut tape, g, z, &map, &bound).unwrap();
        // W^s = 0, b^s = 0: projected node states are zero, inner products zero
        assert!(tape.value(y).data().iter().all(|v| (*v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn fuse_prefers_higher_score_ties_to_implicit() {
        let fused = fuse(vec![0.6, 0.1], vec![(1, 0.9)]);
        assert_eq!((fused.chosen_index, fused.head), (1, Head::Symbolic));

        let fused = fuse(vec![0.6, 0.1], vec![(1, 0.3)]);
        assert_eq!((fused.chosen_index, fused.head), (0, Head::Implicit));

        // exact tie at 0.5 on both heads
        let fused = fuse(vec![0.5, 0.2], vec![(1, 0.5)]);
        assert_eq!((fused.chosen_index, fused.head), (0, Head::Implicit));

        // empty symbolic head: implicit argmax
        let fused = fuse(vec![0.1, 0.4], vec![]);
        assert_eq!((fused.chosen_index, fused.head), (1, Head::Implicit));
    }

    #[test]
    fn fused_score_is_max_over_heads() {
        let fused = fuse(vec![0.2, 0.7, 0.4], vec![(0, 0.65), (2, 0.3)]);
        assert_eq!(fused.chosen_score, 0.7);
        let all_max = fused
            .implicit
            .iter()
            .copied()
            .chain(fused.symbolic.iter().map(|(_, s)| *s))
            .fold(f64::MIN, f64::max);
        assert_eq!(fused.chosen_score, all_max);
    }

    #[test]
    fn joint_loss_uniform_half_is_two_ln2() {
        let graph = KnowledgeGraph::from_parts(
            vec!["a".into(), "b".into()],
            vec!["r".into()],
            vec![Edge { head: 0, relation: 0, tail: 1, source: TripleSource::Commonsense }],
        )
        .unwrap();
        let vocab = AnswerVocab::from_ordered(["a", "b"].map(String::from));
        let map = AnswerNodeMap::build(&vocab, &graph);
        let mut tape = Tape::<f64>::new();
        let y_imp = tape.leaf(Tensor::full(vec![1, 2], 0.5)).unwrap();
        let y_sym = tape.leaf(Tensor::full(vec![2, 1], 0.5)).unwrap();
        let targets = Tensor::full(vec![1, 2], 0.5);
        let loss = joint_loss(&mut tape, y_imp, Some(y_sym), &targets, &map).unwrap();
        let expect = 2.0 * std::f64::consts::LN_2;
        assert!((tape.value(loss).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn vocab_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("answers.txt");
        let vocab = AnswerVocab::build([("b", 20), ("a", 20), ("c", 30)], 10);
        vocab.save(&path).unwrap();
        let loaded = AnswerVocab::load(&path).unwrap();
        assert_eq!(loaded.answers(), vocab.answers());
        assert_eq!(loaded.answers(), &["c", "a", "b"]);
    }
}
