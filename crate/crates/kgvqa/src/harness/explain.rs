//! Textual prediction traces: which head won, the top answers per head, and
//! the knowledge edges incident to the concepts involved.

use crate::error::{Error, Result};
use crate::fusion::Head;
use crate::harness::data::{example_input, DetectionIndex, QaExample, RegionSynthesizer};
use crate::model::Model;
use crate::numerics::tensor::Real;
use crate::text::{ngrams, tokenize};
use serde::Serialize;
use std::collections::BTreeSet;

#[derive(Debug, Clone, Serialize)]
pub struct EdgeTrace {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub source: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplainTrace {
    pub question_id: String,
    pub question: String,
    pub answer: String,
    pub score: f64,
    pub head: Head,
    pub top_implicit: Vec<(String, f64)>,
    pub top_symbolic: Vec<(String, f64)>,
    /// Graph concepts matched by the question text.
    pub question_concepts: Vec<String>,
    /// Graph concepts matched by detections.
    pub detected_concepts: Vec<String>,
    /// Edges incident to question-matched, detected, or predicted-answer
    /// nodes.
    pub edges: Vec<EdgeTrace>,
}

fn top_k(mut scored: Vec<(String, f64)>, k: usize) -> Vec<(String, f64)> {
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Trace one question through a trained model. Deterministic per
/// checkpoint.
pub fn explain<T: Real>(
    model: &Model<T>,
    data: &[QaExample],
    question_id: &str,
    detections: &DetectionIndex,
    regions: &RegionSynthesizer,
    k: usize,
) -> Result<ExplainTrace> {
    let example = data
        .iter()
        .find(|ex| ex.question_id == question_id)
        .ok_or_else(|| Error::UnknownQuestion(question_id.to_string()))?;

    let input = example_input(model, example, detections, regions)?;
    let mut tape = crate::numerics::tape::Tape::new();
    let bound = model.store.bind(&mut tape)?;
    let pass = model.forward(&mut tape, &bound, &input)?;
    let pred = model.predict(&tape, &pass);

    let top_implicit = top_k(
        pred.implicit
            .iter()
            .enumerate()
            .map(|(i, s)| (model.answer_vocab.answer(i).to_string(), *s))
            .collect(),
        k,
    );
    let top_symbolic = top_k(
        pred.symbolic
            .iter()
            .map(|(i, s)| (model.answer_vocab.answer(*i).to_string(), *s))
            .collect(),
        k,
    );

    let mut question_concepts = Vec::new();
    let mut detected_concepts = Vec::new();
    let mut edges = Vec::new();
    if let Some(graph) = model.graph() {
        let mut interest: BTreeSet<usize> = BTreeSet::new();
        let toks = tokenize(&example.question);
        for gram in ngrams(&toks, model.dims.ngram_cap) {
            if let Some(id) = graph.node_id(&gram) {
                if interest.insert(id) {
                    question_concepts.push(gram);
                }
            }
        }
        for obs in detections.get(&example.image_id) {
            if let Some(id) = graph.node_id(&obs.concept) {
                if interest.insert(id) {
                    detected_concepts.push(obs.concept.clone());
                }
            }
        }
        if let Some(node) = model.answer_map.node_of(pred.chosen_index) {
            interest.insert(node);
        }
        let mut seen = BTreeSet::new();
        for &node in &interest {
            for edge in graph.incident_edges(node) {
                if seen.insert((edge.head, edge.relation, edge.tail)) {
                    edges.push(EdgeTrace {
                        head: graph.node_name(edge.head).to_string(),
                        relation: graph.relation_name(edge.relation).to_string(),
                        tail: graph.node_name(edge.tail).to_string(),
                        source: edge.source.as_str().to_string(),
                    });
                }
            }
        }
    }

    Ok(ExplainTrace {
        question_id: example.question_id.clone(),
        question: example.question.clone(),
        answer: model.answer_vocab.answer(pred.chosen_index).to_string(),
        score: pred.chosen_score,
        head: pred.head,
        top_implicit,
        top_symbolic,
        question_concepts,
        detected_concepts,
        edges,
    })
}

impl std::fmt::Display for ExplainTrace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "question {}: {}", self.question_id, self.question)?;
        writeln!(
            f,
            "answer: {} (score {:.4}, {} head)",
            self.answer,
            self.score,
            match self.head {
                Head::Implicit => "implicit",
                Head::Symbolic => "symbolic",
            }
        )?;
        writeln!(f, "question concepts in graph: {:?}", self.question_concepts)?;
        writeln!(f, "detected concepts in graph: {:?}", self.detected_concepts)?;
        writeln!(f, "top implicit answers:")?;
        for (a, s) in &self.top_implicit {
            writeln!(f, "  {:<24} {:.4}", a, s)?;
        }
        writeln!(f, "top symbolic answers:")?;
        if self.top_symbolic.is_empty() {
            writeln!(f, "  (none: no answer maps into the graph)")?;
        }
        for (a, s) in &self.top_symbolic {
            writeln!(f, "  {:<24} {:.4}", a, s)?;
        }
        writeln!(f, "related knowledge ({} edges):", self.edges.len())?;
        for e in &self.edges {
            writeln!(f, "  ({}, {}, {})  [{}]", e.head, e.relation, e.tail, e.source)?;
        }
        Ok(())
    }
}
