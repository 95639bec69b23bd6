//! Dataset files and per-example input assembly.
//!
//! Question/answer data and detections arrive as JSON-lines. Region
//! features for the implicit encoder are synthesized deterministically from
//! detected concepts — no real image features exist at desk scale, and the
//! encoder only needs a stable per-concept signal.

use crate::encoder::RegionFeatures;
use crate::error::{Error, Result};
use crate::grounding::VisualSymbolObservation;
use crate::model::{ExampleInput, Model};
use crate::numerics::tensor::{Real, Tensor};
use crate::seed::stream;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// One annotated answer: the string and how many annotators gave it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerAnnotation {
    pub answer: String,
    pub count: usize,
}

/// One dataset row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QaExample {
    pub question_id: String,
    pub image_id: String,
    pub question: String,
    pub answers: Vec<AnswerAnnotation>,
}

impl QaExample {
    /// Soft score of an answer for this question: min(count/3, 1).
    pub fn soft_score(&self, answer: &str) -> f64 {
        self.answers
            .iter()
            .find(|a| a.answer == answer)
            .map(|a| (a.count as f64 / 3.0).min(1.0))
            .unwrap_or(0.0)
    }
}

pub fn load_examples<P: AsRef<Path>>(path: P) -> Result<Vec<QaExample>> {
    let file = std::fs::File::open(&path).map_err(|e| {
        Error::Data(format!("cannot open dataset {}: {}", path.as_ref().display(), e))
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: QaExample = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("bad dataset line {}: {}", i + 1, e)))?;
        out.push(ex);
    }
    Ok(out)
}

pub fn save_examples<P: AsRef<Path>>(examples: &[QaExample], path: P) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub detections: Vec<VisualSymbolObservation>,
}

/// image id → detections.
#[derive(Debug, Clone, Default)]
pub struct DetectionIndex {
    map: HashMap<String, Vec<VisualSymbolObservation>>,
}

impl DetectionIndex {
    pub fn load<P: AsRef<Path>>(path: P) -> Result<DetectionIndex> {
        let file = std::fs::File::open(&path).map_err(|e| {
            Error::Data(format!("cannot open detections {}: {}", path.as_ref().display(), e))
        })?;
        let mut map = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DetectionRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("bad detection line {}: {}", i + 1, e)))?;
            map.insert(rec.image_id, rec.detections);
        }
        Ok(DetectionIndex { map })
    }

    pub fn save<P: AsRef<Path>>(records: &[DetectionRecord], path: P) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for rec in records {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn insert(&mut self, image_id: String, detections: Vec<VisualSymbolObservation>) {
        self.map.insert(image_id, detections);
    }

    pub fn get(&self, image_id: &str) -> &[VisualSymbolObservation] {
        self.map.get(image_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Deterministic per-concept region features: each detected concept maps to
/// a fixed pseudo-random vector, so the encoder sees a stable visual symbol
/// signal across the dataset.
#[derive(Debug, Clone)]
pub struct RegionSynthesizer {
    dim: usize,
    seed: u64,
}

impl RegionSynthesizer {
    pub fn new(dim: usize, seed: u64) -> RegionSynthesizer {
        RegionSynthesizer { dim, seed }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn concept_vector<T: Real>(&self, concept: &str) -> Vec<T> {
        let mut rng = stream(self.seed, &format!("region:{}", concept));
        (0..self.dim).map(|_| T::from_f64(rng.gen_range(-0.5..0.5))).collect()
    }

    pub fn features_for<T: Real>(
        &self,
        detections: &[VisualSymbolObservation],
    ) -> Result<RegionFeatures<T>> {
        if detections.is_empty() {
            return Ok(RegionFeatures::empty(self.dim));
        }
        let mut data = Vec::with_capacity(detections.len() * self.dim);
        for det in detections {
            data.extend(self.concept_vector::<T>(&det.concept));
        }
        RegionFeatures::new(Tensor::new(vec![detections.len(), self.dim], data)?)
    }
}

/// Soft target vector over the answer vocab: min(count/3, 1) per annotated
/// answer.
pub fn build_targets<T: Real>(
    example: &QaExample,
    vocab: &crate::fusion::AnswerVocab,
) -> Tensor<T> {
    let mut t = Tensor::zeros(vec![1, vocab.len()]);
    for ann in &example.answers {
        if let Some(idx) = vocab.index_of(&ann.answer) {
            let v = (ann.count as f64 / 3.0).min(1.0);
            t.data_mut()[idx] = T::from_f64(v);
        }
    }
    t
}

/// Assemble the tape-ready input for one example.
pub fn example_input<T: Real>(
    model: &Model<T>,
    example: &QaExample,
    detections: &DetectionIndex,
    regions: &RegionSynthesizer,
) -> Result<ExampleInput<T>> {
    let question = model.encoder_vocab.encode_question(&example.question);
    let observations = detections.get(&example.image_id).to_vec();
    let region_features = regions.features_for(&observations)?;
    let targets = build_targets(example, &model.answer_vocab);
    Ok(ExampleInput { question, regions: region_features, observations, targets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::AnswerVocab;
    use crate::grounding::SymbolSource;

    fn example(answers: &[(&str, usize)]) -> QaExample {
        QaExample {
            question_id: "q1".into(),
            image_id: "i1".into(),
            question: "what is this".into(),
            answers: answers
                .iter()
                .map(|(a, c)| AnswerAnnotation { answer: a.to_string(), count: *c })
                .collect(),
        }
    }

    #[test]
    fn soft_score_protocol() {
        let ex = example(&[("cat", 10), ("dog", 2), ("fox", 1)]);
        assert_eq!(ex.soft_score("cat"), 1.0);
        assert!((ex.soft_score("dog") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(ex.soft_score("zebra"), 0.0);
    }

    #[test]
    fn targets_follow_soft_protocol() {
        let vocab = AnswerVocab::build([("cat", 10), ("dog", 10)], 1);
        let ex = example(&[("dog", 2)]);
        let t = build_targets::<f64>(&ex, &vocab);
        let dog = vocab.index_of("dog").unwrap();
        let cat = vocab.index_of("cat").unwrap();
        assert!((t.data()[dog] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(t.data()[cat], 0.0);
    }

    #[test]
    fn region_synth_is_deterministic_per_concept() {
        let synth = RegionSynthesizer::new(8, 3);
        let obs = vec![
            VisualSymbolObservation::new("dog", 0.9, SymbolSource::Objects1k).unwrap(),
            VisualSymbolObservation::new("dog", 0.4, SymbolSource::Places).unwrap(),
        ];
        let f: RegionFeatures<f64> = synth.features_for(&obs).unwrap();
        assert_eq!(f.count(), 2);
        let rows = f.tensor().data();
        assert_eq!(&rows[0..8], &rows[8..16], "same concept, same vector");
        let again: RegionFeatures<f64> = synth.features_for(&obs).unwrap();
        assert_eq!(f.tensor().data(), again.tensor().data());
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let examples = vec![example(&[("cat", 10)]), example(&[("dog", 3)])];
        save_examples(&examples, &path).unwrap();
        let loaded = load_examples(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[1].answers[0].answer, "dog");
    }
}
