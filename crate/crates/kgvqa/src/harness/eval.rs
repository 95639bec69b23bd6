//! Evaluation: soft accuracy, per-head and oracle accuracies, symbolic-head
//! usage, and the long-tail metrics (answer frequency rank, unique-answer
//! counts).

use crate::error::Result;
use crate::fusion::Head;
use crate::harness::data::{example_input, DetectionIndex, QaExample, RegionSynthesizer};
use crate::model::Model;
use crate::numerics::tensor::Real;
use serde::Serialize;
use std::collections::HashSet;

/// One line of the prediction dump.
#[derive(Debug, Clone, Serialize)]
pub struct PredictionRecord {
    pub question_id: String,
    pub answer: String,
    pub score: f64,
    pub head: Head,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub num_questions: usize,
    /// Mean over questions of min(matching-annotator-count/3, 1) for the
    /// fused prediction.
    pub soft_accuracy: f64,
    pub implicit_accuracy: f64,
    /// Absent for models without a symbolic head.
    pub symbolic_accuracy: Option<f64>,
    /// Per-question best of the two heads: an upper bound on fusion.
    pub oracle_accuracy: f64,
    /// Fraction of questions where the symbolic head won the fusion.
    pub symbolic_usage: f64,
    /// Mean training-frequency rank of predictions (1 = most common).
    pub freq_rank_all: f64,
    /// Same, over correct predictions only (0 when nothing was correct).
    pub freq_rank_correct: f64,
    pub unique_all: usize,
    pub unique_correct: usize,
}

/// Pure function of (model parameters, data): repeated calls yield the
/// identical report.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    data: &[QaExample],
    detections: &DetectionIndex,
    regions: &RegionSynthesizer,
) -> Result<(EvalReport, Vec<PredictionRecord>)> {
    let mut records = Vec::with_capacity(data.len());
    let mut soft_sum = 0.0;
    let mut implicit_sum = 0.0;
    let mut symbolic_sum = 0.0;
    let mut oracle_sum = 0.0;
    let mut symbolic_wins = 0usize;
    let mut rank_sum = 0.0;
    let mut rank_correct_sum = 0.0;
    let mut correct = 0usize;
    let mut unique_all: HashSet<String> = HashSet::new();
    let mut unique_correct: HashSet<String> = HashSet::new();
    let has_symbolic = model.flags.has_symbolic_head() && model.answer_map.num_mapped() > 0;

    for ex in data {
        let input = example_input(model, ex, detections, regions)?;
        let mut tape = crate::numerics::tape::Tape::new();
        let bound = model.store.bind(&mut tape)?;
        let pass = model.forward(&mut tape, &bound, &input)?;
        let pred = model.predict(&tape, &pass);

        let fused_answer = model.answer_vocab.answer(pred.chosen_index).to_string();
        let fused_score = ex.soft_score(&fused_answer);
        soft_sum += fused_score;

        let imp_idx = pred.implicit_argmax();
        let imp_score = ex.soft_score(model.answer_vocab.answer(imp_idx));
        implicit_sum += imp_score;

        let sym_score = match pred.symbolic_argmax() {
            Some(idx) => ex.soft_score(model.answer_vocab.answer(idx)),
            None => 0.0,
        };
        symbolic_sum += sym_score;
        oracle_sum += imp_score.max(sym_score);
        if pred.head == Head::Symbolic {
            symbolic_wins += 1;
        }

        let rank = model.answer_vocab.rank(pred.chosen_index) as f64;
        rank_sum += rank;
        unique_all.insert(fused_answer.clone());
        if fused_score > 0.0 {
            correct += 1;
            rank_correct_sum += rank;
            unique_correct.insert(fused_answer.clone());
        }

        records.push(PredictionRecord {
            question_id: ex.question_id.clone(),
            answer: fused_answer,
            score: pred.chosen_score,
            head: pred.head,
        });
    }

    let n = data.len().max(1) as f64;
    let report = EvalReport {
        num_questions: data.len(),
        soft_accuracy: soft_sum / n,
        implicit_accuracy: implicit_sum / n,
        symbolic_accuracy: if has_symbolic { Some(symbolic_sum / n) } else { None },
        oracle_accuracy: oracle_sum / n,
        symbolic_usage: symbolic_wins as f64 / n,
        freq_rank_all: rank_sum / n,
        freq_rank_correct: if correct > 0 { rank_correct_sum / correct as f64 } else { 0.0 },
        unique_all: unique_all.len(),
        unique_correct: unique_correct.len(),
    };
    Ok((report, records))
}

impl EvalReport {
    pub fn text_summary(&self) -> String {
        let sym = match self.symbolic_accuracy {
            Some(v) => format!("{:.4}", v),
            None => "-".to_string(),
        };
        format!(
            "questions {:>6}  acc {:.4}  implicit {:.4}  symbolic {}  oracle {:.4}  sym-usage {:.3}\n\
             freq-rank all {:.1} correct {:.1}  unique all {} correct {}",
            self.num_questions,
            self.soft_accuracy,
            self.implicit_accuracy,
            sym,
            self.oracle_accuracy,
            self.symbolic_usage,
            self.freq_rank_all,
            self.freq_rank_correct,
            self.unique_all,
            self.unique_correct
        )
    }
}
