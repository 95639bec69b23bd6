//! Ablation matrix: one trained and evaluated row per flag combination,
//! mean and sample standard deviation over k seeds.

use crate::encoder::WordVocab;
use crate::error::Result;
use crate::fusion::AnswerVocab;
use crate::grounding::WordVectorTable;
use crate::harness::data::{DetectionIndex, QaExample, RegionSynthesizer};
use crate::harness::eval::{evaluate, EvalReport};
use crate::harness::rewire::rewire_random;
use crate::harness::train::{train, TrainConfig};
use crate::kg::KnowledgeGraph;
use crate::model::{AblationFlags, Model, ModelDims};
use crate::seed::stream;
use rand::RngCore;
use serde::{Deserialize, Serialize};

/// One row of the matrix: a name plus its flag settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationSpec {
    pub name: String,
    #[serde(flatten)]
    pub flags: AblationFlags,
}

impl AblationSpec {
    pub fn new(name: &str, flags: AblationFlags) -> AblationSpec {
        AblationSpec { name: name.to_string(), flags }
    }
}

/// The three-row matrix that isolates symbolic knowledge from architecture:
/// the full model, the same architecture over a rewired graph, and the
/// implicit head alone.
pub fn knowledge_isolation_matrix() -> Vec<AblationSpec> {
    vec![
        AblationSpec::new("full", AblationFlags::default()),
        AblationSpec::new(
            "random-graph",
            AblationFlags { random_graph: true, ..Default::default() },
        ),
        AblationSpec::new(
            "implicit-only",
            AblationFlags { implicit_only: true, ..Default::default() },
        ),
    ]
}

/// The full architecture/input matrix.
pub fn full_matrix() -> Vec<AblationSpec> {
    let mut rows = knowledge_isolation_matrix();
    rows.extend([
        AblationSpec::new("gcn", AblationFlags { gcn_variant: true, ..Default::default() }),
        AblationSpec::new(
            "no-late-fusion",
            AblationFlags { no_late_fusion: true, ..Default::default() },
        ),
        AblationSpec::new(
            "no-implicit-input",
            AblationFlags { no_implicit_input_to_graph: true, ..Default::default() },
        ),
        AblationSpec::new(
            "no-implicit-input-or-late-fusion",
            AblationFlags {
                no_implicit_input_to_graph: true,
                no_late_fusion: true,
                ..Default::default()
            },
        ),
        AblationSpec::new(
            "no-backprop-into-encoder",
            AblationFlags { no_backprop_into_encoder: true, ..Default::default() },
        ),
        AblationSpec::new(
            "feed-graph-into-encoder",
            AblationFlags { feed_graph_into_encoder: true, ..Default::default() },
        ),
        AblationSpec::new(
            "no-question-indicator",
            AblationFlags { no_question_indicator: true, ..Default::default() },
        ),
        AblationSpec::new(
            "no-image-confidences",
            AblationFlags { no_image_confidences: true, ..Default::default() },
        ),
        AblationSpec::new(
            "no-symbol-inputs",
            AblationFlags {
                no_question_indicator: true,
                no_image_confidences: true,
                ..Default::default()
            },
        ),
        AblationSpec::new(
            "no-word-vectors",
            AblationFlags { no_word_vectors: true, ..Default::default() },
        ),
    ]);
    rows
}

pub fn spec_by_name(name: &str) -> Option<AblationSpec> {
    full_matrix().into_iter().find(|s| s.name == name)
}

/// Everything a single run needs, shared across the matrix.
pub struct RunContext<'a> {
    pub dims: ModelDims,
    pub graph: &'a KnowledgeGraph,
    pub answer_vocab: &'a AnswerVocab,
    pub encoder_vocab: &'a WordVocab,
    pub wordvec_table: &'a WordVectorTable,
    pub train_data: &'a [QaExample],
    pub eval_data: &'a [QaExample],
    pub detections: &'a DetectionIndex,
    pub regions: &'a RegionSynthesizer,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Sample (n−1) standard deviation; 0 for a single seed.
    pub std_accuracy: f64,
    pub mean_oracle: f64,
    pub mean_implicit: f64,
    pub mean_symbolic: Option<f64>,
    pub mean_unique_correct: f64,
    pub reports: Vec<EvalReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    pub k_seeds: usize,
    pub base_seed: u64,
    pub rows: Vec<AblationRow>,
}

pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    var.sqrt()
}

/// Train and evaluate one flag setting under one seed.
pub fn run_single(
    ctx: &RunContext<'_>,
    flags: &AblationFlags,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<(Model<f32>, EvalReport)> {
    flags.validate()?;
    let graph = if flags.uses_graph() {
        if flags.random_graph {
            Some(rewire_random(ctx.graph, seed)?)
        } else {
            Some(ctx.graph.clone())
        }
    } else {
        None
    };
    let mut model: Model<f32> = Model::new(
        ctx.dims.clone(),
        flags.clone(),
        graph,
        ctx.answer_vocab.clone(),
        ctx.encoder_vocab.clone(),
        ctx.wordvec_table,
        seed,
    )?;
    let cfg = TrainConfig { seed, ..train_cfg.clone() };
    train(&mut model, ctx.train_data, ctx.detections, ctx.regions, &cfg)?;
    let (report, _) = evaluate(&model, ctx.eval_data, ctx.detections, ctx.regions)?;
    Ok((model, report))
}

/// Run every spec over `k_seeds` seeds derived from `base_seed`.
pub fn run_ablation_matrix(
    specs: &[AblationSpec],
    ctx: &RunContext<'_>,
    train_cfg: &TrainConfig,
    k_seeds: usize,
    base_seed: u64,
    mut progress: impl FnMut(&str, u64, &EvalReport),
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.flags.validate()?;
        let mut seeds = Vec::with_capacity(k_seeds);
        let mut reports = Vec::with_capacity(k_seeds);
        for i in 0..k_seeds {
            let seed = stream(base_seed, &format!("ablate:{}:{}", spec.name, i)).next_u64();
            let (_, report) = run_single(ctx, &spec.flags, train_cfg, seed)?;
            progress(&spec.name, seed, &report);
            seeds.push(seed);
            reports.push(report);
        }
        let accuracies: Vec<f64> = reports.iter().map(|r| r.soft_accuracy).collect();
        let mean = |f: &dyn Fn(&EvalReport) -> f64| {
            reports.iter().map(|r| f(r)).sum::<f64>() / reports.len() as f64
        };
        let mean_symbolic = if reports.iter().all(|r| r.symbolic_accuracy.is_some()) {
            Some(
                reports.iter().map(|r| r.symbolic_accuracy.unwrap()).sum::<f64>()
                    / reports.len() as f64,
            )
        } else {
            None
        };
        rows.push(AblationRow {
            name: spec.name.clone(),
            seeds,
            mean_accuracy: accuracies.iter().sum::<f64>() / accuracies.len() as f64,
            std_accuracy: sample_std(&accuracies),
            accuracies,
            mean_oracle: mean(&|r| r.oracle_accuracy),
            mean_implicit: mean(&|r| r.implicit_accuracy),
            mean_symbolic,
            mean_unique_correct: mean(&|r| r.unique_correct as f64),
            reports,
        });
    }
    Ok(AblationTable { k_seeds, base_seed, rows })
}

impl AblationTable {
    /// Aligned text rendering of the comparative table.
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<34} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10}\n",
            "row", "acc", "std", "oracle", "implicit", "symbolic", "uniq-corr"
        ));
        for row in &self.rows {
            let sym = match row.mean_symbolic {
                Some(v) => format!("{:>8.4}", v),
                None => format!("{:>8}", "-"),
            };
            out.push_str(&format!(
                "{:<34} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {} {:>10.1}\n",
                row.name,
                row.mean_accuracy,
                row.std_accuracy,
                row.mean_oracle,
                row.mean_implicit,
                sym,
                row.mean_unique_correct
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std_uses_n_minus_one() {
        // values 1, 2, 3: sample variance = 1
        assert!((sample_std(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-12);
        assert_eq!(sample_std(&[0.5]), 0.0);
    }

    #[test]
    fn matrices_are_mutually_consistent() {
        for spec in full_matrix() {
            spec.flags.validate().unwrap_or_else(|e| panic!("{}: {}", spec.name, e));
        }
        assert_eq!(knowledge_isolation_matrix().len(), 3);
    }

    #[test]
    fn spec_lookup_by_name() {
        assert!(spec_by_name("random-graph").unwrap().flags.random_graph);
        assert!(spec_by_name("nonexistent").is_none());
    }
}
