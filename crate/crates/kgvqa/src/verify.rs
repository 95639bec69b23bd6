//! Gradient verification suites: every differentiable primitive against
//! central finite differences, plus the full network loss on a small graph.
//!
//! These run at f64. The same suites back the `grad-check` subcommand and
//! the acceptance tests.

use crate::encoder::{RegionFeatures, WordVocab};
use crate::error::Result;
use crate::fusion::AnswerVocab;
use crate::grounding::WordVectorTable;
use crate::harness::data::build_targets;
use crate::kg::{Edge, KnowledgeGraph, TripleSource};
use crate::model::{AblationFlags, ExampleInput, Model, ModelDims};
use crate::numerics::gradcheck::{grad_check, grad_check_with_fault, GradCheckReport};
use crate::numerics::store::ParameterStore;
use crate::numerics::tape::SparseMatrix;
use crate::numerics::tensor::Tensor;
use crate::seed::stream;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::rc::Rc;

fn rand_tensor(rng: &mut ChaCha20Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("shape/data consistent")
}

/// Values bounded away from zero, for kinked ops like relu.
fn rand_tensor_offset(rng: &mut ChaCha20Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape/data consistent")
}

/// Check one op's backward rule on a randomized input for one seed.
/// Returns the max relative error across the op's parameters.
fn check_op(op: &str, seed: u64, eps: f64) -> Result<f64> {
    let mut rng = stream(seed, &format!("opcheck:{}", op));
    let mut store = ParameterStore::<f64>::new();
    let report: GradCheckReport = match op {
        "matmul" => {
            store.insert("a", rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0))?;
            store.insert("b", rand_tensor(&mut rng, vec![4, 2], -1.0, 1.0))?;
            grad_check(
                |tape, bound| {
                    let c = tape.matmul(bound.id("a")?, bound.id("b")?)?;
                    tape.sum_all(c)
                },
                &store,
                eps,
            )?
        }
        "transpose" => {
            store.insert("a", rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0))?;
            let w = rand_tensor(&mut rng, vec![4, 3], -1.0, 1.0);
            grad_check(
                |tape, bound| {
                    let t = tape.transpose(bound.id("a")?)?;
                    let wid = tape.leaf(w.clone())?;
                    let prod = tape.mul(t, wid)?;
                    tape.sum_all(prod)
                },
                &store,
                eps,
            )?
        }
        "add" => {
            store.insert("a", rand_tensor(&mut rng, vec![2, 3], -1.0, 1.0))?;
            store.insert("b", rand_tensor(&mut rng, vec![2, 3], -1.0, 1.0))?;
            store.insert("s", rand_tensor(&mut rng, vec![1], -1.0, 1.0))?;
            grad_check(
                |tape, bound| {
                    let sum = tape.add(bound.id("a")?, bound.id("b")?)?;
                    let sum = tape.add(sum, bound.id("s")?)?;
                    let sq = tape.mul(sum, sum)?;
                    tape.sum_all(sq)
                },
                &store,
                eps,
            )?
        }
        "sub" => {
            store.insert("a", rand_tensor(&mut rng, vec![2, 3], -1.0, 1.0))?;
            store.insert("b", rand_tensor(&mut rng, vec![2, 3], -1.0, 1.0))?;
            grad_check(
                |tape, bound| {
                    let d = tape.sub(bound.id("a")?, bound.id("b")?)?;
                    let sq = tape.mul(d, d)?;
                    tape.sum_all(sq)
                },
                &store,
                eps,
            )?
        }
        "mul" => {
            store.insert("a", rand_tensor(&mut rng, vec![2, 3], -1.0, 1.0))?;
            store.insert("b", rand_tensor(&mut rng, vec![2, 3], -1.0, 1.0))?;
            store.insert("s", rand_tensor(&mut rng, vec![1], 0.5, 1.5))?;
            grad_check(
                |tape, bound| {
                    let p = tape.mul(bound.id("a")?, bound.id("b")?)?;
                    let p = tape.mul(p, bound.id("s")?)?;
                    tape.sum_all(p)
                },
                &store,
                eps,
            )?
        }
        "scale" => {
            store.insert("a", rand_tensor(&mut rng, vec![2, 3], -1.0, 1.0))?;
            grad_check(
                |tape, bound| {
                    let s = tape.scale(bound.id("a")?, 0.37)?;
                    let sq = tape.mul(s, s)?;
                    tape.sum_all(sq)
                },
                &store,
                eps,
            )?
        }
        "add_row_broadcast" => {
            store.insert("x", rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0))?;
            store.insert("b", rand_tensor(&mut rng, vec![1, 4], -1.0, 1.0))?;
            grad_check(
                |tape, bound| {
                    let y = tape.add_row_broadcast(bound.id("x")?, bound.id("b")?)?;
                    let sq = tape.mul(y, y)?;
                    tape.sum_all(sq)
                },
                &store,
                eps,
            )?
        }
        "broadcast_rows" => {
            store.insert("v", rand_tensor(&mut rng, vec![1, 4], -1.0, 1.0))?;
            let w = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
            grad_check(
                |tape, bound| {
                    let y = tape.broadcast_rows(bound.id("v")?, 3)?;
                    let wid = tape.leaf(w.clone())?;
                    let p = tape.mul(y, wid)?;
                    tape.sum_all(p)
                },
                &store,
                eps,
            )?
        }
        "relu" => {
            store.insert("x", rand_tensor_offset(&mut rng, vec![3, 3]))?;
            grad_check(
                |tape, bound| {
                    let y = tape.relu(bound.id("x")?)?;
                    let sq = tape.mul(y, y)?;
                    tape.sum_all(sq)
                },
                &store,
                eps,
            )?
        }
        "sigmoid" => {
            store.insert("x", rand_tensor(&mut rng, vec![3, 3], -2.0, 2.0))?;
            grad_check(
                |tape, bound| {
                    let y = tape.sigmoid(bound.id("x")?)?;
                    tape.sum_all(y)
                },
                &store,
                eps,
            )?
        }
        "softmax_rows" => {
            store.insert("x", rand_tensor(&mut rng, vec![3, 4], -2.0, 2.0))?;
            let w = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
            grad_check(
                |tape, bound| {
                    let y = tape.softmax_rows(bound.id("x")?)?;
                    let wid = tape.leaf(w.clone())?;
                    let p = tape.mul(y, wid)?;
                    tape.sum_all(p)
                },
                &store,
                eps,
            )?
        }
        "gather_rows" => {
            store.insert("x", rand_tensor(&mut rng, vec![5, 3], -1.0, 1.0))?;
            grad_check(
                |tape, bound| {
                    let y = tape.gather_rows(bound.id("x")?, vec![4, 0, 4, 2])?;
                    let sq = tape.mul(y, y)?;
                    tape.sum_all(sq)
                },
                &store,
                eps,
            )?
        }
        "spmm" => {
            store.insert("x", rand_tensor(&mut rng, vec![4, 3], -1.0, 1.0))?;
            let s = Rc::new(
                SparseMatrix::from_rows(
                    3,
                    4,
                    &[vec![(0, 0.5), (2, 0.5)], vec![(1, 1.0)], vec![]],
                )
                .expect("valid sparse fixture"),
            );
            grad_check(
                |tape, bound| {
                    let y = tape.spmm(Rc::clone(&s), bound.id("x")?)?;
                    let sq = tape.mul(y, y)?;
                    tape.sum_all(sq)
                },
                &store,
                eps,
            )?
        }
        "concat_cols" => {
            store.insert("a", rand_tensor(&mut rng, vec![3, 2], -1.0, 1.0))?;
            store.insert("b", rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0))?;
            grad_check(
                |tape, bound| {
                    let y = tape.concat_cols(&[bound.id("a")?, bound.id("b")?])?;
                    let sq = tape.mul(y, y)?;
                    tape.sum_all(sq)
                },
                &store,
                eps,
            )?
        }
        "concat_rows" => {
            store.insert("a", rand_tensor(&mut rng, vec![2, 3], -1.0, 1.0))?;
            store.insert("b", rand_tensor(&mut rng, vec![4, 3], -1.0, 1.0))?;
            grad_check(
                |tape, bound| {
                    let y = tape.concat_rows(&[bound.id("a")?, bound.id("b")?])?;
                    let sq = tape.mul(y, y)?;
                    tape.sum_all(sq)
                },
                &store,
                eps,
            )?
        }
        "mean_rows" => {
            store.insert("x", rand_tensor(&mut rng, vec![4, 3], -1.0, 1.0))?;
            grad_check(
                |tape, bound| {
                    let y = tape.mean_rows(bound.id("x")?)?;
                    let sq = tape.mul(y, y)?;
                    tape.sum_all(sq)
                },
                &store,
                eps,
            )?
        }
        "sum_all" => {
            store.insert("x", rand_tensor(&mut rng, vec![3, 3], -1.0, 1.0))?;
            grad_check(
                |tape, bound| {
                    let sq = tape.mul(bound.id("x")?, bound.id("x")?)?;
                    tape.sum_all(sq)
                },
                &store,
                eps,
            )?
        }
        "mean_all" => {
            store.insert("x", rand_tensor(&mut rng, vec![3, 3], -1.0, 1.0))?;
            grad_check(
                |tape, bound| {
                    let sq = tape.mul(bound.id("x")?, bound.id("x")?)?;
                    tape.mean_all(sq)
                },
                &store,
                eps,
            )?
        }
        "rms_norm_rows" => {
            store.insert("x", rand_tensor_offset(&mut rng, vec![3, 4]))?;
            let w = rand_tensor(&mut rng, vec![3, 4], -1.0, 1.0);
            grad_check(
                |tape, bound| {
                    let y = tape.rms_norm_rows(bound.id("x")?, 1e-8)?;
                    let wid = tape.leaf(w.clone())?;
                    let p = tape.mul(y, wid)?;
                    tape.sum_all(p)
                },
                &store,
                eps,
            )?
        }
        "bce_loss" => {
            store.insert("p", rand_tensor(&mut rng, vec![2, 3], 0.1, 0.9))?;
            let target = rand_tensor(&mut rng, vec![2, 3], 0.0, 1.0);
            grad_check(
                |tape, bound| tape.bce_loss(bound.id("p")?, &target),
                &store,
                eps,
            )?
        }
        other => {
            return Err(crate::error::Error::InvalidArgument(format!(
                "unknown op {}",
                other
            )))
        }
    };
    Ok(report.max_rel_err())
}

/// Every differentiable primitive the tape records.
pub const ALL_OPS: [&str; 20] = [
    "matmul",
    "transpose",
    "add",
    "sub",
    "mul",
    "scale",
    "add_row_broadcast",
    "broadcast_rows",
    "relu",
    "sigmoid",
    "softmax_rows",
    "gather_rows",
    "spmm",
    "concat_cols",
    "concat_rows",
    "mean_rows",
    "rms_norm_rows",
    "sum_all",
    "mean_all",
    "bce_loss",
];

/// Max relative error per op over `seeds` randomized inputs.
pub fn check_all_ops(eps: f64, seeds: u64) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for op in ALL_OPS {
        let mut worst = 0.0f64;
        for seed in 0..seeds {
            worst = worst.max(check_op(op, seed, eps)?);
        }
        out.push((op.to_string(), worst));
    }
    Ok(out)
}

/// A 6-node, 3-relation graph with two answer concepts among its nodes.
pub fn toy_graph() -> KnowledgeGraph {
    let nodes = ["lantern", "harbor", "sailor", "rope", "knot", "deck"];
    let e = |h: usize, r: usize, t: usize, s: TripleSource| Edge {
        head: h,
        relation: r,
        tail: t,
        source: s,
    };
    KnowledgeGraph::from_parts(
        nodes.iter().map(|s| s.to_string()).collect(),
        vec!["holds".into(), "part_of".into(), "near".into()],
        vec![
            e(0, 2, 1, TripleSource::SceneGraph),
            e(2, 0, 3, TripleSource::Commonsense),
            e(3, 1, 4, TripleSource::HasPart),
            e(4, 1, 3, TripleSource::HasPart),
            e(2, 2, 5, TripleSource::SceneGraph),
            e(5, 1, 1, TripleSource::Encyclopedic),
            e(0, 0, 4, TripleSource::Commonsense),
        ],
    )
    .expect("toy graph is valid")
}

/// Tiny dims so central differences over every parameter stay cheap.
pub fn toy_dims() -> ModelDims {
    ModelDims {
        d_z: 10,
        blocks: 1,
        heads: 1,
        ff_dim: 12,
        region_dim: 6,
        max_len: 8,
        word_dim: 7,
        compress_dim: 5,
        node_hidden: 6,
        conv_layers: 2,
        fusion_dim: 6,
        ngram_cap: 3,
    }
}

/// Full model on the toy graph plus one input example, at f64.
pub fn toy_model_and_input(
    flags: AblationFlags,
    seed: u64,
) -> Result<(Model<f64>, ExampleInput<f64>)> {
    let dims = toy_dims();
    // "sky" stays outside the graph: the implicit head alone can reach it
    let vocab = AnswerVocab::build([("knot", 10), ("deck", 10), ("sky", 10)], 1);
    let enc_vocab = WordVocab::from_words(
        ["what", "does", "the", "sailor", "hold", "by", "harbor"].map(String::from),
    );
    let mut rng = stream(seed, "toy-wordvecs");
    let mut wv = WordVectorTable::new(dims.word_dim);
    for node in toy_graph().nodes() {
        let vec: Vec<f64> = (0..dims.word_dim).map(|_| rng.gen_range(-0.4..0.4)).collect();
        wv.insert(node, vec)?;
    }
    let mut model: Model<f64> = Model::new(
        dims.clone(),
        flags,
        Some(toy_graph()),
        vocab,
        enc_vocab,
        &wv,
        seed,
    )?;
    // Scale weights up from the training init so gradients through the
    // deepest parameter chains stay above the finite-difference noise floor.
    for name in model.store.names().to_vec() {
        let mut t = model.store.get_required(&name)?.clone();
        for v in t.data_mut() {
            *v *= 20.0;
        }
        model.store.set(&name, t)?;
    }

    let question = model.encoder_vocab.encode_question("what does the sailor hold");
    let mut reg_rng = stream(seed, "toy-regions");
    let regions = RegionFeatures::new(rand_tensor(&mut reg_rng, vec![2, dims.region_dim], -0.5, 0.5))?;
    let observations = vec![
        crate::grounding::VisualSymbolObservation::new(
            "rope",
            0.85,
            crate::grounding::SymbolSource::LongTail,
        )?,
        crate::grounding::VisualSymbolObservation::new(
            "lantern",
            0.6,
            crate::grounding::SymbolSource::Objects1k,
        )?,
    ];
    let example = crate::harness::data::QaExample {
        question_id: "toy-0".into(),
        image_id: "toy-img".into(),
        question: "what does the sailor hold".into(),
        answers: vec![crate::harness::data::AnswerAnnotation { answer: "knot".into(), count: 10 }],
    };
    let targets = build_targets(&example, &model.answer_vocab);
    Ok((model, ExampleInput { question, regions, observations, targets }))
}

/// Finite-difference check of the whole network loss on the toy graph.
pub fn check_full_model(flags: AblationFlags, eps: f64, seed: u64) -> Result<GradCheckReport> {
    let (model, input) = toy_model_and_input(flags, seed)?;
    grad_check(
        |tape, bound| Ok(model.forward(tape, bound, &input)?.loss),
        &model.store,
        eps,
    )
}

/// Demonstrate that the checker catches a corrupted backward rule.
pub fn fault_demo(eps: f64) -> Result<f64> {
    let mut store = ParameterStore::<f64>::new();
    let mut rng = stream(13, "fault-demo");
    store.insert("w", rand_tensor(&mut rng, vec![2, 3], -1.0, 1.0))?;
    let report = grad_check_with_fault(
        |tape, bound| {
            let s = tape.sigmoid(bound.id("w")?)?;
            tape.sum_all(s)
        },
        &store,
        eps,
        1.5,
    )?;
    Ok(report.max_rel_err())
}

/// The `grad-check` subcommand: per-op table, full-model per-parameter
/// report, and the fault-injection demonstration.
pub fn run_cli_report(eps: f64) -> Result<()> {
    println!("op-level checks ({} randomized seeds each, f64, eps {:e}):", 20, eps);
    for (op, err) in check_all_ops(eps, 20)? {
        let verdict = if err < 1e-4 { "ok" } else { "FAIL" };
        println!("  {:<20} max rel err {:>12.3e}  {}", op, err, verdict);
    }

    println!("\nfull network loss on the 6-node/3-relation toy graph:");
    let report = check_full_model(AblationFlags::default(), eps, 42)?;
    print!("{}", report);
    println!(
        "  overall max rel err {:.3e} ({})",
        report.max_rel_err(),
        if report.max_rel_err() < 1e-4 { "ok" } else { "FAIL" }
    );

    let fault_err = fault_demo(eps)?;
    println!(
        "\ncorrupted-backward demonstration: injected 1.5x fault yields rel err {:.3e} ({})",
        fault_err,
        if fault_err > 1e-2 { "detected" } else { "MISSED" }
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_a_few_seeds() {
        for (op, err) in check_all_ops(1e-5, 5).unwrap() {
            assert!(err < 1e-4, "{} rel err {}", op, err);
        }
    }

    #[test]
    fn toy_model_loss_is_differentiable() {
        let report = check_full_model(AblationFlags::default(), 1e-5, 3).unwrap();
        assert!(report.max_rel_err() < 1e-4, "max rel err {}", report.max_rel_err());
    }

    #[test]
    fn fault_is_detected() {
        assert!(fault_demo(1e-5).unwrap() > 1e-2);
    }
}
