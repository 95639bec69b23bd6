//! Overfit sanity: a model that cannot drive the joint loss to ~0 on eight
//! fixed examples has a broken gradient path somewhere.
//!
//! Run after generating data:
//!   cargo run --example overfit_sanity -- <data-dir>

use kgvqa::fusion::AnswerVocab;
use kgvqa::grounding::WordVectorTable;
use kgvqa::harness::config::RunConfig;
use kgvqa::harness::data::{load_examples, DetectionIndex, RegionSynthesizer};
use kgvqa::harness::train::{train, TrainConfig};
use kgvqa::harness::GenSpec;
use kgvqa::kg::KnowledgeGraph;
use kgvqa::model::{AblationFlags, Model};

fn main() -> kgvqa::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| {
        let tmp = std::env::temp_dir().join("kgvqa-overfit");
        kgvqa::harness::synth::generate(
            &GenSpec { n_questions: 600, ..GenSpec::default() },
            &tmp,
        )
        .expect("generator");
        kgvqa::harness::desk_config(&tmp)
            .save(tmp.join("config.toml"))
            .expect("config");
        tmp.to_string_lossy().into_owned()
    });
    let cfg = RunConfig::load(format!("{}/config.toml", dir))?;

    let graph = KnowledgeGraph::load(cfg.graph_path())?;
    let all = load_examples(cfg.train_path())?;
    let detections = DetectionIndex::load(cfg.detections_path())?;
    let wordvecs = WordVectorTable::from_reader(std::io::BufReader::new(std::fs::File::open(
        cfg.wordvecs_path(),
    )?))?;
    let encoder_vocab = kgvqa::encoder::WordVocab::from_reader(std::io::BufReader::new(
        std::fs::File::open(cfg.encoder_vocab_path())?,
    ))?;
    let answer_vocab = AnswerVocab::build(
        all.iter().flat_map(|ex| ex.answers.iter().map(|a| (a.answer.as_str(), a.count))),
        cfg.answer_min_count,
    );
    let regions = RegionSynthesizer::new(cfg.model.region_dim, cfg.region_seed);

    let eight: Vec<_> = all.into_iter().take(8).collect();
    let mut model: Model<f32> = Model::new(
        cfg.model.clone(),
        AblationFlags::default(),
        Some(graph),
        answer_vocab,
        encoder_vocab,
        &wordvecs,
        11,
    )?;
    let train_cfg = TrainConfig {
        batch_size: 8,
        learning_rate: 3e-3,
        warmup_steps: 20,
        total_steps: 400,
        seed: 11,
        log_every: 25,
        ..TrainConfig::default()
    };
    let record = train(&mut model, &eight, &detections, &regions, &train_cfg)?;
    for (step, loss) in &record.losses {
        println!("step {:>4}  loss {:.5}", step, loss);
    }
    println!(
        "final loss {:.5} -> {}",
        record.final_loss,
        if record.final_loss < 0.05 { "overfit ok" } else { "NOT overfitting" }
    );
    Ok(())
}
