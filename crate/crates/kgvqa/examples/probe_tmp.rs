//! scratch diagnostic, not part of the deliverable
use kgvqa::fusion::AnswerVocab;
use kgvqa::grounding::WordVectorTable;
use kgvqa::harness::config::RunConfig;
use kgvqa::harness::data::{example_input, load_examples, DetectionIndex, RegionSynthesizer};
use kgvqa::harness::train::{train, TrainConfig};
use kgvqa::kg::KnowledgeGraph;
use kgvqa::model::{AblationFlags, Model};
use kgvqa::numerics::tape::Tape;

fn main() -> kgvqa::Result<()> {
    let dir = "/tmp/synth1";
    let cfg = RunConfig::load(format!("{}/config.toml", dir))?;
    let graph = KnowledgeGraph::load(cfg.graph_path())?;
    let all = load_examples(cfg.train_path())?;
    let detections = DetectionIndex::load(cfg.detections_path())?;
    let wordvecs = WordVectorTable::from_reader(std::io::BufReader::new(std::fs::File::open(cfg.wordvecs_path())?))?;
    let encoder_vocab = kgvqa::encoder::WordVocab::from_reader(std::io::BufReader::new(std::fs::File::open(cfg.encoder_vocab_path())?))?;
    let answer_vocab = AnswerVocab::build(all.iter().flat_map(|ex| ex.answers.iter().map(|a| (a.answer.as_str(), a.count))), cfg.answer_min_count);
    let regions = RegionSynthesizer::new(cfg.model.region_dim, cfg.region_seed);
    let eight: Vec<_> = all.into_iter().take(8).collect();
    println!("vocab size {}", answer_vocab.len());
    for ex in &eight {
        println!("q: {:<48} answer {} -> idx {:?}", ex.question, ex.answers[0].answer, answer_vocab.index_of(&ex.answers[0].answer));
    }
    let variant = std::env::args().nth(1).unwrap_or_default();
    let flags = if variant == "implicit" {
        AblationFlags { implicit_only: true, ..Default::default() }
    } else {
        AblationFlags::default()
    };
    let maybe_graph = if variant == "implicit" { None } else { Some(graph) };
    let mut model: Model<f32> = Model::new(cfg.model.clone(), flags, maybe_graph, answer_vocab, encoder_vocab, &wordvecs, 11)?;
    let tc = TrainConfig { batch_size: 8, learning_rate: 3e-3, warmup_steps: 20, total_steps: 60, seed: 11, log_every: 10, ..TrainConfig::default() };
    // watch the hot-slot trajectory
    for round in 0..6 {
        let rec = train(&mut model, &eight, &detections, &regions, &tc)?;
        let ex = &eight[0];
        let input = example_input(&model, ex, &detections, &regions)?;
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape)?;
        let pass = model.forward(&mut tape, &bound, &input)?;
        let pred = model.predict(&tape, &pass);
        let hot = model.answer_vocab.index_of(&ex.answers[0].answer).unwrap();
        let sym_hot = pred.symbolic.iter().find(|(i, _)| *i == hot).map(|(_, s)| *s);
        let bias = model.store.get("head.implicit.b").unwrap();
        println!("round {} loss {:.4} impl[hot] {:.5} max_impl {:.5} sym[hot] {:?} bias[hot] {:.4}",
            round, rec.final_loss, pred.implicit[hot],
            pred.implicit.iter().cloned().fold(f64::MIN, f64::max), sym_hot, bias.data()[hot]);
    }

    for ex in eight.iter().take(0) {
        let input = example_input(&model, ex, &detections, &regions)?;
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape)?;
        let pass = model.forward(&mut tape, &bound, &input)?;
        let pred = model.predict(&tape, &pass);
        let z = tape.value(pass.z_implicit);
        let znorm: f32 = z.data().iter().map(|v| v * v).sum::<f32>().sqrt();
        let hot = model.answer_vocab.index_of(&ex.answers[0].answer).unwrap();
        let target_sum: f32 = input.targets.data().iter().sum();
        let sym_hot = pred.symbolic.iter().find(|(i, _)| *i == hot).map(|(_, s)| *s);
        println!(
            "q {}: |z|={:.4} target_sum={} implicit[hot]={:.4} max_impl={:.4} sym[hot]={:?} loss={:.4}",
            ex.question_id, znorm, target_sum, pred.implicit[hot],
            pred.implicit.iter().cloned().fold(f64::MIN, f64::max),
            sym_hot,
            tape.value(pass.loss).item(),
        );
    }
    Ok(())
}
