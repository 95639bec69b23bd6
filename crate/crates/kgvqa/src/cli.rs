//! The `kgvqa` binary: thin argument parsing and dispatch over the library.

use crate::error::{Error, Result};
use crate::fusion::AnswerVocab;
use crate::grounding::WordVectorTable;
use crate::harness::ablate::{self, RunContext};
use crate::harness::config::RunConfig;
use crate::harness::data::{load_examples, DetectionIndex, RegionSynthesizer};
use crate::harness::eval::evaluate;
use crate::harness::explain::explain;
use crate::harness::synth::{generate, GenSpec};
use crate::harness::train::train;
use crate::harness::{desk_config, rewire_random};
use crate::kg::{
    build_graph, parse_encyclopedic, parse_flat, parse_scene_graph, ConceptSet, KnowledgeGraph,
    StopWords, Triple, TripleSource, DEFAULT_RELATION_CAP,
};
use crate::model::{AblationFlags, Model};
use crate::numerics::checkpoint;
use clap::{Args, Parser, Subcommand};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "kgvqa", version, about = "Knowledge-grounded VQA engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse triple sources and build the filtered knowledge graph.
    BuildKg(BuildKgArgs),
    /// Generate a synthetic dataset, graph and config.
    GenSynth(GenSynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split.
    Eval(EvalArgs),
    /// Train and evaluate an ablation matrix.
    Ablate(AblateArgs),
    /// Trace one question through a trained model.
    Explain(ExplainArgs),
    /// Verify analytic gradients against finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct BuildKgArgs {
    /// Directory holding encyclopedic.txt, commonsense.tsv,
    /// scene_graph.tsv, haspart.tsv (missing files are skipped).
    #[arg(long)]
    sources: PathBuf,
    /// Concept file, one concept per line.
    #[arg(long)]
    concepts: PathBuf,
    /// Stop-word file, one word per line (defaults to the bundled list).
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RELATION_CAP)]
    relation_cap: usize,
    /// Scene-graph edges below this count are dropped.
    #[arg(long, default_value_t = 50)]
    min_scene_count: i64,
    /// Output graph file.
    #[arg(long)]
    out: PathBuf,
    /// JSON build report (defaults next to the graph).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = GenSpec::default().n_concepts)]
    concepts: usize,
    #[arg(long, default_value_t = GenSpec::default().n_relations)]
    relations: usize,
    #[arg(long, default_value_t = GenSpec::default().n_questions)]
    questions: usize,
    #[arg(long, default_value_t = GenSpec::default().knowledge_hops)]
    hops: usize,
    #[arg(long, default_value_t = GenSpec::default().seed)]
    seed: u64,
}

#[derive(Args)]
struct CommonRunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's data root (also via KGVQA_DATA_ROOT).
    #[arg(long)]
    data_root: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    /// Checkpoint output path (default <data_root>/model.ckpt).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ablation row to train (a name from `ablate --list`); default "full".
    #[arg(long, default_value = "full")]
    row: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Which split to evaluate: "knowledge", "control", "train", or a
    /// jsonl path.
    #[arg(long, default_value = "knowledge")]
    split: String,
    /// Ablation row the checkpoint was trained with.
    #[arg(long, default_value = "full")]
    row: String,
    /// Training seed the checkpoint used (matters for random-graph rows).
    #[arg(long)]
    seed: Option<u64>,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a JSON-lines prediction dump here.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    /// Comma-separated row names, or "knowledge-isolation" / "all".
    #[arg(long, default_value = "knowledge-isolation")]
    rows: String,
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    #[arg(long, default_value_t = 1)]
    base_seed: u64,
    /// Directory for the JSON table (printed to stdout regardless).
    #[arg(long)]
    out: Option<PathBuf>,
    /// List available row names and exit.
    #[arg(long)]
    list: bool,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    common: CommonRunArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    question_id: String,
    /// Which split holds the question: "knowledge", "control", "train".
    #[arg(long, default_value = "knowledge")]
    split: String,
    #[arg(long, default_value = "full")]
    row: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 5)]
    top_k: usize,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
}

pub fn run() -> Result<()> {
    match Cli::parse().command {
        Command::BuildKg(args) => cmd_build_kg(args),
        Command::GenSynth(args) => cmd_gen_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Explain(args) => cmd_explain(args),
        Command::GradCheck(args) => crate::verify::run_cli_report(args.eps),
    }
}

fn cmd_build_kg(args: BuildKgArgs) -> Result<()> {
    let mut triples: Vec<Triple> = Vec::new();
    let note = |name: &str, parsed: usize, skipped: usize| {
        println!("{:<18} parsed {:>8}  skipped {:>6}", name, parsed, skipped);
    };
    let open = |name: &str| -> Option<BufReader<File>> {
        File::open(args.sources.join(name)).ok().map(BufReader::new)
    };
    if let Some(r) = open("encyclopedic.txt") {
        let (t, s) = parse_encyclopedic(r)?;
        note("encyclopedic", s.parsed, s.skipped);
        triples.extend(t);
    }
    if let Some(r) = open("commonsense.tsv") {
        let (t, s) = parse_flat(r, TripleSource::Commonsense)?;
        note("commonsense", s.parsed, s.skipped);
        triples.extend(t);
    }
    if let Some(r) = open("scene_graph.tsv") {
        let (t, s) = parse_scene_graph(r, args.min_scene_count)?;
        note("scene-graph", s.parsed, s.skipped);
        triples.extend(t);
    }
    if let Some(r) = open("haspart.tsv") {
        let (t, s) = parse_flat(r, TripleSource::HasPart)?;
        note("has-part", s.parsed, s.skipped);
        triples.extend(t);
    }
    if triples.is_empty() {
        return Err(Error::Data(format!(
            "no source files found under {}",
            args.sources.display()
        )));
    }

    let concepts = ConceptSet::from_reader(BufReader::new(File::open(&args.concepts)?))?;
    let stopwords = match &args.stopwords {
        Some(p) => StopWords::from_reader(BufReader::new(File::open(p)?))?,
        None => StopWords::bundled(),
    };
    let (graph, report) = build_graph(triples, &concepts, &stopwords, args.relation_cap)?;
    graph.save(&args.out)?;
    let report_path =
        args.report.unwrap_or_else(|| args.out.with_extension("report.json"));
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    println!(
        "graph: {} nodes, {} edges, {} relations -> {}",
        graph.num_nodes(),
        graph.num_edges(),
        graph.num_relations(),
        args.out.display()
    );
    println!("report -> {}", report_path.display());
    Ok(())
}

fn cmd_gen_synth(args: GenSynthArgs) -> Result<()> {
    let spec = GenSpec {
        n_concepts: args.concepts,
        n_relations: args.relations,
        n_questions: args.questions,
        knowledge_hops: args.hops,
        seed: args.seed,
    };
    let artifacts = generate(&spec, &args.out)?;
    let cfg = desk_config(&args.out);
    cfg.save(artifacts.paths.config())?;
    println!(
        "synthetic task -> {}\n  graph: {} nodes, {} edges\n  train {} / test-knowledge {} / test-control {}\n  config: {}",
        args.out.display(),
        artifacts.graph.num_nodes(),
        artifacts.graph.num_edges(),
        artifacts.train.len(),
        artifacts.test_knowledge.len(),
        artifacts.test_control.len(),
        artifacts.paths.config().display()
    );
    Ok(())
}

/// Data shared by train/eval/ablate/explain.
struct LoadedRun {
    cfg: RunConfig,
    graph: KnowledgeGraph,
    train_data: Vec<crate::harness::data::QaExample>,
    detections: DetectionIndex,
    wordvecs: WordVectorTable,
    encoder_vocab: crate::encoder::WordVocab,
    answer_vocab: AnswerVocab,
    regions: RegionSynthesizer,
}

fn load_run(common: &CommonRunArgs) -> Result<LoadedRun> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(root) = &common.data_root {
        cfg.data_root = root.clone();
    }
    let graph = KnowledgeGraph::load(cfg.graph_path())?;
    let train_data = load_examples(cfg.train_path())?;
    let detections = DetectionIndex::load(cfg.detections_path())?;
    let wordvecs =
        WordVectorTable::from_reader(BufReader::new(File::open(cfg.wordvecs_path())?))?;
    let encoder_vocab = crate::encoder::WordVocab::from_reader(BufReader::new(File::open(
        cfg.encoder_vocab_path(),
    )?))?;
    let answer_vocab = AnswerVocab::build(
        train_data
            .iter()
            .flat_map(|ex| ex.answers.iter().map(|a| (a.answer.as_str(), a.count))),
        cfg.answer_min_count,
    );
    let regions = RegionSynthesizer::new(cfg.model.region_dim, cfg.region_seed);
    Ok(LoadedRun {
        cfg,
        graph,
        train_data,
        detections,
        wordvecs,
        encoder_vocab,
        answer_vocab,
        regions,
    })
}

fn flags_for_row(name: &str) -> Result<AblationFlags> {
    ablate::spec_by_name(name)
        .map(|s| s.flags)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation row: {}", name)))
}

fn build_model(run: &LoadedRun, flags: AblationFlags, seed: u64) -> Result<Model<f32>> {
    let graph = if flags.uses_graph() {
        if flags.random_graph {
            Some(rewire_random(&run.graph, seed)?)
        } else {
            Some(run.graph.clone())
        }
    } else {
        None
    };
    Model::new(
        run.cfg.model.clone(),
        flags,
        graph,
        run.answer_vocab.clone(),
        run.encoder_vocab.clone(),
        &run.wordvecs,
        seed,
    )
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let run = load_run(&args.common)?;
    let mut train_cfg = run.cfg.train.clone();
    if let Some(s) = args.seed {
        train_cfg.seed = s;
    }
    if let Some(s) = args.steps {
        train_cfg.total_steps = s;
        train_cfg.warmup_steps = train_cfg.warmup_steps.min(s);
    }
    if let Some(b) = args.batch {
        train_cfg.batch_size = b;
    }
    if let Some(lr) = args.lr {
        train_cfg.learning_rate = lr;
    }
    if let Some(w) = args.warmup {
        train_cfg.warmup_steps = w;
    }
    let flags = flags_for_row(&args.row)?;
    let mut model = build_model(&run, flags, train_cfg.seed)?;
    println!(
        "training row '{}': {} parameters, {} examples, {} steps",
        args.row,
        model.store.num_values(),
        run.train_data.len(),
        train_cfg.total_steps
    );
    let record = train(&mut model, &run.train_data, &run.detections, &run.regions, &train_cfg)?;
    for (step, loss) in &record.losses {
        println!("step {:>6}  loss {:.5}", step, loss);
    }
    let out = args.out.unwrap_or_else(|| run.cfg.data_root.join("model.ckpt"));
    checkpoint::save(&model.store, &out)?;
    model.answer_vocab.save(out.with_extension("answers.txt"))?;
    println!("checkpoint -> {} (final loss {:.5})", out.display(), record.final_loss);
    Ok(())
}

fn split_data(run: &LoadedRun, split: &str) -> Result<Vec<crate::harness::data::QaExample>> {
    match split {
        "knowledge" => load_examples(run.cfg.test_knowledge_path()),
        "control" => load_examples(run.cfg.test_control_path()),
        "train" => Ok(run.train_data.clone()),
        path => load_examples(Path::new(path)),
    }
}

fn load_trained_model(
    run: &LoadedRun,
    row: &str,
    seed: Option<u64>,
    checkpoint_path: &Path,
) -> Result<Model<f32>> {
    let flags = flags_for_row(row)?;
    // the seed matters for random-graph rows (it decides the rewiring);
    // for everything else it only sets init values the checkpoint replaces
    let mut model = build_model(run, flags, seed.unwrap_or(run.cfg.train.seed))?;
    model.set_params(checkpoint::load(checkpoint_path)?)?;
    let answers_path = checkpoint_path.with_extension("answers.txt");
    if answers_path.exists() {
        let saved = AnswerVocab::load(&answers_path)?;
        if saved.answers() != model.answer_vocab.answers() {
            return Err(Error::Config(
                "answer vocabulary mismatch between checkpoint and training data".into(),
            ));
        }
    }
    Ok(model)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let run = load_run(&args.common)?;
    let model = load_trained_model(&run, &args.row, args.seed, &args.checkpoint)?;
    let data = split_data(&run, &args.split)?;
    let (report, records) = evaluate(&model, &data, &run.detections, &run.regions)?;
    println!("{}", report.text_summary());
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_string_pretty(&report)?)?;
        println!("report -> {}", out.display());
    }
    if let Some(dump) = &args.dump {
        let mut w = std::io::BufWriter::new(File::create(dump)?);
        for rec in &records {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        println!("predictions -> {}", dump.display());
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    if args.list {
        for spec in ablate::full_matrix() {
            println!("{}", spec.name);
        }
        return Ok(());
    }
    let run = load_run(&args.common)?;
    let specs = match args.rows.as_str() {
        "knowledge-isolation" => ablate::knowledge_isolation_matrix(),
        "all" => ablate::full_matrix(),
        names => names
            .split(',')
            .map(|n| {
                ablate::spec_by_name(n.trim())
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown row: {}", n)))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let eval_data = split_data(&run, "knowledge")?;
    let ctx = RunContext {
        dims: run.cfg.model.clone(),
        graph: &run.graph,
        answer_vocab: &run.answer_vocab,
        encoder_vocab: &run.encoder_vocab,
        wordvec_table: &run.wordvecs,
        train_data: &run.train_data,
        eval_data: &eval_data,
        detections: &run.detections,
        regions: &run.regions,
    };
    let table = ablate::run_ablation_matrix(
        &specs,
        &ctx,
        &run.cfg.train,
        args.seeds,
        args.base_seed,
        |name, seed, report| {
            println!(
                "  [{}] seed {:>20} acc {:.4} oracle {:.4}",
                name, seed, report.soft_accuracy, report.oracle_accuracy
            );
        },
    )?;
    println!("\n{}", table.text_table());
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        let path = out.join("ablation.json");
        std::fs::write(&path, serde_json::to_string_pretty(&table)?)?;
        println!("table -> {}", path.display());
    }
    Ok(())
}

fn cmd_explain(args: ExplainArgs) -> Result<()> {
    let run = load_run(&args.common)?;
    let model = load_trained_model(&run, &args.row, args.seed, &args.checkpoint)?;
    let data = split_data(&run, &args.split)?;
    let trace = explain(
        &model,
        &data,
        &args.question_id,
        &run.detections,
        &run.regions,
        args.top_k,
    )?;
    println!("{}", trace);
    Ok(())
}
