//! Desk-scale synthetic task generator.
//!
//! Each generated answer concept z is connected in the knowledge graph to
//! two question concepts {a1, a2} and two visual concepts {b1, b2}, with
//! the guarantee that no other answer shares both a question concept and a
//! visual concept with it. Training questions always pair (a1, b1); held-out
//! questions pair (a2, b2). Both cells have the same unique common neighbor
//! z in the graph, but the held-out pairing never occurs in the training
//! data, so the answer is recoverable only by following edges: a model
//! without the real graph is reduced to guessing.
//!
//! A control split ("read out the marker X" → X) is answerable from the
//! question alone and never enters the graph.
//!
//! The generator emits raw per-source triple files (including malformed and
//! filtered-out lines, so the ingestion pipeline is exercised end to end),
//! runs the real build over them, and verifies the resulting graph honors
//! the construction contract.

use crate::error::{Error, Result};
use crate::grounding::{SymbolSource, VisualSymbolObservation, WORD_VECTOR_DIM};
use crate::harness::data::{save_examples, AnswerAnnotation, DetectionIndex, DetectionRecord, QaExample};
use crate::kg::{
    build_graph, parse_encyclopedic, parse_flat, parse_scene_graph, BuildReport, ConceptSet,
    KnowledgeGraph, StopWords, Triple, TripleSource,
};
use crate::seed::stream;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenSpec {
    /// Total concept budget, split into question/visual/answer/control pools.
    pub n_concepts: usize,
    /// Distinct relation types (half carry question-side edges, half
    /// visual-side).
    pub n_relations: usize,
    /// Total question count across all splits.
    pub n_questions: usize,
    /// Graph distance from evidence concepts to the answer node.
    pub knowledge_hops: usize,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            n_concepts: 192,
            n_relations: 4,
            n_questions: 3000,
            knowledge_hops: 1,
            seed: 7,
        }
    }
}

struct Pools {
    question: Vec<String>,
    visual: Vec<String>,
    answers: Vec<String>,
    control: Vec<String>,
}

/// Per-answer concept assignment: indices into the question/visual pools.
#[derive(Debug, Clone, Copy)]
struct Assign {
    a1: usize,
    a2: usize,
    b1: usize,
    b2: usize,
}

const KNOWLEDGE_TEMPLATES: [&str; 4] = [
    "what pairs with the {} in this scene",
    "which keepsake goes with the {} here",
    "name the companion of the {} shown",
    "what belongs beside the {} in view",
];

const CONTROL_TEMPLATES: [&str; 3] = [
    "please read out the marker {}",
    "state the visible badge {}",
    "call out the printed label {}",
];

/// File names the generator writes under its output directory.
pub struct SynthPaths {
    pub root: PathBuf,
}

impl SynthPaths {
    pub fn new<P: AsRef<Path>>(root: P) -> SynthPaths {
        SynthPaths { root: root.as_ref().to_path_buf() }
    }

    pub fn sources_dir(&self) -> PathBuf {
        self.root.join("sources")
    }

    pub fn concepts(&self) -> PathBuf {
        self.root.join("concepts.txt")
    }

    pub fn stopwords(&self) -> PathBuf {
        self.root.join("stopwords.txt")
    }

    pub fn graph(&self) -> PathBuf {
        self.root.join("graph.kg")
    }

    pub fn build_report(&self) -> PathBuf {
        self.root.join("build_report.json")
    }

    pub fn train(&self) -> PathBuf {
        self.root.join("train.jsonl")
    }

    pub fn test_knowledge(&self) -> PathBuf {
        self.root.join("test_knowledge.jsonl")
    }

    pub fn test_control(&self) -> PathBuf {
        self.root.join("test_control.jsonl")
    }

    pub fn detections(&self) -> PathBuf {
        self.root.join("detections.jsonl")
    }

    pub fn wordvecs(&self) -> PathBuf {
        self.root.join("wordvecs.txt")
    }

    pub fn encoder_vocab(&self) -> PathBuf {
        self.root.join("encoder_vocab.txt")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
}

/// Everything the generator produced, in memory plus on disk.
pub struct SynthArtifacts {
    pub paths: SynthPaths,
    pub graph: KnowledgeGraph,
    pub build_report: BuildReport,
    pub train: Vec<QaExample>,
    pub test_knowledge: Vec<QaExample>,
    pub test_control: Vec<QaExample>,
    pub detections: DetectionIndex,
}

fn pools(spec: &GenSpec) -> Result<Pools> {
    // answers = 2x the question pool, so every question concept anchors
    // exactly two answers; rectangle density stays low enough to place
    let nq = spec.n_concepts / 5;
    let nv = spec.n_concepts / 5;
    let na = 2 * spec.n_concepts / 5;
    let nc = spec.n_concepts.saturating_sub(nq + nv + na);
    if nq < 6 || nv < 6 || na < nq || nc < 2 {
        return Err(Error::InfeasibleSpec(format!(
            "n_concepts {} too small: pools {}/{}/{}/{}",
            spec.n_concepts, nq, nv, na, nc
        )));
    }
    Ok(Pools {
        question: (0..nq).map(|i| format!("widget{:02}", i)).collect(),
        visual: (0..nv).map(|i| format!("gadget{:02}", i)).collect(),
        answers: (0..na).map(|i| format!("relic{:02}", i)).collect(),
        control: (0..nc).map(|i| format!("token{:02}", i)).collect(),
    })
}

/// Sample per-answer assignments under the uniqueness constraint: no two
/// answers may share both a question concept and a visual concept.
///
/// The (a1, b1) anchors walk a diagonal of the pool grid so every concept
/// appears in training data and no two answers share an anchor pair. The
/// (a2, b2) members are rejection-sampled against every other answer's set,
/// where later answers are represented by their anchors (they only grow by
/// members sampled under the same symmetric check).
fn sample_assignments(
    rng: &mut ChaCha20Rng,
    n_answers: usize,
    nq: usize,
    nv: usize,
) -> Result<Vec<Assign>> {
    if 4 * n_answers > nq * nv {
        return Err(Error::InfeasibleSpec(format!(
            "{} answers cannot pack into a {}x{} concept grid",
            n_answers, nq, nv
        )));
    }
    for _restart in 0..8 {
        if let Some(out) = try_assignments(rng, n_answers, nq, nv) {
            return Ok(out);
        }
    }
    Err(Error::InfeasibleSpec(format!(
        "could not place {} answers under the uniqueness constraint; \
         increase n_concepts or lower the answer count",
        n_answers
    )))
}

fn try_assignments(
    rng: &mut ChaCha20Rng,
    n_answers: usize,
    nq: usize,
    nv: usize,
) -> Option<Vec<Assign>> {
    let visual_perm = {
        let mut p: Vec<usize> = (0..nv).collect();
        p.shuffle(rng);
        p
    };
    let mut sets: Vec<(BTreeSet<usize>, BTreeSet<usize>)> = (0..n_answers)
        .map(|k| {
            let a1 = k % nq;
            let b1 = visual_perm[(k + k / nq) % nv];
            ([a1].into(), [b1].into())
        })
        .collect();

    let mut out = Vec::with_capacity(n_answers);
    for k in 0..n_answers {
        let a1 = *sets[k].0.iter().next().expect("anchor present");
        let b1 = *sets[k].1.iter().next().expect("anchor present");
        let mut found = None;
        'search: for _ in 0..2000 {
            let a2 = rng.gen_range(0..nq);
            let b2 = rng.gen_range(0..nv);
            if a2 == a1 || b2 == b1 {
                continue;
            }
            let a: BTreeSet<usize> = [a1, a2].into();
            let b: BTreeSet<usize> = [b1, b2].into();
            for (j, (oa, ob)) in sets.iter().enumerate() {
                if j != k && !a.is_disjoint(oa) && !b.is_disjoint(ob) {
                    continue 'search;
                }
            }
            found = Some(Assign { a1, a2, b1, b2 });
            break;
        }
        let asg = found?;
        sets[k].0.insert(asg.a2);
        sets[k].1.insert(asg.b2);
        out.push(asg);
    }
    Some(out)
}

fn relation_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("rel{}", i)).collect()
}

/// Relation carrying question-side edges for answer k.
fn question_relation(relations: &[String], k: usize) -> &str {
    let half = (relations.len() / 2).max(1);
    &relations[k % half]
}

/// Relation carrying visual-side edges for answer k.
fn visual_relation(relations: &[String], k: usize) -> &str {
    let half = (relations.len() / 2).max(1);
    let rest = relations.len() - half;
    &relations[half + k % rest]
}

/// Core knowledge triples (head, relation, tail) plus waypoint concepts for
/// multi-hop chains.
fn core_triples(
    pools: &Pools,
    assigns: &[Assign],
    relations: &[String],
    hops: usize,
) -> (Vec<(String, String, String)>, Vec<String>) {
    let mut triples = Vec::new();
    let mut waypoints = Vec::new();
    for (k, asg) in assigns.iter().enumerate() {
        let z = pools.answers[k].clone();
        let q_rel = question_relation(relations, k).to_string();
        let v_rel = visual_relation(relations, k).to_string();
        for (side, rel, starts) in [
            ("q", &q_rel, [&pools.question[asg.a1], &pools.question[asg.a2]]),
            ("v", &v_rel, [&pools.visual[asg.b1], &pools.visual[asg.b2]]),
        ] {
            // chain: start -> w1 -> ... -> w_{hops-1} -> z, waypoints shared
            // by both starts of the side
            let mut chain = Vec::new();
            for h in 1..hops {
                let w = format!("waypoint{:02}{}{}", k, side, h);
                chain.push(w.clone());
                waypoints.push(w);
            }
            for start in starts {
                let first_target = chain.first().cloned().unwrap_or_else(|| z.clone());
                triples.push(((*start).clone(), rel.clone(), first_target));
            }
            for w in chain.windows(2) {
                triples.push((w[0].clone(), rel.clone(), w[1].clone()));
            }
            if let Some(last) = chain.last() {
                triples.push((last.clone(), rel.clone(), z.clone()));
            }
        }
    }
    triples.sort();
    triples.dedup();
    (triples, waypoints)
}

/// Distractor edges from visual to question concepts. They never point at
/// answer nodes, so pair uniqueness is untouched.
fn distractor_triples(
    pools: &Pools,
    relations: &[String],
    count: usize,
) -> Vec<(String, String, String)> {
    (0..count)
        .map(|d| {
            (
                pools.visual[d % pools.visual.len()].clone(),
                relations[d % relations.len()].clone(),
                pools.question[(d * 3 + 1) % pools.question.len()].clone(),
            )
        })
        .collect()
}

/// Spread triples across the four source files, in each source's native
/// format, salted with lines the pipeline must reject or skip.
fn write_sources(
    dir: &Path,
    triples: &[(String, String, String)],
    rng: &mut ChaCha20Rng,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut ency = std::io::BufWriter::new(std::fs::File::create(dir.join("encyclopedic.txt"))?);
    let mut common = std::io::BufWriter::new(std::fs::File::create(dir.join("commonsense.tsv"))?);
    let mut scene = std::io::BufWriter::new(std::fs::File::create(dir.join("scene_graph.tsv"))?);
    let mut haspart = std::io::BufWriter::new(std::fs::File::create(dir.join("haspart.tsv"))?);

    let uri = |concept: &str| {
        format!("<http://synth.local/resource/{}>", concept.replace(' ', "_"))
    };
    for (i, (h, r, t)) in triples.iter().enumerate() {
        match i % 4 {
            0 => writeln!(
                ency,
                "{} <http://synth.local/ontology/{}> {} .",
                uri(h),
                r,
                uri(t)
            )?,
            1 => writeln!(common, "{}\t{}\t{}", h, r, t)?,
            2 => writeln!(scene, "{}\t{}\t{}\t{}", h, r, t, 50 + (i % 37))?,
            _ => writeln!(haspart, "{}\t{}\t{}", h, r, t)?,
        }
    }

    // lines the filter stages must remove
    writeln!(common, "the\tis_a\tthing")?;
    writeln!(common, "zzqx\trel0\tvvrm")?;
    writeln!(common, "only\ttwo")?;
    writeln!(haspart, "a\thas_part\tbit")?;
    writeln!(scene, "boat\trel0\twater\t{}", rng.gen_range(1..50))?;
    writeln!(ency, "<http://synth.local/resource/Unlinked> stray .")?;

    ency.flush()?;
    common.flush()?;
    scene.flush()?;
    haspart.flush()?;
    Ok(())
}

fn parse_all_sources(dir: &Path) -> Result<Vec<Triple>> {
    let open = |name: &str| -> Result<std::io::BufReader<std::fs::File>> {
        Ok(std::io::BufReader::new(std::fs::File::open(dir.join(name))?))
    };
    let mut triples = Vec::new();
    triples.extend(parse_encyclopedic(open("encyclopedic.txt")?)?.0);
    triples.extend(parse_flat(open("commonsense.tsv")?, TripleSource::Commonsense)?.0);
    triples.extend(parse_scene_graph(open("scene_graph.tsv")?, 50)?.0);
    triples.extend(parse_flat(open("haspart.tsv")?, TripleSource::HasPart)?.0);
    Ok(triples)
}

fn stable_slot(seed: u64, concept: &str) -> SymbolSource {
    let idx = stream(seed, &format!("slot:{}", concept)).gen_range(0..4);
    SymbolSource::ALL[idx]
}

struct QuestionBatch {
    examples: Vec<QaExample>,
    detections: Vec<DetectionRecord>,
}

fn knowledge_questions(
    prefix: &str,
    count: usize,
    pools: &Pools,
    assigns: &[Assign],
    train_cell: bool,
    seed: u64,
    rng: &mut ChaCha20Rng,
) -> QuestionBatch {
    let mut examples = Vec::with_capacity(count);
    let mut detections = Vec::with_capacity(count);
    for i in 0..count {
        let k = i % assigns.len();
        let asg = assigns[k];
        let (x, y) = if train_cell {
            (&pools.question[asg.a1], &pools.visual[asg.b1])
        } else {
            (&pools.question[asg.a2], &pools.visual[asg.b2])
        };
        let template = KNOWLEDGE_TEMPLATES[rng.gen_range(0..KNOWLEDGE_TEMPLATES.len())];
        let question_id = format!("{}-{:05}", prefix, i);
        let image_id = format!("img-{}", question_id);
        examples.push(QaExample {
            question_id,
            image_id: image_id.clone(),
            question: template.replace("{}", x),
            answers: vec![AnswerAnnotation { answer: pools.answers[k].clone(), count: 10 }],
        });
        let confidence = rng.gen_range(0.78..0.97);
        detections.push(DetectionRecord {
            image_id,
            detections: vec![VisualSymbolObservation {
                concept: y.clone(),
                confidence,
                source: stable_slot(seed, y),
            }],
        });
    }
    QuestionBatch { examples, detections }
}

fn control_questions(
    prefix: &str,
    count: usize,
    pools: &Pools,
    seed: u64,
    rng: &mut ChaCha20Rng,
) -> QuestionBatch {
    let mut examples = Vec::with_capacity(count);
    let mut detections = Vec::with_capacity(count);
    for i in 0..count {
        let c = &pools.control[i % pools.control.len()];
        let template = CONTROL_TEMPLATES[rng.gen_range(0..CONTROL_TEMPLATES.len())];
        let question_id = format!("{}-{:05}", prefix, i);
        let image_id = format!("img-{}", question_id);
        examples.push(QaExample {
            question_id,
            image_id: image_id.clone(),
            question: template.replace("{}", c),
            answers: vec![AnswerAnnotation { answer: c.clone(), count: 10 }],
        });
        // an uninformative detection so control images are not empty
        let y = &pools.visual[rng.gen_range(0..pools.visual.len())];
        detections.push(DetectionRecord {
            image_id,
            detections: vec![VisualSymbolObservation {
                concept: y.clone(),
                confidence: rng.gen_range(0.78..0.97),
                source: stable_slot(seed, y),
            }],
        });
    }
    QuestionBatch { examples, detections }
}

fn write_wordvecs(path: &Path, words: &BTreeSet<String>, seed: u64) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for word in words {
        let mut rng = stream(seed, &format!("wordvec:{}", word));
        write!(w, "{}", word)?;
        for _ in 0..WORD_VECTOR_DIM {
            write!(w, " {:.5}", rng.gen_range(-0.3..0.3))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Check the construction contract on the built graph: every evidence
/// concept of every answer is adjacent to its answer node (or chain head
/// for multi-hop specs).
fn verify_contract(
    graph: &KnowledgeGraph,
    core: &[(String, String, String)],
) -> Result<()> {
    for (h, r, t) in core {
        let hid = graph
            .node_id(h)
            .ok_or_else(|| Error::InfeasibleSpec(format!("concept {} missing from graph", h)))?;
        let tid = graph
            .node_id(t)
            .ok_or_else(|| Error::InfeasibleSpec(format!("concept {} missing from graph", t)))?;
        let rid = graph
            .relations()
            .iter()
            .position(|name| name == r)
            .ok_or_else(|| Error::InfeasibleSpec(format!("relation {} missing from graph", r)))?;
        if !graph.relation_edges(rid).contains(&(hid, tid)) {
            return Err(Error::InfeasibleSpec(format!(
                "core edge ({}, {}, {}) lost in the build",
                h, r, t
            )));
        }
    }
    Ok(())
}

/// Generate the full synthetic task under `out_dir`.
pub fn generate<P: AsRef<Path>>(spec: &GenSpec, out_dir: P) -> Result<SynthArtifacts> {
    if spec.knowledge_hops < 1 {
        return Err(Error::InfeasibleSpec("knowledge_hops must be >= 1".into()));
    }
    if spec.n_relations < 2 {
        return Err(Error::InfeasibleSpec("need at least 2 relation types".into()));
    }
    if spec.n_questions < 24 {
        return Err(Error::InfeasibleSpec("need at least 24 questions".into()));
    }
    let pools = pools(spec)?;
    let n_answers = pools.answers.len();

    let knowledge_total = spec.n_questions * 5 / 6;
    let control_total = spec.n_questions - knowledge_total;
    let knowledge_test = knowledge_total / 6;
    let knowledge_train = knowledge_total - knowledge_test;
    let control_test = control_total / 6;
    let control_train = control_total - control_test;
    if knowledge_train < n_answers {
        return Err(Error::InfeasibleSpec(format!(
            "{} training questions cannot cover {} answers",
            knowledge_train, n_answers
        )));
    }
    if control_train < pools.control.len() {
        return Err(Error::InfeasibleSpec("control training split cannot cover its tokens".into()));
    }

    let mut rng = stream(spec.seed, "synth");
    let assigns =
        sample_assignments(&mut rng, n_answers, pools.question.len(), pools.visual.len())?;
    let relations = relation_names(spec.n_relations);
    let (mut core, waypoints) =
        core_triples(&pools, &assigns, &relations, spec.knowledge_hops);
    core.extend(distractor_triples(&pools, &relations, n_answers / 4));
    core.sort();
    core.dedup();

    let paths = SynthPaths::new(out_dir);
    std::fs::create_dir_all(&paths.root)?;
    write_sources(&paths.sources_dir(), &core, &mut rng)?;

    // question splits
    let kt = knowledge_questions("ktr", knowledge_train, &pools, &assigns, true, spec.seed, &mut rng);
    let ke = knowledge_questions("kte", knowledge_test, &pools, &assigns, false, spec.seed, &mut rng);
    let ct = control_questions("ctr", control_train, &pools, spec.seed, &mut rng);
    let ce = control_questions("cte", control_test, &pools, spec.seed, &mut rng);

    let mut train: Vec<QaExample> =
        kt.examples.into_iter().chain(ct.examples).collect();
    train.shuffle(&mut rng);

    // concept set from training data plus the visual symbol inventory
    // (waypoint concepts ride along as inventory labels so multi-hop chains
    // survive the concept filter)
    let train_answers: Vec<&str> =
        train.iter().flat_map(|ex| ex.answers.iter().map(|a| a.answer.as_str())).collect();
    let inventory: Vec<&str> = pools
        .visual
        .iter()
        .map(String::as_str)
        .chain(waypoints.iter().map(String::as_str))
        .collect();
    let concepts = ConceptSet::collect(
        train.iter().map(|ex| ex.question.as_str()),
        train_answers.into_iter(),
        inventory.into_iter(),
        3,
    );
    let stopwords = StopWords::bundled();

    // run the real ingestion pipeline over the written files
    let triples = parse_all_sources(&paths.sources_dir())?;
    let (graph, build_report) =
        build_graph(triples, &concepts, &stopwords, crate::kg::DEFAULT_RELATION_CAP)?;
    verify_contract(&graph, &core)?;

    // write artifacts
    std::fs::write(
        paths.concepts(),
        concepts.sorted().join("\n") + "\n",
    )?;
    std::fs::write(paths.stopwords(), include_str!("../kg/stopwords_en.txt"))?;
    graph.save(paths.graph())?;
    std::fs::write(paths.build_report(), serde_json::to_string_pretty(&build_report)?)?;
    save_examples(&train, paths.train())?;
    save_examples(&ke.examples, paths.test_knowledge())?;
    save_examples(&ce.examples, paths.test_control())?;

    let mut detection_records = Vec::new();
    detection_records.extend(kt.detections);
    detection_records.extend(ke.detections);
    detection_records.extend(ct.detections);
    detection_records.extend(ce.detections);
    detection_records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    DetectionIndex::save(&detection_records, paths.detections())?;

    let mut words: BTreeSet<String> = BTreeSet::new();
    for pool in [&pools.question, &pools.visual, &pools.answers, &pools.control] {
        words.extend(pool.iter().cloned());
    }
    words.extend(waypoints.iter().cloned());
    for t in KNOWLEDGE_TEMPLATES.iter().chain(CONTROL_TEMPLATES.iter()) {
        words.extend(crate::text::tokenize(t));
    }
    write_wordvecs(&paths.wordvecs(), &words, spec.seed)?;

    // encoder vocabulary: everything a question can contain
    let mut vocab_words: BTreeSet<String> = BTreeSet::new();
    for t in KNOWLEDGE_TEMPLATES.iter().chain(CONTROL_TEMPLATES.iter()) {
        vocab_words.extend(crate::text::tokenize(t));
    }
    vocab_words.extend(pools.question.iter().cloned());
    vocab_words.extend(pools.control.iter().cloned());
    std::fs::write(
        paths.encoder_vocab(),
        vocab_words.into_iter().collect::<Vec<_>>().join("\n") + "\n",
    )?;

    let mut detections = DetectionIndex::default();
    for rec in detection_records {
        detections.insert(rec.image_id, rec.detections);
    }

    Ok(SynthArtifacts {
        paths,
        graph,
        build_report,
        train,
        test_knowledge: ke.examples,
        test_control: ce.examples,
        detections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> GenSpec {
        GenSpec { n_concepts: 120, n_relations: 2, n_questions: 300, knowledge_hops: 1, seed: 5 }
    }

    #[test]
    fn generator_contract_one_hop() {
        let dir = tempfile::tempdir().unwrap();
        let art = generate(&small_spec(), dir.path()).unwrap();
        // every test question's answer is adjacent to both its question
        // concept and its visual symbol
        for ex in &art.test_knowledge {
            let answer = &ex.answers[0].answer;
            let z = art.graph.node_id(answer).expect("answer node");
            let x_tok = crate::text::tokenize(&ex.question)
                .into_iter()
                .find(|t| t.starts_with("widget"))
                .expect("question concept");
            let x = art.graph.node_id(&x_tok).expect("question node");
            let det = &art.detections.get(&ex.image_id)[0];
            let y = art.graph.node_id(&det.concept).expect("visual node");
            let adjacent = |from: usize, to: usize| {
                (0..art.graph.num_relations())
                    .any(|r| art.graph.relation_edges(r).contains(&(from, to)))
            };
            assert!(adjacent(x, z), "question concept must point at the answer");
            assert!(adjacent(y, z), "visual concept must point at the answer");
        }
    }

    #[test]
    fn held_out_pairs_never_occur_in_training() {
        let dir = tempfile::tempdir().unwrap();
        let art = generate(&small_spec(), dir.path()).unwrap();
        let pair_of = |ex: &QaExample, det: &DetectionIndex| {
            let x = crate::text::tokenize(&ex.question)
                .into_iter()
                .find(|t| t.starts_with("widget"))
                .unwrap();
            let y = det.get(&ex.image_id)[0].concept.clone();
            (x, y)
        };
        let train_pairs: BTreeSet<(String, String)> = art
            .train
            .iter()
            .filter(|ex| ex.question_id.starts_with("ktr"))
            .map(|ex| pair_of(ex, &art.detections))
            .collect();
        for ex in &art.test_knowledge {
            let pair = pair_of(ex, &art.detections);
            assert!(
                !train_pairs.contains(&pair),
                "held-out pair {:?} leaked into training",
                pair
            );
        }
    }

    #[test]
    fn control_answers_are_outside_the_graph() {
        let dir = tempfile::tempdir().unwrap();
        let art = generate(&small_spec(), dir.path()).unwrap();
        for ex in &art.test_control {
            let answer = &ex.answers[0].answer;
            assert!(art.graph.node_id(answer).is_none());
            let toks = crate::text::tokenize(&ex.question);
            assert!(toks.contains(answer), "control answer must appear in the question");
        }
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = generate(&small_spec(), d1.path()).unwrap();
        let b = generate(&small_spec(), d2.path()).unwrap();
        assert_eq!(a.train.len(), b.train.len());
        assert_eq!(
            serde_json::to_string(&a.train.first()).unwrap(),
            serde_json::to_string(&b.train.first()).unwrap()
        );
        assert_eq!(
            std::fs::read(a.paths.graph()).unwrap(),
            std::fs::read(b.paths.graph()).unwrap(),
            "graph files must be byte-identical"
        );
    }

    #[test]
    fn two_hop_chains_survive_the_filter() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GenSpec { knowledge_hops: 2, ..small_spec() };
        let art = generate(&spec, dir.path()).unwrap();
        assert!(art.graph.nodes().iter().any(|n| n.starts_with("waypoint")));
    }

    #[test]
    fn infeasible_specs_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(generate(
            &GenSpec { n_concepts: 20, ..small_spec() },
            dir.path()
        )
        .is_err());
        assert!(generate(
            &GenSpec { knowledge_hops: 0, ..small_spec() },
            dir.path()
        )
        .is_err());
        assert!(generate(&GenSpec { n_questions: 48, ..small_spec() }, dir.path()).is_err());
    }
}
