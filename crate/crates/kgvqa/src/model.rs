//! Full-network assembly: implicit encoder, symbol grounding, graph
//! network and the two answer heads on one tape, with every ablation
//! switch wired through.

use crate::encoder::{self, EncoderConfig, QuestionEncoding, RegionFeatures, WordVocab};
use crate::error::{Error, Result};
use crate::fusion::{self, AnswerNodeMap, AnswerVocab, PredictionPair};
use crate::grounding::{
    self, SymbolSource, VisualSymbolObservation, WordVectorTable, COMPRESS_DIM, NODE_INPUT_DIM,
    SYMBOL_SLOTS, WORD_VECTOR_DIM,
};
use crate::kg::{KnowledgeGraph, TripleSource};
use crate::numerics::store::{BoundParams, ParameterStore};
use crate::numerics::tape::{Tape, TensorId};
use crate::numerics::tensor::{Real, Tensor};
use crate::rgcn::{self, RelationAggregators, RgcnConfig};
use crate::seed::stream;
use serde::{Deserialize, Serialize};

/// Every dimension of the network in one place. Shipped configs are pinned
/// to the 433 → 128 → 128 contract by [`ModelDims::validate_shipped`];
/// tests may construct smaller toys directly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Encoder pooled hidden size.
    pub d_z: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub region_dim: usize,
    pub max_len: usize,
    /// Word-vector block width of the node inputs.
    pub word_dim: usize,
    /// Compressed implicit block width of the node inputs.
    pub compress_dim: usize,
    /// Graph conv hidden size.
    pub node_hidden: usize,
    pub conv_layers: usize,
    /// Inner dimension of the bilinear symbolic head.
    pub fusion_dim: usize,
    /// Longest n-gram the question indicator matches.
    pub ngram_cap: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            d_z: 768,
            blocks: 2,
            heads: 1,
            ff_dim: 1024,
            region_dim: 2048,
            max_len: 64,
            word_dim: WORD_VECTOR_DIM,
            compress_dim: COMPRESS_DIM,
            node_hidden: 128,
            conv_layers: 2,
            fusion_dim: 128,
            ngram_cap: 3,
        }
    }
}

impl ModelDims {
    /// Width of the assembled per-node input row.
    pub fn node_input_dim(&self) -> usize {
        1 + SYMBOL_SLOTS + self.word_dim + self.compress_dim
    }

    /// The contract every shipped configuration must satisfy: node inputs
    /// of width 433 feeding a 2-layer 433→128→128 graph stack.
    pub fn validate_shipped(&self) -> Result<()> {
        if self.word_dim != WORD_VECTOR_DIM {
            return Err(Error::Config(format!(
                "word_dim must be {}, got {}",
                WORD_VECTOR_DIM, self.word_dim
            )));
        }
        if self.compress_dim != COMPRESS_DIM {
            return Err(Error::Config(format!(
                "compress_dim must be {}, got {}",
                COMPRESS_DIM, self.compress_dim
            )));
        }
        if self.node_input_dim() != NODE_INPUT_DIM {
            return Err(Error::Config(format!(
                "node input width must be {}, got {}",
                NODE_INPUT_DIM,
                self.node_input_dim()
            )));
        }
        if self.node_hidden != 128 {
            return Err(Error::Config(format!(
                "node hidden size must be 128, got {}",
                self.node_hidden
            )));
        }
        if self.conv_layers != 2 {
            return Err(Error::Config(format!(
                "conv layer count must be 2, got {}",
                self.conv_layers
            )));
        }
        if self.heads != 1 {
            return Err(Error::Config("encoder must be single-head".into()));
        }
        Ok(())
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            d_z: self.d_z,
            blocks: self.blocks,
            heads: self.heads,
            ff_dim: self.ff_dim,
            region_dim: self.region_dim,
            vocab_size,
            max_len: self.max_len,
        }
    }

    pub fn rgcn_config(&self, num_relations: usize) -> RgcnConfig {
        RgcnConfig {
            num_layers: self.conv_layers,
            input_dim: self.node_input_dim(),
            hidden_dim: self.node_hidden,
            num_relations,
        }
    }
}

/// Every ablation switch of the experiment matrix. Flags must be mutually
/// consistent; [`AblationFlags::validate`] rejects contradictions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Drop the graph branch entirely: the implicit head alone.
    pub implicit_only: bool,
    /// Train/evaluate against a seeded uniform rewiring of the graph.
    pub random_graph: bool,
    /// Replace the relational conv with the type- and direction-blind GCN.
    pub gcn_variant: bool,
    /// Replace the bilinear symbolic head with a linear layer over node
    /// states only.
    pub no_late_fusion: bool,
    /// Zero the compressed implicit block of the node inputs.
    pub no_implicit_input_to_graph: bool,
    /// Stop gradients from the graph branch into the encoder.
    pub no_backprop_into_encoder: bool,
    /// Stop gradients from the implicit head into the encoder.
    pub no_backprop_implicit_head: bool,
    /// Summarize the graph into one vector fed to the encoder; predict via
    /// the implicit head only.
    pub feed_graph_into_encoder: bool,
    /// Zero the question-indicator column.
    pub no_question_indicator: bool,
    /// Zero the four confidence columns.
    pub no_image_confidences: bool,
    /// Zero the word-vector block.
    pub no_word_vectors: bool,
    /// Keep only these knowledge sources' edges.
    pub graph_sources: Option<Vec<TripleSource>>,
    /// Keep only detections from these visual systems.
    pub symbol_sources: Option<Vec<SymbolSource>>,
}

impl AblationFlags {
    pub fn validate(&self) -> Result<()> {
        let inconsistent = |msg: &str| Err(Error::InconsistentAblation(msg.to_string()));
        if self.implicit_only {
            if self.random_graph
                || self.gcn_variant
                || self.no_late_fusion
                || self.no_implicit_input_to_graph
                || self.no_backprop_into_encoder
                || self.feed_graph_into_encoder
                || self.no_question_indicator
                || self.no_image_confidences
                || self.no_word_vectors
                || self.graph_sources.is_some()
                || self.symbol_sources.is_some()
            {
                return inconsistent("implicit_only excludes every graph-side flag");
            }
        }
        if self.feed_graph_into_encoder {
            if self.no_late_fusion {
                return inconsistent(
                    "feed_graph_into_encoder already disables the symbolic head",
                );
            }
            if self.no_implicit_input_to_graph {
                return inconsistent(
                    "feed_graph_into_encoder never feeds the implicit state to the graph",
                );
            }
            if self.no_backprop_into_encoder || self.no_backprop_implicit_head {
                return inconsistent(
                    "feed_graph_into_encoder trains through the encoder's only head",
                );
            }
        }
        if let Some(sources) = &self.graph_sources {
            if sources.is_empty() {
                return inconsistent("graph_sources must keep at least one source");
            }
        }
        if let Some(sources) = &self.symbol_sources {
            if sources.is_empty() {
                return inconsistent("symbol_sources must keep at least one source");
            }
        }
        Ok(())
    }

    /// Whether the model has a graph branch at all.
    pub fn uses_graph(&self) -> bool {
        !self.implicit_only
    }

    /// Whether the model predicts from the symbolic head.
    pub fn has_symbolic_head(&self) -> bool {
        !self.implicit_only && !self.feed_graph_into_encoder
    }
}

struct GraphAssets<T: Real> {
    graph: KnowledgeGraph,
    aggs: RelationAggregators<T>,
    /// Precomputed n × word_dim block; zeroed per flags at forward time.
    wordvec_block: Tensor<T>,
}

/// One (question, image, targets) instance ready for the tape.
pub struct ExampleInput<T: Real> {
    pub question: QuestionEncoding,
    pub regions: RegionFeatures<T>,
    pub observations: Vec<VisualSymbolObservation>,
    /// 1×a soft labels over the answer vocabulary.
    pub targets: Tensor<T>,
}

/// Tape handles produced by one forward pass.
pub struct ForwardPass {
    pub z_implicit: TensorId,
    pub y_implicit: TensorId,
    /// m×1 scores over mapped answers; absent when the model has no
    /// symbolic head or no answer maps into the graph.
    pub y_symbolic: Option<TensorId>,
    pub loss: TensorId,
}

/// The assembled network. Owns its parameters and the graph-side caches.
pub struct Model<T: Real> {
    pub dims: ModelDims,
    pub flags: AblationFlags,
    pub answer_vocab: AnswerVocab,
    pub answer_map: AnswerNodeMap,
    pub encoder_vocab: WordVocab,
    pub store: ParameterStore<T>,
    enc_cfg: EncoderConfig,
    graph: Option<GraphAssets<T>>,
}

impl<T: Real> Model<T> {
    /// Build a model with freshly initialized parameters.
    ///
    /// `graph` is required unless `flags.implicit_only`. Graph-source
    /// filtering is applied here; random rewiring is the harness's job and
    /// must happen before construction.
    pub fn new(
        dims: ModelDims,
        flags: AblationFlags,
        graph: Option<KnowledgeGraph>,
        answer_vocab: AnswerVocab,
        encoder_vocab: WordVocab,
        wordvec_table: &WordVectorTable,
        seed: u64,
    ) -> Result<Model<T>> {
        flags.validate()?;
        if answer_vocab.is_empty() {
            return Err(Error::Config("empty answer vocabulary".into()));
        }
        let graph = match (flags.uses_graph(), graph) {
            (true, Some(g)) => {
                let g = match &flags.graph_sources {
                    Some(sources) => g.filter_sources(sources)?,
                    None => g,
                };
                Some(g)
            }
            (true, None) => {
                return Err(Error::Config("model needs a knowledge graph".into()));
            }
            (false, _) => None,
        };

        if wordvec_table.dim() != dims.word_dim {
            return Err(Error::Config(format!(
                "word-vector table dim {} != model word_dim {}",
                wordvec_table.dim(),
                dims.word_dim
            )));
        }

        let answer_map = match &graph {
            Some(g) => AnswerNodeMap::build(&answer_vocab, g),
            None => AnswerNodeMap::unmapped(answer_vocab.len()),
        };

        let enc_cfg = dims.encoder_config(encoder_vocab.len());
        let mut store = ParameterStore::new();
        let mut rng = stream(seed, "model-init");

        encoder::init_params(&mut store, &enc_cfg, &mut rng)?;
        fusion::init_implicit_head(&mut store, dims.d_z, answer_vocab.len(), &mut rng)?;

        let assets = match graph {
            Some(g) => {
                let rgcn_cfg = dims.rgcn_config(g.num_relations());
                if flags.gcn_variant {
                    rgcn::init_gcn_params(&mut store, &rgcn_cfg, &mut rng)?;
                } else {
                    rgcn::init_rgcn_params(&mut store, &rgcn_cfg, &mut rng)?;
                }
                if flags.feed_graph_into_encoder {
                    rgcn::init_summary_params(
                        &mut store,
                        dims.node_hidden,
                        dims.compress_dim,
                        &mut rng,
                    )?;
                    encoder::init_summary_embed_params(
                        &mut store,
                        dims.compress_dim,
                        dims.d_z,
                        &mut rng,
                    )?;
                } else {
                    if !flags.no_implicit_input_to_graph {
                        encoder::init_compress_params(
                            &mut store,
                            dims.d_z,
                            dims.compress_dim,
                            &mut rng,
                        )?;
                    }
                    if answer_map.num_mapped() > 0 {
                        if flags.no_late_fusion {
                            fusion::init_symbolic_linear_head(
                                &mut store,
                                dims.node_hidden,
                                &mut rng,
                            )?;
                        } else {
                            fusion::init_symbolic_head(
                                &mut store,
                                dims.node_hidden,
                                dims.d_z,
                                dims.fusion_dim,
                                &mut rng,
                            )?;
                        }
                    }
                }
                let aggs = RelationAggregators::build(&g)?;
                let wordvec_block = grounding::word_vectors(&g, wordvec_table);
                Some(GraphAssets { graph: g, aggs, wordvec_block })
            }
            None => None,
        };

        Ok(Model {
            dims,
            flags,
            answer_vocab,
            answer_map,
            encoder_vocab,
            store,
            enc_cfg,
            graph: assets,
        })
    }

    pub fn graph(&self) -> Option<&KnowledgeGraph> {
        self.graph.as_ref().map(|a| &a.graph)
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.enc_cfg
    }

    /// Replace parameters with a loaded checkpoint. Names and shapes must
    /// match this model's architecture exactly.
    pub fn set_params(&mut self, loaded: ParameterStore<T>) -> Result<()> {
        if loaded.names() != self.store.names() {
            return Err(Error::Config(format!(
                "checkpoint has {} parameters, model expects {} (architecture or vocab mismatch)",
                loaded.len(),
                self.store.len()
            )));
        }
        for (name, t) in loaded.iter() {
            let expect = self.store.get_required(name)?;
            if expect.shape() != t.shape() {
                return Err(Error::Config(format!(
                    "checkpoint parameter {} has shape {:?}, model expects {:?}",
                    name,
                    t.shape(),
                    expect.shape()
                )));
            }
        }
        self.store = loaded;
        Ok(())
    }

    fn observations_for_input<'a>(
        &self,
        input: &'a ExampleInput<T>,
    ) -> Vec<VisualSymbolObservation> {
        match &self.flags.symbol_sources {
            Some(keep) => input
                .observations
                .iter()
                .filter(|o| keep.contains(&o.source))
                .cloned()
                .collect(),
            None => input.observations.clone(),
        }
    }

    /// Static node-input block [indicator | conf | wordvec] for one example,
    /// with ablated blocks zeroed.
    fn static_block(&self, input: &ExampleInput<T>) -> Result<Tensor<T>> {
        let assets = self.graph.as_ref().expect("graph branch requires assets");
        let g = &assets.graph;
        let n = g.num_nodes();
        let indicator = if self.flags.no_question_indicator {
            Tensor::zeros(vec![n, 1])
        } else {
            grounding::question_indicator(&input.question.tokens, g, self.dims.ngram_cap)
        };
        let confidences = if self.flags.no_image_confidences {
            Tensor::zeros(vec![n, SYMBOL_SLOTS])
        } else {
            grounding::symbol_confidences(&self.observations_for_input(input), g).0
        };
        let wordvecs = if self.flags.no_word_vectors {
            Tensor::zeros(vec![n, self.dims.word_dim])
        } else {
            assets.wordvec_block.clone()
        };
        grounding::assemble_static(&indicator, &confidences, &wordvecs)
    }

    /// Record the full forward pass for one example on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        input: &ExampleInput<T>,
    ) -> Result<ForwardPass> {
        if input.targets.shape() != [1, self.answer_vocab.len()] {
            return Err(Error::ShapeMismatch {
                op: "Model::forward",
                detail: format!(
                    "targets {:?}, expected [1, {}]",
                    input.targets.shape(),
                    self.answer_vocab.len()
                ),
            });
        }

        // Graph-into-encoder variant computes the graph summary first, from
        // node inputs without any implicit block (that would be circular).
        let z = if self.flags.feed_graph_into_encoder {
            let assets = self.graph.as_ref().expect("validated in new()");
            let n = assets.graph.num_nodes();
            let static_id = tape.leaf(self.static_block(input)?)?;
            let zeros = tape.leaf(Tensor::zeros(vec![1, self.dims.compress_dim]))?;
            let implicit_rows = tape.broadcast_rows(zeros, n)?;
            let x = tape.concat_cols(&[static_id, implicit_rows])?;
            let cfg = self.dims.rgcn_config(assets.graph.num_relations());
            let g_hidden = if self.flags.gcn_variant {
                rgcn::gcn_forward(tape, x, &assets.aggs, bound, &cfg)?
            } else {
                rgcn::rgcn_forward(tape, x, &assets.aggs, bound, &cfg)?
            };
            let summary = rgcn::summary_layer(tape, g_hidden, bound)?;
            let extra = encoder::embed_summary(tape, summary, bound)?;
            encoder::encode(tape, &input.question, &input.regions, Some(extra), bound, &self.enc_cfg)?
        } else {
            encoder::encode(tape, &input.question, &input.regions, None, bound, &self.enc_cfg)?
        };

        // Symbolic branch.
        let y_symbolic = if self.flags.has_symbolic_head() && self.answer_map.num_mapped() > 0 {
            let assets = self.graph.as_ref().expect("validated in new()");
            let n = assets.graph.num_nodes();
            let static_id = tape.leaf(self.static_block(input)?)?;
            let z_for_graph = if self.flags.no_backprop_into_encoder {
                tape.stop_gradient(z)?
            } else {
                z
            };
            let compressed = if self.flags.no_implicit_input_to_graph {
                tape.leaf(Tensor::zeros(vec![1, self.dims.compress_dim]))?
            } else {
                encoder::compress_for_graph(tape, z_for_graph, bound)?
            };
            let implicit_rows = tape.broadcast_rows(compressed, n)?;
            let x = tape.concat_cols(&[static_id, implicit_rows])?;
            let cfg = self.dims.rgcn_config(assets.graph.num_relations());
            let g_hidden = if self.flags.gcn_variant {
                rgcn::gcn_forward(tape, x, &assets.aggs, bound, &cfg)?
            } else {
                rgcn::rgcn_forward(tape, x, &assets.aggs, bound, &cfg)?
            };
            if self.flags.no_late_fusion {
                Some(fusion::symbolic_linear_head(tape, g_hidden, &self.answer_map, bound)?)
            } else {
                Some(fusion::symbolic_head(tape, g_hidden, z_for_graph, &self.answer_map, bound)?)
            }
        } else {
            None
        };

        // Implicit head.
        let z_for_implicit = if self.flags.no_backprop_implicit_head {
            tape.stop_gradient(z)?
        } else {
            z
        };
        let y_implicit = fusion::implicit_head(tape, z_for_implicit, bound)?;

        let loss =
            fusion::joint_loss(tape, y_implicit, y_symbolic, &input.targets, &self.answer_map)?;

        Ok(ForwardPass { z_implicit: z, y_implicit, y_symbolic, loss })
    }

    /// Read both heads off a finished forward pass and fuse.
    pub fn predict(&self, tape: &Tape<T>, pass: &ForwardPass) -> PredictionPair {
        let implicit: Vec<f64> =
            tape.value(pass.y_implicit).data().iter().map(|v| v.as_f64()).collect();
        let symbolic: Vec<(usize, f64)> = match pass.y_symbolic {
            Some(id) => {
                let scores = tape.value(id);
                self.answer_map
                    .mapped()
                    .iter()
                    .enumerate()
                    .map(|(row, (vocab_idx, _))| (*vocab_idx, scores.data()[row].as_f64()))
                    .collect()
            }
            None => Vec::new(),
        };
        fusion::fuse(implicit, symbolic)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Edge, TripleSource};

    fn toy_dims() -> ModelDims {
        ModelDims {
            d_z: 6,
            blocks: 1,
            heads: 1,
            ff_dim: 8,
            region_dim: 4,
            max_len: 8,
            word_dim: 5,
            compress_dim: 3,
            node_hidden: 4,
            conv_layers: 2,
            fusion_dim: 4,
            ngram_cap: 3,
        }
    }

    fn toy_graph() -> KnowledgeGraph {
        KnowledgeGraph::from_parts(
            vec!["apple".into(), "fruit".into(), "tree".into()],
            vec!["is_a".into(), "grows_on".into()],
            vec![
                Edge { head: 0, relation: 0, tail: 1, source: TripleSource::Commonsense },
                Edge { head: 0, relation: 1, tail: 2, source: TripleSource::SceneGraph },
            ],
        )
        .unwrap()
    }

    fn toy_model(flags: AblationFlags) -> Model<f64> {
        let vocab = AnswerVocab::build([("apple", 10), ("tree", 10), ("sky", 10)], 1);
        let enc_vocab = WordVocab::from_words(
            ["what", "grows", "on", "the", "apple", "tree"].map(String::from),
        );
        let mut wv = WordVectorTable::new(5);
        for w in ["apple", "fruit", "tree"] {
            wv.insert(w, vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        }
        Model::new(toy_dims(), flags, Some(toy_graph()), vocab, enc_vocab, &wv, 17).unwrap()
    }

    fn toy_input(model: &Model<f64>) -> ExampleInput<f64> {
        let question = model.encoder_vocab.encode_question("what grows on the tree");
        let regions = RegionFeatures::new(Tensor::full(vec![1, 4], 0.2)).unwrap();
        let observations = vec![VisualSymbolObservation::new(
            "apple",
            0.9,
            SymbolSource::Objects1k,
        )
        .unwrap()];
        let mut targets = Tensor::zeros(vec![1, model.answer_vocab.len()]);
        let idx = model.answer_vocab.index_of("apple").unwrap();
        targets.data_mut()[idx] = 1.0;
        ExampleInput { question, regions, observations, targets }
    }

    #[test]
    fn shipped_dims_validate_and_toys_do_not() {
        assert!(ModelDims::default().validate_shipped().is_ok());
        assert_eq!(ModelDims::default().node_input_dim(), 433);
        assert!(toy_dims().validate_shipped().is_err());
    }

    #[test]
    fn forward_produces_both_heads_and_finite_loss() {
        let model = toy_model(AblationFlags::default());
        let input = toy_input(&model);
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape).unwrap();
        let pass = model.forward(&mut tape, &bound, &input).unwrap();
        assert!(pass.y_symbolic.is_some());
        assert!(tape.value(pass.loss).item().is_finite());
        let pred = model.predict(&tape, &pass);
        assert_eq!(pred.implicit.len(), 3);
        assert_eq!(pred.symbolic.len(), 2, "apple and tree are graph nodes, sky is not");
    }

    #[test]
    fn implicit_only_has_no_symbolic_branch() {
        let vocab = AnswerVocab::build([("apple", 10)], 1);
        let enc_vocab = WordVocab::from_words(["what"].map(String::from));
        let wv = WordVectorTable::new(5);
        let model: Model<f64> = Model::new(
            toy_dims(),
            AblationFlags { implicit_only: true, ..Default::default() },
            None,
            vocab,
            enc_vocab,
            &wv,
            3,
        )
        .unwrap();
        assert!(!model.store.contains("rgcn.layer0.self"));
        let input = ExampleInput {
            question: model.encoder_vocab.encode_question("what"),
            regions: RegionFeatures::empty(4),
            observations: vec![],
            targets: Tensor::full(vec![1, 1], 1.0),
        };
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape).unwrap();
        let pass = model.forward(&mut tape, &bound, &input).unwrap();
        assert!(pass.y_symbolic.is_none());
    }

    #[test]
    fn feed_graph_variant_disables_symbolic_head_structurally() {
        let model = toy_model(AblationFlags {
            feed_graph_into_encoder: true,
            ..Default::default()
        });
        assert!(!model.store.contains(fusion::names::SYMBOLIC_WS));
        assert!(!model.store.contains(fusion::names::SYMBOLIC_LINEAR_W));
        assert!(model.store.contains(rgcn::names::SUMMARY_W));
        let input = toy_input(&model);
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape).unwrap();
        let pass = model.forward(&mut tape, &bound, &input).unwrap();
        assert!(pass.y_symbolic.is_none(), "Eq.2 head must be structurally absent");
    }

    #[test]
    fn inconsistent_flag_combinations_rejected() {
        assert!(AblationFlags {
            implicit_only: true,
            random_graph: true,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AblationFlags {
            feed_graph_into_encoder: true,
            no_late_fusion: true,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AblationFlags {
            graph_sources: Some(vec![]),
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn input_ablations_zero_their_blocks() {
        let model = toy_model(AblationFlags {
            no_question_indicator: true,
            no_image_confidences: true,
            no_word_vectors: true,
            ..Default::default()
        });
        let input = toy_input(&model);
        let block = model.static_block(&input).unwrap();
        assert!(block.data().iter().all(|v| *v == 0.0));

        let base = toy_model(AblationFlags::default());
        let block = base.static_block(&input).unwrap();
        assert!(block.data().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn checkpoint_shape_mismatch_rejected() {
        let model = toy_model(AblationFlags::default());
        let mut other = toy_model(AblationFlags { no_late_fusion: true, ..Default::default() });
        let err = other.set_params(model.store.cast());
        assert!(err.is_err());
    }

    #[test]
    fn symbol_source_subset_filters_observations() {
        let model = toy_model(AblationFlags {
            symbol_sources: Some(vec![SymbolSource::Places]),
            ..Default::default()
        });
        let input = toy_input(&model); // observation is Objects1k
        let obs = model.observations_for_input(&input);
        assert!(obs.is_empty());
    }
}
