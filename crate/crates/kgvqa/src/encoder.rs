//! The implicit multimodal encoder: question tokens and visual region
//! features in, one pooled hidden vector out.
//!
//! This is a deliberately small stand-in for a pretrained multimodal
//! transformer: embedding lookup for tokens, a linear projection for
//! regions, a stack of single-head self-attention blocks with ReLU
//! feedforwards, and a mean-pool over all steps. The interface — not the
//! capacity — is the contract; anything producing a d_z vector can sit
//! behind it.

use crate::error::{Error, Result};
use crate::numerics::store::{BoundParams, ParameterStore};
use crate::numerics::tape::{Tape, TensorId};
use crate::numerics::tensor::{Real, Tensor};
use crate::text::tokenize;
use rand::Rng;
use std::collections::HashMap;
use std::io::BufRead;

/// Whole-word vocabulary. Id 0 is reserved for unknown words, keeping the
/// token space aligned with graph concepts (no subwords).
#[derive(Debug, Clone)]
pub struct WordVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

pub const UNK_ID: usize = 0;

impl WordVocab {
    pub fn from_words<I: IntoIterator<Item = String>>(words: I) -> WordVocab {
        let mut list = vec!["<unk>".to_string()];
        let mut index = HashMap::new();
        index.insert("<unk>".to_string(), 0);
        for w in words {
            if !index.contains_key(&w) {
                index.insert(w.clone(), list.len());
                list.push(w);
            }
        }
        WordVocab { words: list, index }
    }

    pub fn from_reader<R: BufRead>(r: R) -> std::io::Result<WordVocab> {
        let mut words = Vec::new();
        for line in r.lines() {
            let w = line?.trim().to_string();
            if !w.is_empty() && w != "<unk>" {
                words.push(w);
            }
        }
        Ok(WordVocab::from_words(words))
    }

    pub fn save<P: AsRef<std::path::Path>>(&self, path: P) -> std::io::Result<()> {
        // <unk> is implicit at id 0
        std::fs::write(path, self.words[1..].join("\n") + "\n")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    /// Tokenize and encode a question. Empty questions encode to a single
    /// unknown token so the sequence is never empty.
    pub fn encode_question(&self, question: &str) -> QuestionEncoding {
        let tokens = tokenize(question);
        let mut ids: Vec<usize> = tokens.iter().map(|t| self.id(t)).collect();
        if ids.is_empty() {
            ids.push(UNK_ID);
        }
        QuestionEncoding { token_ids: ids, tokens }
    }
}

/// Token ids plus the raw tokens (the grounding indicator needs the text).
#[derive(Debug, Clone)]
pub struct QuestionEncoding {
    pub token_ids: Vec<usize>,
    pub tokens: Vec<String>,
}

impl QuestionEncoding {
    pub fn new(token_ids: Vec<usize>, vocab_size: usize) -> Result<QuestionEncoding> {
        if token_ids.is_empty() {
            return Err(Error::InvalidArgument("question must have at least one token".into()));
        }
        if let Some(&bad) = token_ids.iter().find(|&&id| id >= vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "token id {} out of vocab bounds ({})",
                bad, vocab_size
            )));
        }
        Ok(QuestionEncoding { token_ids, tokens: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Per-region feature vectors for detected boxes. Regions carry no
/// positional information, so the encoder is invariant to their order.
#[derive(Debug, Clone)]
pub struct RegionFeatures<T: Real> {
    features: Tensor<T>,
}

impl<T: Real> RegionFeatures<T> {
    pub fn new(features: Tensor<T>) -> Result<RegionFeatures<T>> {
        if features.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "RegionFeatures::new",
                detail: format!("{:?} is not (regions x dim)", features.shape()),
            });
        }
        Ok(RegionFeatures { features })
    }

    pub fn empty(dim: usize) -> RegionFeatures<T> {
        RegionFeatures { features: Tensor::zeros(vec![0, dim]) }
    }

    pub fn count(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.features
    }
}

/// Encoder shape parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Pooled hidden size d_z.
    pub d_z: usize,
    /// Number of attention/feedforward blocks.
    pub blocks: usize,
    /// Attention heads; the reference encoder is single-head.
    pub heads: usize,
    pub ff_dim: usize,
    /// Visual feature dimension of region inputs.
    pub region_dim: usize,
    pub vocab_size: usize,
    /// Positional table length; questions longer than this are rejected.
    pub max_len: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_z == 0 || self.ff_dim == 0 || self.vocab_size == 0 || self.max_len == 0 {
            return Err(Error::Config("encoder dims must be positive".into()));
        }
        if self.heads != 1 {
            return Err(Error::Config(format!(
                "reference encoder is single-head; got heads={}",
                self.heads
            )));
        }
        Ok(())
    }
}

pub mod names {
    pub const TOK_EMBED: &str = "enc.tok_embed";
    pub const POS_EMBED: &str = "enc.pos_embed";
    pub const REGION_W: &str = "enc.region_proj.w";
    pub const REGION_B: &str = "enc.region_proj.b";
    pub const SUMMARY_EMBED_W: &str = "enc.summary_embed.w";
    pub const SUMMARY_EMBED_B: &str = "enc.summary_embed.b";
    pub const COMPRESS_W: &str = "enc.compress.w";
    pub const COMPRESS_B: &str = "enc.compress.b";

    pub fn attn(block: usize, which: &str) -> String {
        format!("enc.block{}.attn.{}", block, which)
    }

    pub fn ff(block: usize, which: &str) -> String {
        format!("enc.block{}.ff.{}", block, which)
    }
}

pub const INIT_SCALE: f64 = 0.02;

/// Register the encoder's trainable tensors, uniform(-0.02, 0.02) seeded.
pub fn init_params<T: Real, R: Rng>(
    store: &mut ParameterStore<T>,
    cfg: &EncoderConfig,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let d = cfg.d_z;
    store.insert_uniform(names::TOK_EMBED, vec![cfg.vocab_size, d], INIT_SCALE, rng)?;
    store.insert_uniform(names::POS_EMBED, vec![cfg.max_len, d], INIT_SCALE, rng)?;
    store.insert_uniform(names::REGION_W, vec![cfg.region_dim, d], INIT_SCALE, rng)?;
    store.insert(names::REGION_B, Tensor::zeros(vec![1, d]))?;
    for b in 0..cfg.blocks {
        for w in ["wq", "wk", "wv", "wo"] {
            store.insert_uniform(&names::attn(b, w), vec![d, d], INIT_SCALE, rng)?;
        }
        for bias in ["bq", "bk", "bv", "bo"] {
            store.insert(&names::attn(b, bias), Tensor::zeros(vec![1, d]))?;
        }
        store.insert_uniform(&names::ff(b, "w1"), vec![d, cfg.ff_dim], INIT_SCALE, rng)?;
        store.insert(&names::ff(b, "b1"), Tensor::zeros(vec![1, cfg.ff_dim]))?;
        store.insert_uniform(&names::ff(b, "w2"), vec![cfg.ff_dim, d], INIT_SCALE, rng)?;
        store.insert(&names::ff(b, "b2"), Tensor::zeros(vec![1, d]))?;
    }
    Ok(())
}

/// Register the fc that shrinks z down to the graph-input feature.
pub fn init_compress_params<T: Real, R: Rng>(
    store: &mut ParameterStore<T>,
    d_z: usize,
    compress_dim: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert_fan_in(names::COMPRESS_W, vec![d_z, compress_dim], rng)?;
    store.insert(names::COMPRESS_B, Tensor::zeros(vec![1, compress_dim]))?;
    Ok(())
}

/// Register the linear embedding used when a graph summary vector is fed to
/// the encoder as one extra input step.
pub fn init_summary_embed_params<T: Real, R: Rng>(
    store: &mut ParameterStore<T>,
    summary_dim: usize,
    d_z: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert_fan_in(names::SUMMARY_EMBED_W, vec![summary_dim, d_z], rng)?;
    store.insert(names::SUMMARY_EMBED_B, Tensor::zeros(vec![1, d_z]))?;
    Ok(())
}

fn linear<T: Real>(
    tape: &mut Tape<T>,
    x: TensorId,
    w: TensorId,
    b: TensorId,
) -> Result<TensorId> {
    let xw = tape.matmul(x, w)?;
    tape.add_row_broadcast(xw, b)
}

/// Produce the pooled hidden state for one (question, image) pair.
///
/// `extra_step` appends one already-embedded row to the input sequence
/// (used when the graph summary is fed into the encoder).
pub fn encode<T: Real>(
    tape: &mut Tape<T>,
    q: &QuestionEncoding,
    v: &RegionFeatures<T>,
    extra_step: Option<TensorId>,
    bound: &BoundParams,
    cfg: &EncoderConfig,
) -> Result<TensorId> {
    if q.token_ids.is_empty() {
        return Err(Error::InvalidArgument("empty question".into()));
    }
    if q.token_ids.len() > cfg.max_len {
        return Err(Error::ShapeMismatch {
            op: "encode",
            detail: format!("{} tokens exceed max_len {}", q.token_ids.len(), cfg.max_len),
        });
    }
    if let Some(&bad) = q.token_ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(Error::InvalidArgument(format!("token id {} out of vocab bounds", bad)));
    }
    if v.count() > 0 && v.dim() != cfg.region_dim {
        return Err(Error::ShapeMismatch {
            op: "encode",
            detail: format!("region dim {} != config {}", v.dim(), cfg.region_dim),
        });
    }

    let tok_embed = bound.id(names::TOK_EMBED)?;
    let pos_embed = bound.id(names::POS_EMBED)?;
    let toks = tape.gather_rows(tok_embed, q.token_ids.clone())?;
    let pos = tape.gather_rows(pos_embed, (0..q.token_ids.len()).collect())?;
    let toks = tape.add(toks, pos)?;

    let mut parts = vec![toks];
    if v.count() > 0 {
        let feats = tape.leaf(v.tensor().clone())?;
        let w = bound.id(names::REGION_W)?;
        let b = bound.id(names::REGION_B)?;
        parts.push(linear(tape, feats, w, b)?);
    }
    if let Some(row) = extra_step {
        parts.push(row);
    }
    let mut x = if parts.len() == 1 { parts[0] } else { tape.concat_rows(&parts)? };

    let inv_sqrt_d = T::from_f64(1.0 / (cfg.d_z as f64).sqrt());
    for blk in 0..cfg.blocks {
        let wq = bound.id(&names::attn(blk, "wq"))?;
        let bq = bound.id(&names::attn(blk, "bq"))?;
        let wk = bound.id(&names::attn(blk, "wk"))?;
        let bk = bound.id(&names::attn(blk, "bk"))?;
        let wv = bound.id(&names::attn(blk, "wv"))?;
        let bv = bound.id(&names::attn(blk, "bv"))?;
        let wo = bound.id(&names::attn(blk, "wo"))?;
        let bo = bound.id(&names::attn(blk, "bo"))?;

        let qm = linear(tape, x, wq, bq)?;
        let km = linear(tape, x, wk, bk)?;
        let vm = linear(tape, x, wv, bv)?;
        let kt = tape.transpose(km)?;
        let scores = tape.matmul(qm, kt)?;
        let scores = tape.scale(scores, inv_sqrt_d)?;
        let attn = tape.softmax_rows(scores)?;
        let ctx = tape.matmul(attn, vm)?;
        let out = linear(tape, ctx, wo, bo)?;
        x = tape.add(x, out)?;

        let w1 = bound.id(&names::ff(blk, "w1"))?;
        let b1 = bound.id(&names::ff(blk, "b1"))?;
        let w2 = bound.id(&names::ff(blk, "w2"))?;
        let b2 = bound.id(&names::ff(blk, "b2"))?;
        let h = linear(tape, x, w1, b1)?;
        let h = tape.relu(h)?;
        let f = linear(tape, h, w2, b2)?;
        x = tape.add(x, f)?;
    }

    // mean-pool over every step: tokens, regions, and any extra input,
    // RMS-normalized so downstream consumers see an O(1) state regardless
    // of how large the residual stream grows during training
    let pooled = tape.mean_rows(x)?;
    tape.rms_norm_rows(pooled, 1e-8)
}

/// fc(z) with ReLU, shrinking the implicit state for graph consumption.
pub fn compress_for_graph<T: Real>(
    tape: &mut Tape<T>,
    z: TensorId,
    bound: &BoundParams,
) -> Result<TensorId> {
    let w = bound.id(names::COMPRESS_W)?;
    let b = bound.id(names::COMPRESS_B)?;
    let lin = linear(tape, z, w, b)?;
    tape.relu(lin)
}

/// Linear embedding of a graph summary vector into encoder input space.
pub fn embed_summary<T: Real>(
    tape: &mut Tape<T>,
    summary: TensorId,
    bound: &BoundParams,
) -> Result<TensorId> {
    let w = bound.id(names::SUMMARY_EMBED_W)?;
    let b = bound.id(names::SUMMARY_EMBED_B)?;
    linear(tape, summary, w, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    fn toy_cfg() -> EncoderConfig {
        EncoderConfig {
            d_z: 8,
            blocks: 2,
            heads: 1,
            ff_dim: 12,
            region_dim: 6,
            vocab_size: 10,
            max_len: 16,
        }
    }

    fn run_encode(
        cfg: &EncoderConfig,
        store: &ParameterStore<f64>,
        ids: Vec<usize>,
        regions: &RegionFeatures<f64>,
    ) -> Vec<f64> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape).unwrap();
        let q = QuestionEncoding::new(ids, cfg.vocab_size).unwrap();
        let z = encode(&mut tape, &q, regions, None, &bound, cfg).unwrap();
        tape.value(z).data().to_vec()
    }

    #[test]
    fn zero_params_give_zero_state() {
        let cfg = toy_cfg();
        let mut store = ParameterStore::<f64>::new();
        let mut rng = stream(0, "enc-test");
        init_params(&mut store, &cfg, &mut rng).unwrap();
        // zero out everything: with zero embeddings and weights the mean-pool is zero
        for name in store.names().to_vec() {
            let shape = store.get(&name).unwrap().shape().to_vec();
            store.set(&name, Tensor::zeros(shape)).unwrap();
        }
        let z = run_encode(&cfg, &store, vec![1, 2, 3], &RegionFeatures::empty(6));
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn deterministic_across_runs() {
        let cfg = toy_cfg();
        let mut store = ParameterStore::<f64>::new();
        init_params(&mut store, &cfg, &mut stream(42, "enc")).unwrap();
        let regions =
            RegionFeatures::new(Tensor::full(vec![2, 6], 0.25)).unwrap();
        let a = run_encode(&cfg, &store, vec![1, 4, 2, 7], &regions);
        let b = run_encode(&cfg, &store, vec![1, 4, 2, 7], &regions);
        assert_eq!(a, b, "same params and inputs must be byte-identical");
    }

    #[test]
    fn question_order_matters_region_order_does_not() {
        let cfg = toy_cfg();
        let mut store = ParameterStore::<f64>::new();
        init_params(&mut store, &cfg, &mut stream(7, "enc")).unwrap();

        let regions = RegionFeatures::new(
            Tensor::from_rows(&[
                vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.1],
                vec![0.9, 0.2, -0.3, 0.4, 0.0, 0.6],
            ])
            .unwrap(),
        )
        .unwrap();
        let swapped = RegionFeatures::new(
            Tensor::from_rows(&[
                vec![0.9, 0.2, -0.3, 0.4, 0.0, 0.6],
                vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.1],
            ])
            .unwrap(),
        )
        .unwrap();

        let base = run_encode(&cfg, &store, vec![1, 2, 3], &regions);
        let perm_tokens = run_encode(&cfg, &store, vec![3, 2, 1], &regions);
        let perm_regions = run_encode(&cfg, &store, vec![1, 2, 3], &swapped);

        assert_ne!(base, perm_tokens, "positional encoding must make token order matter");
        let max_diff = base
            .iter()
            .zip(&perm_regions)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-12, "region order must not matter, diff {}", max_diff);
    }

    #[test]
    fn output_dim_fixed_regardless_of_length() {
        let cfg = toy_cfg();
        let mut store = ParameterStore::<f64>::new();
        init_params(&mut store, &cfg, &mut stream(3, "enc")).unwrap();
        for len in [1, 3, 9] {
            let z = run_encode(&cfg, &store, (0..len).map(|i| i % 10).collect(), &RegionFeatures::empty(6));
            assert_eq!(z.len(), cfg.d_z);
        }
    }

    #[test]
    fn compress_kills_negatives() {
        let mut store = ParameterStore::<f64>::new();
        store.insert(names::COMPRESS_W, Tensor::zeros(vec![4, 3])).unwrap();
        store
            .insert(names::COMPRESS_B, Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap())
            .unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape).unwrap();
        let z = tape.leaf(Tensor::full(vec![1, 4], 5.0)).unwrap();
        let c = compress_for_graph(&mut tape, z, &bound).unwrap();
        assert_eq!(tape.value(c).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn vocab_roundtrip_and_unk() {
        let vocab = WordVocab::from_words(["what", "fruit"].map(String::from));
        assert_eq!(vocab.id("fruit"), 2);
        assert_eq!(vocab.id("zebra"), UNK_ID);
        let enc = vocab.encode_question("What fruit?!");
        assert_eq!(enc.token_ids, vec![1, 2]);
        let empty = vocab.encode_question("?!");
        assert_eq!(empty.token_ids, vec![UNK_ID]);
    }
}
