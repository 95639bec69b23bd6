//! Run configuration: one structured text file, flag overrides at the CLI,
//! and a data-root environment variable.

use crate::error::{Error, Result};
use crate::harness::train::TrainConfig;
use crate::model::ModelDims;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const DATA_ROOT_ENV: &str = "KGVQA_DATA_ROOT";

/// File locations, relative to the data root unless absolute.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    pub graph: PathBuf,
    pub train: PathBuf,
    pub test_knowledge: PathBuf,
    pub test_control: PathBuf,
    pub detections: PathBuf,
    pub wordvecs: PathBuf,
    pub encoder_vocab: PathBuf,
}

impl Default for DataPaths {
    fn default() -> Self {
        DataPaths {
            graph: "graph.kg".into(),
            train: "train.jsonl".into(),
            test_knowledge: "test_knowledge.jsonl".into(),
            test_control: "test_control.jsonl".into(),
            detections: "detections.jsonl".into(),
            wordvecs: "wordvecs.txt".into(),
            encoder_vocab: "encoder_vocab.txt".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data_root: PathBuf,
    pub paths: DataPaths,
    pub model: ModelDims,
    pub train: TrainConfig,
    /// Answers must appear this many times in training annotations to enter
    /// the vocabulary.
    pub answer_min_count: usize,
    /// Seed for the deterministic region-feature synthesis.
    pub region_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_root: ".".into(),
            paths: DataPaths::default(),
            model: ModelDims::default(),
            train: TrainConfig::default(),
            answer_min_count: crate::fusion::DEFAULT_ANSWER_MIN_COUNT,
            region_seed: 0x5eed,
        }
    }
}

impl RunConfig {
    /// Parse a TOML config. The model dims are validated against the
    /// shipped dimensional contract; violating files are rejected here.
    /// `KGVQA_DATA_ROOT`, when set, overrides the file's data root.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<RunConfig> {
        let text = std::fs::read_to_string(&path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {}", path.as_ref().display(), e))
        })?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("bad config: {}", e)))?;
        if let Ok(root) = std::env::var(DATA_ROOT_ENV) {
            cfg.data_root = root.into();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate_shipped()?;
        self.train.validate()?;
        if self.answer_min_count == 0 {
            return Err(Error::Config("answer_min_count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let text =
            toml::to_string_pretty(self).map_err(|e| Error::Config(format!("{}", e)))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data_root.join(p)
        }
    }

    pub fn graph_path(&self) -> PathBuf {
        self.resolve(&self.paths.graph)
    }

    pub fn train_path(&self) -> PathBuf {
        self.resolve(&self.paths.train)
    }

    pub fn test_knowledge_path(&self) -> PathBuf {
        self.resolve(&self.paths.test_knowledge)
    }

    pub fn test_control_path(&self) -> PathBuf {
        self.resolve(&self.paths.test_control)
    }

    pub fn detections_path(&self) -> PathBuf {
        self.resolve(&self.paths.detections)
    }

    pub fn wordvecs_path(&self) -> PathBuf {
        self.resolve(&self.paths.wordvecs)
    }

    pub fn encoder_vocab_path(&self) -> PathBuf {
        self.resolve(&self.paths.encoder_vocab)
    }
}

/// Desk-scale configuration written next to generated synthetic data: the
/// graph-side dimensional contract stays pinned while the stand-in encoder
/// shrinks for single-machine turnaround.
pub fn desk_config(data_root: &Path) -> RunConfig {
    RunConfig {
        data_root: data_root.to_path_buf(),
        model: ModelDims {
            d_z: 64,
            blocks: 2,
            heads: 1,
            ff_dim: 128,
            region_dim: 64,
            max_len: 24,
            ..ModelDims::default()
        },
        train: TrainConfig {
            batch_size: 8,
            learning_rate: 2e-3,
            warmup_steps: 40,
            total_steps: 400,
            seed: 1,
            log_every: 20,
            ..TrainConfig::default()
        },
        ..RunConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        cfg.save(&path).unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        assert_eq!(loaded.model, cfg.model);
        assert_eq!(loaded.train.batch_size, 56);
    }

    #[test]
    fn dimensional_violations_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        let mut cfg = RunConfig::default();
        cfg.model.word_dim = 200; // node inputs would be 333-wide
        let text = toml::to_string_pretty(&cfg).unwrap();
        std::fs::write(&path, text).unwrap();
        assert!(RunConfig::load(&path).is_err());

        let mut cfg = RunConfig::default();
        cfg.model.conv_layers = 3;
        std::fs::write(&path, toml::to_string_pretty(&cfg).unwrap()).unwrap();
        assert!(RunConfig::load(&path).is_err());

        let mut cfg = RunConfig::default();
        cfg.model.node_hidden = 64;
        std::fs::write(&path, toml::to_string_pretty(&cfg).unwrap()).unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn desk_config_honors_the_contract() {
        let cfg = desk_config(Path::new("/tmp/x"));
        cfg.validate().unwrap();
        assert_eq!(cfg.model.node_input_dim(), 433);
    }
}
