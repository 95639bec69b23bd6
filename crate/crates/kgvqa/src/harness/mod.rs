//! Training, evaluation, ablations, synthetic data and explanation traces.

pub mod ablate;
pub mod config;
pub mod data;
pub mod eval;
pub mod explain;
pub mod rewire;
pub mod synth;
pub mod train;

pub use ablate::{full_matrix, knowledge_isolation_matrix, run_ablation_matrix, AblationSpec};
pub use config::{desk_config, RunConfig, DATA_ROOT_ENV};
pub use data::{DetectionIndex, QaExample, RegionSynthesizer};
pub use eval::{evaluate, EvalReport};
pub use explain::{explain, ExplainTrace};
pub use rewire::rewire_random;
pub use synth::{generate, GenSpec, SynthArtifacts};
pub use train::{train, TrainConfig};
