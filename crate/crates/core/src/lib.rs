//! Dataset pruning by ensemble predictability, data-quality scoring, and
//! linear-probe evaluation.

pub mod aflite;
pub mod corpus;
pub mod dqi;
pub mod embeddings;
pub mod evalharness;
pub mod linmodels;
pub mod pruner;
pub mod synthetic;
pub mod textstats;

pub use corpus::{CorpusError, Dataset, Sample, TaskSchema};
pub use dqi::{Component, DqiConfig, DqiError, DqiReport, DqiVector, ImpactVector};
pub use embeddings::{EmbError, EmbManifest, EmbeddingMatrix};
pub use linmodels::{LinearModel, ModelError, ModelKind, TrainConfig};
pub use pruner::{PruneConfig, PruneError, PruneResult, PruneTrace, StopReason};
