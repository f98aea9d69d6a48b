//! Interpretable alignment of two knowledge graphs.
//!
//! Entities are embedded from their attribute triples (character GRU plus
//! per-entity self-attention) and their neighborhood (edge-gated attention
//! over a clustered mini-batch, fed by a historical embedding store). A
//! margin ranking loss on seed pairs trains both. Attention weights double
//! as explanations: the attributes and neighbors that drove a prediction.
//!
//! Numerics are generic over [`Scalar`]; `f64` is the default everywhere and
//! checkpoints are stored at `f32`.

pub mod align;
pub mod batching;
pub mod checkpoint;
pub mod error;
pub mod kg;
pub mod model;
pub mod seed;
pub mod synthetic;
pub mod training;

pub use align::{
    evaluate, hits_at_k, jaccard, jaccard_explanations, predict, removal_analysis, AlignmentModel, AlignmentPrediction,
    EmbeddingTable, EvalReport, Explanation, Metric, Normalization, RemovalReport, RemovalTarget, SideExplanation,
};
pub use batching::{assemble_batch, partition_graph, JointIndex, MiniBatch, Partition, SubgraphTensors};
pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use kg::{KnowledgeGraph, Side};
pub use kgalign_tensor::Scalar;
pub use model::store::HistoricalEmbeddingStore;
pub use model::{GraphPair, ModelConfig};
pub use seed::SeedAlignment;
pub use synthetic::{gen_synthetic_pair, SyntheticConfig, SyntheticPair};
pub use training::{train, train_with, EpochLosses, LossWeights, TrainConfig, TrainOutcome, Trainer};

pub type AlignmentModel64 = AlignmentModel<f64>;
pub type AlignmentModel32 = AlignmentModel<f32>;
pub type Trainer64<'d> = Trainer<'d, f64>;
pub type Trainer32<'d> = Trainer<'d, f32>;
pub type HistoricalEmbeddingStore64 = HistoricalEmbeddingStore<f64>;
pub type HistoricalEmbeddingStore32 = HistoricalEmbeddingStore<f32>;
