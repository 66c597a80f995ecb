//! Tiny self-contained training stack: Gaussian-blob data, IID/Dirichlet
//! partitioning, a ReLU MLP trained with plain SGD, macro-F1 evaluation and
//! the binary model wire format.

mod dataset;
mod metrics;
mod model;
mod partition;
mod wire;

pub use dataset::{generate_dataset, Dataset, BLOB_SIGMA};
pub use metrics::{evaluate, macro_f1, Evaluation};
pub use model::{train_local, LayerShape, ModelParams, Network, TrainOutcome, BATCH_SIZE};
pub use partition::{label_entropy, partition, Partition, PartitionSpec};
pub use wire::{
    deserialize_model, serialize_model, serialized_len, WireError, MAGIC, WIRE_VERSION,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LearningError {
    #[error("invalid arguments: {0}")]
    InvalidArgs(String),
    #[error("training diverged: loss became {loss} at epoch {epoch}")]
    NumericError { epoch: u32, loss: f64 },
    #[error("model shape mismatch: {0}")]
    ShapeMismatch(String),
}
