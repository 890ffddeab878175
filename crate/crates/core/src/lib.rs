//! Layer-wise pre-training of deep autoencoders on MNIST-style data.
//!
//! Two pre-training schedules are provided over the same per-layer learners:
//! [`greedy::greedy_pretrain`], which trains one layer at a time, and
//! [`sync::sync_pretrain`], which trains every layer concurrently on the
//! latest output of the layer below. Either result is unfolded into a
//! [`StackedAutoencoder`] and fine-tuned with backpropagation.

pub mod autoencoder;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod greedy;
pub mod linalg;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod rbm;
pub mod sync;
pub mod unit;

pub use autoencoder::{unfold, Layer, PretrainedLayer, StackedAutoencoder};
pub use config::{ConfigBuilder, TrainingConfig};
pub use dataset::LabeledDataset;
pub use error::{Error, Result};
pub use greedy::greedy_pretrain;
pub use linalg::DataMatrix;
pub use metrics::{TraceEvent, TraceSink};
pub use rbm::{CdHyperparams, RbmParams};
pub use sync::sync_pretrain;
