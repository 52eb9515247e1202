//! Multi-label tool classification on video frames.
//!
//! The crate covers the full path from frames to scores: a small
//! reverse-mode tensor engine ([`graph`], [`ops`]), residual building blocks
//! ([`layers`]), the fine-tuning and fixed-feature-extractor network families
//! ([`model`]), weighted binary cross-entropy and SGD ([`loss`], [`optim`]),
//! the frame pipeline ([`data`]), a synthetic dataset generator ([`synth`]),
//! ROC/AUC evaluation ([`eval`]) and the training loop ([`train`]).

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod model;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, NodeId};
pub use loss::{ClassWeights, LabelVector};
pub use model::{Family, HeadKind, Init, ModelSpec, Network};
pub use optim::TrainConfig;
pub use tensor::Tensor;
