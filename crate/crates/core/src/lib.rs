pub mod activations;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod kernels;
pub mod metrics;
pub mod network;
pub mod tensor;
pub mod training;

pub use activations::{ActivationKind, ActivationParams};
pub use data::LabeledDataset;
pub use diagnostics::{DeadUnitCensus, GradCheckReport};
pub use error::{Error, Result};
pub use metrics::EvalReport;
pub use network::{Gradients, ModelConfig, Network, Parameters};
pub use tensor::{Element, Tensor};
pub use training::{TrainConfig, TrainHistory};
