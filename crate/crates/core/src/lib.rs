//! Class-wise invariant representation learning on CPU.
//!
//! A network is split into a representation part Γ and a decision part Ψ.
//! Training alternates, per mini-batch, between a cross-entropy step over
//! all parameters and a hint-penalty step over Γ's parameters only; the
//! hint penalty pulls together the tapped representations of same-class
//! samples within the batch. Each step has its own AdaDelta state.
//!
//! Module map:
//!
//! - [`tensor`]: dense `f64` arrays and forward/backward kernels.
//! - [`network`]: layers, the two MNIST architectures and the Γ/Ψ split.
//! - [`losses`]: cross-entropy, dissimilarity measures, hint penalty.
//! - [`optim`]: AdaDelta/SGD and the alternating training loop.
//! - [`data`]: IDX/CIFAR ingestion and benchmark synthesis.
//! - [`experiments`]: repeated runs, studies and the invariance probe.

pub mod data;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod network;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use losses::{HintConfig, Measure};
pub use network::NetworkSplit;
pub use optim::{TrainSchedule, Trainer};
pub use tensor::Tensor;
