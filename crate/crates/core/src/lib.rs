//! Kronecker dual-layer neural networks: Kronecker product decomposition,
//! dense/KDL/KML networks with hand-derived gradients, training with
//! adaptive rank growth, truncation analysis, and benchmarking.

pub mod analysis;
pub mod bench;
pub mod data;
pub mod error;
pub mod grad;
pub mod kpd;
pub mod matlin;
pub mod net;
pub mod optim;

pub use data::{Dataset, Metric, Metrics, SplitDataset};
pub use error::{Error, Result};
pub use kpd::{KpShape, KpdFactors};
pub use matlin::{Flops, Matrix};
pub use net::{Activation, Activations, ArchSpec, Combine, Convention, Network};
pub use optim::{TrainConfig, TrainHistory};
