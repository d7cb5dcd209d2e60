//! Delayed Memory Unit recurrent cells with manual backpropagation through
//! time, baseline cells, training, synthetic tasks and analysis exports.

pub mod analysis;
pub mod backprop;
pub mod cells;
pub mod datasets;
pub mod error;
pub mod network;
pub mod numerics;
pub mod params;
pub mod training;

pub use backprop::{DecodeMode, GradientSet};
pub use cells::{count_params, CellKind, CellParams, DmuConfig, DmuState, LayerParams};
pub use datasets::{SequenceBatch, Target, TaskData};
pub use error::{Error, Result};
pub use network::{LayerSpec, Network, Topology};
pub use numerics::{Activation, Matrix, SeededRng, Vector};
pub use params::Parameters;
pub use training::{evaluate, train, MetricsRecord, TrainConfig};
