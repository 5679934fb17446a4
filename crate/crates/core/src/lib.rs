//! Model reduction for a sawmill flow line.
//!
//! The crate couples a discrete-event simulator of the line with a
//! one-hidden-layer perceptron that learns the delay between line entry and
//! arrival in the trimmer queue. The surrogate is trained by robust
//! Levenberg-Marquardt, pruned by saliency-guided weight elimination, and used
//! to study how the categorical inputs (conveyor choice, product category)
//! should be presented to the network.
//!
//! Module map:
//!
//! - [`mlp`]: parameters, initialization, forward pass and Jacobian.
//! - [`trainer`]: robust Levenberg-Marquardt.
//! - [`pruner`]: weight elimination with retraining.
//! - [`sim`]: the full and reduced sawmill simulations.
//! - [`reduction`]: bottleneck classification and synchronization stations.
//! - [`encoding`]: categorical encodings, scaling and learn/validation split.
//! - [`stats`]: residual summaries, correlations, Welch t and Fisher F tests.
//! - [`study`]: the multi-trial encoding study and its artifacts.

pub mod encoding;
pub mod error;
pub mod mlp;
pub mod pruner;
pub mod reduction;
pub mod sim;
pub mod stats;
pub mod study;
pub mod trainer;

pub use encoding::{Dataset, DiscreteScaling, EncodingScheme, Scaler, SplitMode};
pub use error::{Error, Result};
pub use mlp::{EffectiveStructure, MlpParams, ModelFile};
pub use pruner::{PruneConfig, PruneOutcome, RemovalRecord};
pub use sim::{
    LogEntity, ProductFeatures, ProductTrace, Rqm, SimConfig, SimRun, Station, TPiece,
};
pub use stats::{SummaryTable, TestOutcome};
pub use study::{StudyConfig, StudyReport};
pub use trainer::{TrainConfig, TrainHistory, TrainOutcome};
