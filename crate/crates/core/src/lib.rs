//! Random-forest classification of school travel modes.
//!
//! [`forest::ForestModel`] is a bagged CART ensemble, scored over repeated
//! balanced train/test splits by [`eval`]. Importance tables and partial
//! dependence curves live in [`interpret`].

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod forest;
pub mod interpret;
pub mod rng;
pub mod synth;
pub mod tree;

pub use data::{Dataset, FeatureSchema, MatrixView, TravelMode};
pub use error::{Error, Result};
pub use eval::{run_experiment, ExperimentConfig, ExperimentResult, TaskId};
pub use forest::{ForestModel, ForestParams};
pub use tree::{best_split, gini_impurity, SplitCandidate, Tree, TreeParams};

