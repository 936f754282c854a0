//! Multiobjective 0-1 knapsack over exact and sparsified binary decision
//! diagrams.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0)` also rejects NaN

pub mod bdd;
pub mod error;
pub mod features;
pub mod instance;
pub mod metrics;
pub mod oracle;
pub mod pareto;
pub mod scalar;
pub mod sparsifier;
pub mod stitch;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision feature vector.
pub type FeatureVec = features::FeatureVector<f64>;
/// Double-precision training row.
pub type Row = features::DatasetRow<f64>;
/// Double-precision node classifier.
pub type Sparsifier = sparsifier::SparsifierModel<f64>;
/// Double-precision node scores.
pub type Scores = sparsifier::NodeScores<f64>;
