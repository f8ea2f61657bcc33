//! KNN regression ensembles built from bagged rows, bagged features and
//! per-learner randomized neighborhood sizes, together with a Tweedie
//! outcome simulator and a deterministic experiment harness.
//!
//! The crate is organized bottom-up:
//!
//! - [`data`]: datasets, CSV ingestion, train/test splitting, standardization.
//! - [`knn`]: exact nearest-neighbor search (brute force and k-d tree) and
//!   the single KNN regressor.
//! - [`ensemble`]: the seven bagging / varying-k constructions, the tuned-k
//!   baseline, and model persistence.
//! - [`tweedie`]: Poisson, gamma and compound Poisson-gamma samplers and the
//!   simulation scenario generator.
//! - [`metrics`]: MSE, mean-model R² and replicate aggregation.
//! - [`harness`]: grid expansion, trial execution and report emission.
//!
//! Parallelism goes through [`exec::Execution`]. With the default `parallel`
//! feature it is backed by rayon; without it every path runs sequentially and
//! produces identical results.

pub mod data;
pub mod ensemble;
pub mod exec;
pub mod harness;
pub mod knn;
pub mod metrics;
pub mod rng;
pub mod tweedie;

pub use data::{Dataset, IngestRecipe, SplitIndices, Standardizer};
pub use ensemble::{EnsembleModel, EnsembleSpec, KPolicy};
pub use exec::Execution;
pub use knn::{KnnRegressor, NeighborIndex};
