//! Post-hoc confidence estimation for extractive question answering.
//!
//! The pipeline reads prediction dumps from a span-extraction QA model,
//! derives a correctness label for each top answer, turns each dump record
//! into a fixed set of grey-box and gradient features, fits a logistic-loss
//! gradient boosted tree ensemble on those features, and measures how well the
//! resulting confidence separates correct from incorrect answers.
//!
//! Module map:
//!
//! * [`data_model`] - prediction dump schema, JSONL parsing and validation
//! * [`labeling`] - SQuAD-style normalization, exact match, token F1, splits
//! * [`featurizer`] - IDF tables, summary statistics, feature vectors
//! * [`gbm`] - gradient boosted machine with Bernoulli loss
//! * [`selection`] - noise-feature selection and grid search
//! * [`evaluation`] - ROC AUC, best-threshold F1, paired randomization test
//! * [`reporting`] - influence tables and query-gradient highlighting
//! * [`synth`] - seeded synthetic prediction dumps for tests and demos

pub mod data_model;
pub mod error;
pub mod evaluation;
pub mod featurizer;
pub mod gbm;
pub mod labeling;
pub mod reporting;
pub mod selection;
pub mod synth;

pub use error::{Error, Result};
