//! Causal feature selection for high-dimensional sparse classification data.
//!
//! Every candidate feature is treated in turn as a binary treatment. Samples
//! are split into treated and control groups, paired by nearest-neighbour
//! matching on a reduced-dimension representation of the remaining features
//! (or by one of the baseline matchers), and the outcomes of the matched pairs
//! are compared with McNemar's test. Features are ranked by p-value.

pub mod classify;
pub mod corpus;
pub mod dimred;
pub mod eval;
pub mod error;
pub(crate) mod linalg;
pub mod logistic;
pub mod matching;
pub mod seed;
pub mod select;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
