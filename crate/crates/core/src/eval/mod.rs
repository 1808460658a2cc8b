//! Experiment harness: rank correctness over synthetic replicas, nested
//! cross-validation, lexicon category profiles and their stability.

mod cv;
mod profile;
mod rc;

pub use cv::{nested_cv, stratified_folds, FeatureSelector, NestedCvResult, PipelineSpec};
pub use profile::{category_profile, stability, CategoryProfile, Lexicon};
pub use rc::{
    compare_methods, method_by_name, rank_correctness, replica_outcome, replica_seed, run_rc_experiment,
    sample_irrelevant, Method, RCResult, RcExperiment,
};
