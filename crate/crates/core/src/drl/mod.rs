//! Policy-gradient search over rule sequences.
//!
//! [`Policy`] is a tabular autoregressive decoder with exact log
//! probabilities. [`train`] runs REINFORCE with either the standard
//! score-function estimator or the egg estimator, which credits each sample
//! with the total probability of its extracted equivalents. The [`oracle`]
//! and [`verify`] modules check both estimators against exact enumeration.

pub mod estimator;
pub mod oracle;
pub mod policy;
pub mod train;
pub mod verify;

pub use estimator::{
    baseline, egg_equivalents, egg_gradient, standard_gradient, BaselineMode, EquivalenceCache, EstimatorKind,
    GradEstimate, Trajectory, Weighting,
};
pub use oracle::{enumerate_sequences, Enumeration, OracleError};
pub use policy::{Policy, PolicyError};
pub use train::{train, TrainConfig, TrainResult, TrainTraceRow};
pub use verify::{verify_estimators, VerifyConfig, VerifyReport};
