//! Differentially private release of subtree sums over a known rooted tree.
//!
//! The crate contains the additive noise baselines (Laplace, Gaussian), an
//! additive-multiplicative pipeline built from a sparse-vector classifier and
//! a geometric threshold schedule, the error metrics used to evaluate them,
//! and executable versions of the lower-bound constructions (a packing
//! decoder attack and a nuclear-norm witness for the binary tree workload).
//!
//! Every randomized routine takes an explicit [`RngState`]; there is no
//! global randomness anywhere in the crate.

pub mod baselines;
pub mod bounds;
pub mod error;
pub mod harness;
pub mod hierarchy;
pub mod ledger;
pub mod mechanism;
pub mod metrics;
pub mod noise;
pub mod svt;
pub mod tree;

pub use error::{Error, ErrorKind, Result};
pub use hierarchy::{AccuracySpec, Label, Labels, ScheduleParams};
pub use ledger::PrivacyBudget;
pub use mechanism::Mechanism;
pub use noise::RngState;
pub use tree::{LeafCounts, NodeEstimates, NodeId, NodeWeights, TreeShape};
