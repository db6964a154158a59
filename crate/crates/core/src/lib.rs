//! Bottom-up hidden tree Markov models over positional labelled trees.
//!
//! The joint state-transition tensor of a bottom-up model grows as
//! `C^(L+1)`. [`model::TfModelParams`] replaces it with a probabilistic Tucker
//! decomposition: per-position hard clusterings of child states feed a sparse
//! core tensor whose size is learned by [`gibbs::train`]. The switching-parent
//! approximation in [`sp`] is provided as a baseline, and [`tasks`] holds the
//! classification and labelling protocols.

pub mod checkpoint;
pub mod gibbs;
pub mod inference;
pub mod math;
pub mod model;
pub mod sp;
pub mod tasks;
pub mod trees;

pub use gibbs::{train, ChainState, SufficientStats};
pub use inference::{marginal_log_likelihood, node_label_marginals, LatentAssignment};
pub use model::{HardClustering, HyperParams, SpModelParams, TfModelParams};
pub use sp::{sp_marginal_log_likelihood, sp_train, SpLatentAssignment};
pub use tasks::{ModelKind, TrainedModel};
pub use trees::{parse_corpus, LabelledTree, TreeCorpus};
