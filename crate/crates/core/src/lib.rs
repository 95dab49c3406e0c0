//! Top-N recommendation by jointly factorizing a user-item preference matrix
//! with three SPPMI co-occurrence matrices: co-liked items, co-disliked items
//! and co-occurring users.
//!
//! The pipeline is
//!
//! 1. [`ingest`]: parse interaction logs, binarize into liked / disliked
//!    cells, k-core filter and split into train / validation / test.
//! 2. [`cooccur`]: greedy all-pairs context generation and SPPMI matrices.
//! 3. [`model`]: the joint objective and its vector-wise ALS optimizer,
//!    with term toggles for the WMF / Cofactor / U_RME / I_RME / RME variants.
//! 4. [`negsample`]: EM-like personalized negative sampling for implicit
//!    feedback, where disliked items are not observed.
//! 5. [`eval`]: Recall@N, NDCG@N, MAP@N, user activity groups and
//!    two-sample t-tests across folds.
//!
//! [`persist`] stores trained models in a versioned binary container and
//! [`synthetic`] generates planted-structure datasets.

pub mod cooccur;
pub mod eval;
pub mod ingest;
mod linalg;
pub mod model;
pub mod negsample;
pub mod persist;
pub mod synthetic;

pub use cooccur::{build_x, build_y, build_z, PairCounts, SppmiMatrix};
pub use eval::{evaluate, EvalReport, RankingTask, UserGroupSpec};
pub use ingest::{InteractionMatrix, Label, SplitSpec};
pub use model::{Hyperparams, ModelState, Preferences, Toggles, Variant};
pub use negsample::{em_train, NegSampleConfig};
