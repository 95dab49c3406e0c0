//! The joint objective and its vector-wise ALS optimizer.
//!
//! Terms:
//! - WMF on the binary preference matrix M, with confidence
//!   `w_up = l·(1 + φ·M_up)` over every (user, item) cell;
//! - co-liked item embedding: `β_p·γ_i + b_p + c_i ≈ X_pi` on nonzero X;
//! - co-disliked item embedding: `β_p·δ_i + d_p + e_i ≈ Y_pi` on nonzero Y;
//! - user embedding: `α_u·θ_j + f_u + g_j ≈ Z_uj` on nonzero Z;
//! - ridge penalties on every factor vector (biases are not penalized).
//!
//! The three embedding terms are switched by [`Toggles`]; with all three
//! off the model is plain WMF.

mod objective;
mod state;
mod train;
mod update;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::cooccur::SppmiMatrix;
use crate::ingest::InteractionMatrix;

pub use objective::{objective, objective_terms, ObjectiveTerms};
pub use state::{Factors, ModelState};
pub use train::{sweep, train, train_from, SweepRecord, TrainOutcome, VALIDATION_CUTOFF};
pub use update::{
    update_bias_block, update_biases, update_context_block, update_context_factors, update_item_factors,
    update_user_factors, BiasBlock, ContextBlock,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular {block} system at row {row}; use a positive regularization weight")]
    SingularSystem { block: &'static str, row: usize },
    #[error("objective became non-finite at sweep {sweep}")]
    NonFiniteObjective { sweep: usize },
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
}

/// Which embedding terms take part in the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Toggles {
    /// Co-liked item embedding (X, γ, b, c).
    pub liked_items: bool,
    /// Co-disliked item embedding (Y, δ, d, e).
    pub disliked_items: bool,
    /// User embedding (Z, θ, f, g).
    pub users: bool,
}

impl Toggles {
    pub const NONE: Toggles = Toggles {
        liked_items: false,
        disliked_items: false,
        users: false,
    };
    pub const ALL: Toggles = Toggles {
        liked_items: true,
        disliked_items: true,
        users: true,
    };
}

/// Named term combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Wmf,
    /// WMF + co-liked item embedding.
    Cofactor,
    /// WMF + co-liked item embedding + user embedding.
    URme,
    /// WMF + co-liked and co-disliked item embeddings.
    IRme,
    Rme,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Wmf, Variant::Cofactor, Variant::URme, Variant::IRme, Variant::Rme];

    pub fn toggles(self) -> Toggles {
        match self {
            Variant::Wmf => Toggles::NONE,
            Variant::Cofactor => Toggles {
                liked_items: true,
                ..Toggles::NONE
            },
            Variant::URme => Toggles {
                liked_items: true,
                users: true,
                ..Toggles::NONE
            },
            Variant::IRme => Toggles {
                liked_items: true,
                disliked_items: true,
                ..Toggles::NONE
            },
            Variant::Rme => Toggles::ALL,
        }
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wmf" => Ok(Variant::Wmf),
            "cofactor" => Ok(Variant::Cofactor),
            "u_rme" | "urme" => Ok(Variant::URme),
            "i_rme" | "irme" => Ok(Variant::IRme),
            "rme" => Ok(Variant::Rme),
            other => Err(format!("unknown model variant `{other}`")),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Wmf => "wmf",
            Variant::Cofactor => "cofactor",
            Variant::URme => "u_rme",
            Variant::IRme => "i_rme",
            Variant::Rme => "rme",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Latent dimension.
    pub k: usize,
    /// Ridge weight on user and item factors (α, β).
    pub lambda_factor: f64,
    /// Ridge weight on context factors (γ, δ, θ).
    pub lambda_context: f64,
    /// Relative scale `l` of the WMF confidence weights.
    pub scale: f64,
    /// Confidence boost `φ` for observed cells.
    pub confidence: f64,
    pub w_liked_cooccur: f64,
    pub w_disliked_cooccur: f64,
    pub w_user_cooccur: f64,
    /// SPPMI shift `s`.
    pub shift: f64,
    pub max_sweeps: usize,
    /// Sweeps without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub toggles: Toggles,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            k: 40,
            lambda_factor: 1.0,
            lambda_context: 1.0,
            scale: 1.0,
            confidence: 10.0,
            w_liked_cooccur: 1.0,
            w_disliked_cooccur: 1.0,
            w_user_cooccur: 1.0,
            shift: 1.0,
            max_sweeps: 20,
            patience: 1,
            seed: 0,
            toggles: Toggles::ALL,
        }
    }
}

impl Hyperparams {
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda_factor = lambda;
        self.lambda_context = lambda;
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.toggles = variant.toggles();
        self
    }

    /// WMF weight of an unobserved cell.
    pub fn weight_unobserved(&self) -> f64 {
        self.scale
    }

    /// WMF weight of a liked cell.
    pub fn weight_observed(&self) -> f64 {
        self.scale * (1.0 + self.confidence)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidHyperparams(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.lambda_factor >= 0.0 && self.lambda_context >= 0.0) {
            return bad(format!(
                "regularization weights must be nonnegative (got {}, {})",
                self.lambda_factor, self.lambda_context
            ));
        }
        if !(self.scale > 0.0 && self.confidence >= 0.0) {
            return bad(format!("need l > 0 and φ >= 0 (got {}, {})", self.scale, self.confidence));
        }
        let weights = [self.w_liked_cooccur, self.w_disliked_cooccur, self.w_user_cooccur];
        if weights.iter().any(|w| w.is_nan() || *w <= 0.0) {
            return bad(format!("co-occurrence weights must be positive (got {weights:?})"));
        }
        if self.shift.is_nan() || self.shift <= 0.0 {
            return bad(format!("SPPMI shift must be positive (got {})", self.shift));
        }
        Ok(())
    }
}

/// Binary liked matrix M in both row (user) and column (item) orientation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Preferences {
    n_users: usize,
    n_items: usize,
    user_ptr: Vec<usize>,
    user_items: Vec<u32>,
    item_ptr: Vec<usize>,
    item_users: Vec<u32>,
}

impl Preferences {
    /// Liked cells of `matrix`; disliked cells count as zeros.
    pub fn from_matrix(matrix: &InteractionMatrix) -> Self {
        Self::from_lists(matrix.n_items(), &matrix.liked_by_user())
    }

    /// From per-user liked item lists over `n_items` items.
    pub fn from_lists(n_items: usize, by_user: &[Vec<u32>]) -> Self {
        let n_users = by_user.len();
        let mut user_ptr = Vec::with_capacity(n_users + 1);
        let mut user_items = Vec::new();
        user_ptr.push(0);
        let mut item_deg = vec![0usize; n_items];
        for list in by_user {
            let mut list = list.clone();
            list.sort_unstable();
            list.dedup();
            for &p in &list {
                assert!((p as usize) < n_items, "item {p} out of range {n_items}");
                item_deg[p as usize] += 1;
            }
            user_items.extend(list);
            user_ptr.push(user_items.len());
        }
        let mut item_ptr = vec![0usize; n_items + 1];
        for p in 0..n_items {
            item_ptr[p + 1] = item_ptr[p] + item_deg[p];
        }
        let mut fill = item_ptr.clone();
        let mut item_users = vec![0u32; user_items.len()];
        for u in 0..n_users {
            for &p in &user_items[user_ptr[u]..user_ptr[u + 1]] {
                item_users[fill[p as usize]] = u as u32;
                fill[p as usize] += 1;
            }
        }
        Preferences {
            n_users,
            n_items,
            user_ptr,
            user_items,
            item_ptr,
            item_users,
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn nnz(&self) -> usize {
        self.user_items.len()
    }

    /// Sorted items liked by user `u`.
    pub fn items_of(&self, u: usize) -> &[u32] {
        &self.user_items[self.user_ptr[u]..self.user_ptr[u + 1]]
    }

    /// Sorted users who liked item `p`.
    pub fn users_of(&self, p: usize) -> &[u32] {
        &self.item_users[self.item_ptr[p]..self.item_ptr[p + 1]]
    }

    pub fn is_liked(&self, u: usize, p: u32) -> bool {
        self.items_of(u).binary_search(&p).is_ok()
    }

    pub fn by_user(&self) -> Vec<Vec<u32>> {
        (0..self.n_users).map(|u| self.items_of(u).to_vec()).collect()
    }
}

/// The three SPPMI matrices. Matrices of disabled terms are ignored.
#[derive(Debug, Clone, Copy)]
pub struct Cooccurrence<'a> {
    /// X, co-liked items (n x n).
    pub liked: &'a SppmiMatrix,
    /// Y, co-disliked items (n x n).
    pub disliked: &'a SppmiMatrix,
    /// Z, co-occurring users (m x m).
    pub users: &'a SppmiMatrix,
}

impl<'a> Cooccurrence<'a> {
    pub fn new(liked: &'a SppmiMatrix, disliked: &'a SppmiMatrix, users: &'a SppmiMatrix) -> Self {
        Cooccurrence { liked, disliked, users }
    }

    pub fn check(&self, prefs: &Preferences) -> Result<(), ModelError> {
        let (m, n) = (prefs.n_users(), prefs.n_items());
        for (name, mat, want) in [("X", self.liked, n), ("Y", self.disliked, n), ("Z", self.users, m)] {
            if mat.dim() != want {
                return Err(ModelError::DimensionMismatch(format!(
                    "{name} has dimension {}, expected {want}",
                    mat.dim()
                )));
            }
        }
        Ok(())
    }

    pub fn nnz(&self) -> usize {
        self.liked.nnz() + self.disliked.nnz() + self.users.nnz()
    }
}

/// Scores `β·α_u` for every item.
pub fn predict_scores(state: &ModelState, user: usize) -> Result<Vec<f64>, ModelError> {
    state.predict(user)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_toggles() {
        assert_eq!(Variant::Wmf.toggles(), Toggles::NONE);
        assert_eq!(Variant::Rme.toggles(), Toggles::ALL);
        let c = Variant::Cofactor.toggles();
        assert!(c.liked_items && !c.disliked_items && !c.users);
        let u = Variant::URme.toggles();
        assert!(u.liked_items && !u.disliked_items && u.users);
        let i = Variant::IRme.toggles();
        assert!(i.liked_items && i.disliked_items && !i.users);
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn confidence_weights() {
        let hp = Hyperparams {
            scale: 2.0,
            confidence: 3.0,
            ..Hyperparams::default()
        };
        assert_eq!(hp.weight_unobserved(), 2.0);
        assert_eq!(hp.weight_observed(), 8.0);
    }

    #[test]
    fn preferences_both_orientations() {
        let p = Preferences::from_lists(3, &[vec![2, 0], vec![], vec![0, 0]]);
        assert_eq!(p.items_of(0), &[0, 2]);
        assert_eq!(p.items_of(2), &[0]);
        assert_eq!(p.users_of(0), &[0, 2]);
        assert_eq!(p.users_of(1), &[] as &[u32]);
        assert_eq!(p.nnz(), 3);
        assert!(p.is_liked(0, 2));
        assert!(!p.is_liked(1, 2));
    }

    #[test]
    fn rejects_bad_hyperparams() {
        assert!(Hyperparams { k: 0, ..Hyperparams::default() }.validate().is_err());
        assert!(Hyperparams::default().with_lambda(-1.0).validate().is_err());
        assert!(Hyperparams {
            w_user_cooccur: 0.0,
            ..Hyperparams::default()
        }
        .validate()
        .is_err());
        assert!(Hyperparams::default().validate().is_ok());
    }
}
