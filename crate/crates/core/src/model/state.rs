use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelError, Toggles};
use crate::linalg::dot;

/// Dense row-major `rows x k` factor block.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    rows: usize,
    k: usize,
    data: Vec<f64>,
}

impl Factors {
    pub fn zeros(rows: usize, k: usize) -> Self {
        Factors {
            rows,
            k,
            data: vec![0.0; rows * k],
        }
    }

    pub fn from_vec(rows: usize, k: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * k, "factor buffer size");
        Factors { rows, k, data }
    }

    fn random(rows: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, 1.0 / (k as f64).sqrt()).expect("valid scale");
        Factors {
            rows,
            k,
            data: (0..rows * k).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `Fᵀ F`, row-major `k x k`.
    pub fn gram(&self) -> Vec<f64> {
        let k = self.k;
        let mut g = vec![0.0; k * k];
        for r in 0..self.rows {
            crate::linalg::add_outer(&mut g, self.row(r), 1.0);
        }
        g
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }
}

/// Every learned parameter of the joint model.
///
/// Blocks of disabled terms are kept at exact zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// α, user factors (m x k).
    pub users: Factors,
    /// β, item factors (n x k).
    pub items: Factors,
    /// γ, co-liked item context factors (n x k).
    pub liked_contexts: Factors,
    /// δ, co-disliked item context factors (n x k).
    pub disliked_contexts: Factors,
    /// θ, user context factors (m x k).
    pub user_contexts: Factors,
    /// b
    pub liked_item_bias: Vec<f64>,
    /// c
    pub liked_context_bias: Vec<f64>,
    /// d
    pub disliked_item_bias: Vec<f64>,
    /// e
    pub disliked_context_bias: Vec<f64>,
    /// f
    pub user_bias: Vec<f64>,
    /// g
    pub user_context_bias: Vec<f64>,
    pub toggles: Toggles,
}

impl ModelState {
    pub fn zeros(n_users: usize, n_items: usize, k: usize, toggles: Toggles) -> Self {
        ModelState {
            users: Factors::zeros(n_users, k),
            items: Factors::zeros(n_items, k),
            liked_contexts: Factors::zeros(n_items, k),
            disliked_contexts: Factors::zeros(n_items, k),
            user_contexts: Factors::zeros(n_users, k),
            liked_item_bias: vec![0.0; n_items],
            liked_context_bias: vec![0.0; n_items],
            disliked_item_bias: vec![0.0; n_items],
            disliked_context_bias: vec![0.0; n_items],
            user_bias: vec![0.0; n_users],
            user_context_bias: vec![0.0; n_users],
            toggles,
        }
    }

    /// Seeded initialization: factors i.i.d. `N(0, 1/k)` drawn in the fixed
    /// order α, β, γ, δ, θ (so α and β do not depend on the toggles), then
    /// disabled blocks zeroed. Biases start at zero.
    pub fn init(n_users: usize, n_items: usize, k: usize, toggles: Toggles, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = ModelState::zeros(n_users, n_items, k, toggles);
        state.users = Factors::random(n_users, k, &mut rng);
        state.items = Factors::random(n_items, k, &mut rng);
        state.liked_contexts = Factors::random(n_items, k, &mut rng);
        state.disliked_contexts = Factors::random(n_items, k, &mut rng);
        state.user_contexts = Factors::random(n_users, k, &mut rng);
        state.apply_toggles();
        state
    }

    /// Zeroes the blocks and biases of disabled terms.
    pub fn apply_toggles(&mut self) {
        let t = self.toggles;
        if !t.liked_items {
            self.liked_contexts.fill_zero();
            self.liked_item_bias.iter_mut().for_each(|v| *v = 0.0);
            self.liked_context_bias.iter_mut().for_each(|v| *v = 0.0);
        }
        if !t.disliked_items {
            self.disliked_contexts.fill_zero();
            self.disliked_item_bias.iter_mut().for_each(|v| *v = 0.0);
            self.disliked_context_bias.iter_mut().for_each(|v| *v = 0.0);
        }
        if !t.users {
            self.user_contexts.fill_zero();
            self.user_bias.iter_mut().for_each(|v| *v = 0.0);
            self.user_context_bias.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Switches terms on or off. Newly enabled context blocks are drawn from
    /// `seed`; disabled ones are zeroed. User and item factors are kept.
    pub fn retoggle(&mut self, toggles: Toggles, seed: u64) {
        let fresh = ModelState::init(self.n_users(), self.n_items(), self.k(), Toggles::ALL, seed);
        let was = self.toggles;
        if toggles.liked_items && !was.liked_items {
            self.liked_contexts = fresh.liked_contexts;
        }
        if toggles.disliked_items && !was.disliked_items {
            self.disliked_contexts = fresh.disliked_contexts;
        }
        if toggles.users && !was.users {
            self.user_contexts = fresh.user_contexts;
        }
        self.toggles = toggles;
        self.apply_toggles();
    }

    pub fn n_users(&self) -> usize {
        self.users.rows()
    }

    pub fn n_items(&self) -> usize {
        self.items.rows()
    }

    pub fn k(&self) -> usize {
        self.users.k()
    }

    pub fn is_finite(&self) -> bool {
        let blocks = [
            &self.users,
            &self.items,
            &self.liked_contexts,
            &self.disliked_contexts,
            &self.user_contexts,
        ];
        let biases = [
            &self.liked_item_bias,
            &self.liked_context_bias,
            &self.disliked_item_bias,
            &self.disliked_context_bias,
            &self.user_bias,
            &self.user_context_bias,
        ];
        blocks.iter().all(|b| b.as_slice().iter().all(|v| v.is_finite()))
            && biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn predict(&self, user: usize) -> Result<Vec<f64>, ModelError> {
        if user >= self.n_users() {
            return Err(ModelError::IndexOutOfRange {
                index: user,
                len: self.n_users(),
            });
        }
        let alpha = self.users.row(user);
        Ok((0..self.n_items()).map(|p| dot(self.items.row(p), alpha)).collect())
    }
}
