//! Synthetic data with planted block structure.
//!
//! Users and items are split into `blocks` groups. A user likes items of
//! their own group (with a small chance of a cross-group item) and, in the
//! explicit variant, dislikes items of the other groups. Item popularity
//! within a group decays with rank so the data is not perfectly uniform.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{Cell, InteractionMatrix, Label};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub blocks: usize,
    /// Each user's liked count is drawn uniformly from
    /// `min_likes..=likes_per_user`.
    pub likes_per_user: usize,
    pub min_likes: usize,
    /// Zero gives implicit feedback.
    pub dislikes_per_user: usize,
    /// Chance that a liked item comes from another group.
    pub noise: f64,
    /// Popularity of the r-th item of a group is `1 / (r + 1)^skew`.
    pub skew: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n_users: 200,
            n_items: 100,
            blocks: 2,
            likes_per_user: 10,
            min_likes: 10,
            dislikes_per_user: 10,
            noise: 0.05,
            skew: 0.5,
            seed: 0,
        }
    }
}

impl PlantedConfig {
    pub fn user_block(&self, u: usize) -> usize {
        u % self.blocks
    }

    pub fn item_block(&self, p: usize) -> usize {
        p % self.blocks
    }
}

fn block_items(cfg: &PlantedConfig, b: usize) -> Vec<usize> {
    (0..cfg.n_items).filter(|&p| cfg.item_block(p) == b).collect()
}

/// Draws distinct items from `pool` by popularity, skipping `taken`.
fn draw_distinct(rng: &mut ChaCha8Rng, pool: &[usize], weights: &[f64], taken: &mut [bool]) -> Option<usize> {
    let w: Vec<f64> = pool.iter().zip(weights).map(|(&p, &w)| if taken[p] { 0.0 } else { w }).collect();
    let dist = WeightedIndex::new(&w).ok()?;
    let p = pool[dist.sample(rng)];
    taken[p] = true;
    Some(p)
}

/// Generates the matrix. Timestamps follow generation order.
pub fn planted(cfg: &PlantedConfig) -> InteractionMatrix {
    assert!(cfg.blocks >= 2 && cfg.n_items >= cfg.blocks && cfg.n_users >= cfg.blocks);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let groups: Vec<Vec<usize>> = (0..cfg.blocks).map(|b| block_items(cfg, b)).collect();
    let weights: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| (0..g.len()).map(|r| 1.0 / ((r + 1) as f64).powf(cfg.skew)).collect())
        .collect();

    let mut cells = Vec::new();
    let mut clock = 0u64;
    for u in 0..cfg.n_users {
        let own = cfg.user_block(u);
        let mut taken = vec![false; cfg.n_items];
        let mut push = |p: usize, label: Label, clock: &mut u64| {
            *clock += 1;
            cells.push(Cell {
                user: u as u32,
                item: p as u32,
                label,
                timestamp: Some(*clock),
            });
        };
        let likes = rng.random_range(cfg.min_likes.min(cfg.likes_per_user)..=cfg.likes_per_user);
        for _ in 0..likes {
            let b = if rng.random::<f64>() < cfg.noise {
                (own + rng.random_range(1..cfg.blocks)) % cfg.blocks
            } else {
                own
            };
            if let Some(p) = draw_distinct(&mut rng, &groups[b], &weights[b], &mut taken) {
                push(p, Label::Liked, &mut clock);
            }
        }
        for _ in 0..cfg.dislikes_per_user {
            let b = (own + rng.random_range(1..cfg.blocks)) % cfg.blocks;
            if let Some(p) = draw_distinct(&mut rng, &groups[b], &weights[b], &mut taken) {
                push(p, Label::Disliked, &mut clock);
            }
        }
    }
    cells.sort_by_key(|c| (c.user, c.item));
    InteractionMatrix::from_cells(cfg.n_users, cfg.n_items, cells).expect("generated cells are valid")
}
