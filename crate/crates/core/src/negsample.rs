//! Personalized negative sampling for implicit feedback.
//!
//! Disliked items are never observed in implicit data, so they are inferred:
//! each user draws `⌊τ·count(u)⌋` items with replacement from a softmax over
//! the negated predicted scores of the items they have not consumed (low
//! predicted preference, high chance of being drawn). The drawn items build
//! the co-disliked matrix Y, the joint model is retrained, and the new model
//! is kept only if validation NDCG improves.

use std::io::{self, Write};

use log::{info, warn};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cooccur::{build_from_lists, build_x, build_z, SppmiMatrix};
use crate::eval::RankingTask;
use crate::ingest::{derive_seed, InteractionMatrix};
use crate::model::{self, Cooccurrence, Hyperparams, ModelError, ModelState, Preferences, Toggles};

#[derive(Debug, Error)]
pub enum NegSampleError {
    #[error("every item is observed; nothing to sample")]
    NoCandidates,
    #[error("implicit-feedback training requires a matrix without disliked cells")]
    ExplicitDislikes,
    #[error("invalid negative sampling config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegSampleConfig {
    /// Draws per user as a fraction τ of their liked count.
    pub ratio: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Draw uniformly over unobserved items instead of the softmax prior.
    pub uniform: bool,
    /// Reinitialize factors for every M-step instead of warm-starting from
    /// the current best state.
    pub cold_start: bool,
}

impl Default for NegSampleConfig {
    fn default() -> Self {
        NegSampleConfig {
            ratio: 0.2,
            max_iter: 10,
            seed: 0,
            uniform: false,
            cold_start: false,
        }
    }
}

impl NegSampleConfig {
    pub fn validate(&self) -> Result<(), NegSampleError> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(NegSampleError::InvalidConfig(format!("ratio must be in (0, 1], got {}", self.ratio)));
        }
        if self.max_iter == 0 {
            return Err(NegSampleError::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Softmax of negated scores over the items not in the sorted `observed`
/// list; observed items get probability exactly 0.
pub fn sampling_prior(scores: &[f64], observed: &[u32]) -> Result<Vec<f64>, NegSampleError> {
    let is_candidate = |p: usize| observed.binary_search(&(p as u32)).is_err();
    let top = (0..scores.len())
        .filter(|&p| is_candidate(p))
        .map(|p| -scores[p])
        .fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(NegSampleError::NoCandidates);
    }
    let mut prior: Vec<f64> = (0..scores.len())
        .map(|p| if is_candidate(p) { (-scores[p] - top).exp() } else { 0.0 })
        .collect();
    let total: f64 = prior.iter().sum();
    prior.iter_mut().for_each(|v| *v /= total);
    Ok(prior)
}

/// Uniform distribution over unobserved items.
pub fn uniform_prior(n_items: usize, observed: &[u32]) -> Result<Vec<f64>, NegSampleError> {
    sampling_prior(&vec![0.0; n_items], observed)
}

/// `⌊τ·count⌋`; zero means the user is skipped.
pub fn sample_count(ratio: f64, liked: usize) -> usize {
    (ratio * liked as f64 + 1e-9).floor() as usize
}

/// Items drawn per user, with replacement and in draw order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSampleSet {
    per_user: Vec<Vec<u32>>,
}

impl NegativeSampleSet {
    pub fn draws(&self, user: usize) -> &[u32] {
        &self.per_user[user]
    }

    pub fn n_users(&self) -> usize {
        self.per_user.len()
    }

    pub fn total_draws(&self) -> usize {
        self.per_user.iter().map(Vec::len).sum()
    }

    /// Distinct drawn items per user, sorted.
    pub fn disliked_lists(&self) -> Vec<Vec<u32>> {
        self.per_user
            .iter()
            .map(|d| {
                let mut d = d.clone();
                d.sort_unstable();
                d.dedup();
                d
            })
            .collect()
    }

    /// `user<TAB>item` per distinct sampled pair.
    pub fn write_dump<W: Write>(&self, mut w: W, user_ids: &[String], item_ids: &[String]) -> io::Result<()> {
        for (u, items) in self.disliked_lists().iter().enumerate() {
            for &p in items {
                writeln!(w, "{}\t{}", user_ids[u], item_ids[p as usize])?;
            }
        }
        Ok(())
    }
}

/// E-step: draws every user's negatives from the prior of `state`.
/// Each user's generator is seeded from `(seed, round, user)`, so serial and
/// parallel runs agree.
pub fn draw_negatives(
    state: &ModelState,
    prefs: &Preferences,
    cfg: &NegSampleConfig,
    round: u64,
) -> Result<NegativeSampleSet, NegSampleError> {
    let round_seed = derive_seed(cfg.seed, round);
    let per_user = (0..prefs.n_users())
        .into_par_iter()
        .map(|u| {
            let liked = prefs.items_of(u);
            let ns = sample_count(cfg.ratio, liked.len());
            if ns == 0 {
                return Ok(Vec::new());
            }
            let prior = if cfg.uniform {
                uniform_prior(prefs.n_items(), liked)
            } else {
                sampling_prior(&state.predict(u)?, liked)
            };
            let prior = match prior {
                Ok(p) => p,
                Err(NegSampleError::NoCandidates) => {
                    warn!("user {u} has consumed every item; no negatives drawn");
                    return Ok(Vec::new());
                }
                Err(e) => return Err(e),
            };
            let dist = WeightedIndex::new(&prior).map_err(|e| NegSampleError::InvalidConfig(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(round_seed, u as u64));
            Ok((0..ns).map(|_| dist.sample(&mut rng) as u32).collect())
        })
        .collect::<Result<Vec<_>, NegSampleError>>()?;
    Ok(NegativeSampleSet { per_user })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmIteration {
    pub iteration: usize,
    pub ndcg: f64,
    pub accepted: bool,
    pub draws: usize,
    pub sweeps: usize,
}

#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub state: ModelState,
    /// Validation NDCG@100 of the WMF initialization.
    pub initial_ndcg: f64,
    pub history: Vec<EmIteration>,
    /// The negatives drawn at each iteration.
    pub samples: Vec<NegativeSampleSet>,
}

impl EmOutcome {
    /// NDCG of the iterations that replaced the best state, in order.
    pub fn accepted_ndcg(&self) -> Vec<f64> {
        self.history.iter().filter(|h| h.accepted).map(|h| h.ndcg).collect()
    }
}

/// Alternates negative drawing and joint retraining on an implicit-feedback
/// training matrix, starting from WMF. An iteration is accepted only if its
/// validation NDCG@100 beats the best so far (initially 0); the first
/// rejection stops the loop.
pub fn em_train(
    train: &InteractionMatrix,
    hp: &Hyperparams,
    cfg: &NegSampleConfig,
    valid: &RankingTask,
) -> Result<EmOutcome, NegSampleError> {
    cfg.validate()?;
    hp.validate()?;
    if train.has_dislikes() {
        return Err(NegSampleError::ExplicitDislikes);
    }
    let prefs = Preferences::from_matrix(train);
    let (m, n) = (prefs.n_users(), prefs.n_items());
    let x = if hp.toggles.liked_items {
        build_x(train, hp.shift)
    } else {
        SppmiMatrix::empty(n)
    };
    let z = if hp.toggles.users {
        build_z(train, hp.shift)
    } else {
        SppmiMatrix::empty(m)
    };

    let wmf_hp = Hyperparams {
        toggles: Toggles::NONE,
        ..hp.clone()
    };
    let empty_items = SppmiMatrix::empty(n);
    let empty_users = SppmiMatrix::empty(m);
    let init = model::train(
        &prefs,
        &Cooccurrence::new(&empty_items, &empty_items, &empty_users),
        &wmf_hp,
        Some(valid),
    )?;
    let initial_ndcg = init.best_ndcg.unwrap_or(0.0);
    info!("EM init (WMF): valid NDCG@100 {initial_ndcg:.5}");

    let mut best = init.state;
    let mut prev_ndcg = 0.0;
    let mut history = Vec::new();
    let mut samples = Vec::new();

    for iteration in 1..=cfg.max_iter {
        let negatives = draw_negatives(&best, &prefs, cfg, iteration as u64)?;
        let y = if hp.toggles.disliked_items {
            build_from_lists(n, &negatives.disliked_lists(), hp.shift)
        } else {
            SppmiMatrix::empty(n)
        };
        let ctx = Cooccurrence::new(&x, &y, &z);
        let round_seed = derive_seed(hp.seed, iteration as u64);
        let start = if cfg.cold_start {
            ModelState::init(m, n, hp.k, hp.toggles, round_seed)
        } else {
            let mut s = best.clone();
            s.retoggle(hp.toggles, round_seed);
            s
        };
        let out = model::train_from(start, &prefs, &ctx, hp, Some(valid))?;
        let ndcg = out.best_ndcg.unwrap_or(0.0);
        let accepted = ndcg > prev_ndcg;
        info!(
            "EM iteration {iteration}: {} draws, NDCG@100 {ndcg:.5} ({})",
            negatives.total_draws(),
            if accepted { "accepted" } else { "rejected" }
        );
        history.push(EmIteration {
            iteration,
            ndcg,
            accepted,
            draws: negatives.total_draws(),
            sweeps: out.history.len(),
        });
        samples.push(negatives);
        if !accepted {
            break;
        }
        best = out.state;
        prev_ndcg = ndcg;
    }

    Ok(EmOutcome {
        state: best,
        initial_ndcg,
        history,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn equal_scores_give_uniform_prior() {
        let p = sampling_prior(&[0.3; 4], &[1]).unwrap();
        assert_eq!(p[1], 0.0);
        for v in [p[0], p[2], p[3]] {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_item_softmax() {
        let p = sampling_prior(&[1.0, 2.0], &[]).unwrap();
        let (a, b) = ((-1f64).exp(), (-2f64).exp());
        assert_abs_diff_eq!(p[0], a / (a + b), epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], 0.7310585786300049, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.2689414213699951, epsilon = 1e-12);
    }

    #[test]
    fn observed_items_get_zero_regardless_of_score() {
        let p = sampling_prior(&[-1e6, 0.0, 5.0], &[0]).unwrap();
        assert_eq!(p[0], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(sampling_prior(&[1.0, 2.0], &[0, 1]), Err(NegSampleError::NoCandidates)));
    }

    #[test]
    fn extreme_scores_stay_finite() {
        let p = sampling_prior(&[-800.0, 800.0, 0.0], &[]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn draw_counts_follow_ratio() {
        assert_eq!(sample_count(0.8, 10), 8);
        assert_eq!(sample_count(0.6, 10), 6);
        assert_eq!(sample_count(0.2, 4), 0);
        assert_eq!(sample_count(1.0, 1), 1);
    }

    #[test]
    fn single_candidate_is_always_drawn() {
        let prefs = Preferences::from_lists(2, &[vec![0]]);
        let state = ModelState::init(1, 2, 2, Toggles::NONE, 3);
        let cfg = NegSampleConfig {
            ratio: 1.0,
            ..NegSampleConfig::default()
        };
        let set = draw_negatives(&state, &prefs, &cfg, 1).unwrap();
        assert_eq!(set.draws(0), &[1]);
    }

    #[test]
    fn draws_are_deterministic_and_exclude_observed() {
        let lists: Vec<Vec<u32>> = (0..30).map(|u| (0..10).filter(|p| (p + u) % 3 == 0).collect()).collect();
        let prefs = Preferences::from_lists(10, &lists);
        let state = ModelState::init(30, 10, 3, Toggles::NONE, 5);
        let cfg = NegSampleConfig {
            ratio: 1.0,
            seed: 17,
            ..NegSampleConfig::default()
        };
        let a = draw_negatives(&state, &prefs, &cfg, 1).unwrap();
        let b = draw_negatives(&state, &prefs, &cfg, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, draw_negatives(&state, &prefs, &cfg, 2).unwrap());
        for u in 0..30 {
            assert_eq!(a.draws(u).len(), lists[u].len());
            assert!(a.draws(u).iter().all(|p| !lists[u].contains(p)));
        }
    }

    #[test]
    fn rejects_explicit_matrix() {
        use crate::ingest::{Cell, Label};
        let m = InteractionMatrix::from_cells(
            1,
            2,
            vec![
                Cell { user: 0, item: 0, label: Label::Liked, timestamp: None },
                Cell { user: 0, item: 1, label: Label::Disliked, timestamp: None },
            ],
        )
        .unwrap();
        let task = RankingTask::new(vec![vec![]], vec![vec![1]]);
        assert!(matches!(
            em_train(&m, &Hyperparams { k: 2, ..Hyperparams::default() }, &NegSampleConfig::default(), &task),
            Err(NegSampleError::ExplicitDislikes)
        ));
    }
}
