use log::debug;

use super::update::{update_biases, update_context_factors, update_item_factors, update_user_factors};
use super::{objective, Cooccurrence, Hyperparams, ModelError, ModelState, Preferences};
use crate::eval::RankingTask;

/// Cutoff of the validation NDCG used for early stopping.
pub const VALIDATION_CUTOFF: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    /// 1-based sweep index.
    pub sweep: usize,
    pub objective: f64,
    pub valid_ndcg: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The state with the best validation NDCG, or the last state when no
    /// validation task was given.
    pub state: ModelState,
    pub history: Vec<SweepRecord>,
    pub best_sweep: usize,
    pub best_ndcg: Option<f64>,
}

/// One full sweep: α, β, then γ/δ/θ, then the biases.
pub fn sweep(state: &mut ModelState, prefs: &Preferences, ctx: &Cooccurrence, hp: &Hyperparams) -> Result<(), ModelError> {
    update_user_factors(state, prefs, ctx, hp)?;
    update_item_factors(state, prefs, ctx, hp)?;
    update_context_factors(state, prefs, ctx, hp)?;
    update_biases(state, ctx);
    Ok(())
}

/// Trains from a fresh seeded initialization.
pub fn train(
    prefs: &Preferences,
    ctx: &Cooccurrence,
    hp: &Hyperparams,
    valid: Option<&RankingTask>,
) -> Result<TrainOutcome, ModelError> {
    let state = ModelState::init(prefs.n_users(), prefs.n_items(), hp.k, hp.toggles, hp.seed);
    train_from(state, prefs, ctx, hp, valid)
}

/// Runs sweeps from `state` until `max_sweeps`, or until validation NDCG@100
/// has not improved for `patience` consecutive sweeps.
pub fn train_from(
    mut state: ModelState,
    prefs: &Preferences,
    ctx: &Cooccurrence,
    hp: &Hyperparams,
    valid: Option<&RankingTask>,
) -> Result<TrainOutcome, ModelError> {
    hp.validate()?;
    super::objective::check_shapes(&state, prefs, ctx, hp)?;
    for (name, mat) in [("X", ctx.liked), ("Y", ctx.disliked), ("Z", ctx.users)] {
        if !mat.is_symmetric() {
            return Err(ModelError::DimensionMismatch(format!("{name} is not symmetric")));
        }
    }
    state.toggles = hp.toggles;
    state.apply_toggles();

    let mut history = Vec::new();
    let mut best: Option<(ModelState, f64, usize)> = None;
    let mut stale = 0usize;

    for t in 1..=hp.max_sweeps {
        sweep(&mut state, prefs, ctx, hp)?;
        let obj = objective(&state, prefs, ctx, hp)?;
        if !obj.is_finite() || !state.is_finite() {
            return Err(ModelError::NonFiniteObjective { sweep: t });
        }
        let ndcg = valid.map(|task| task.mean_ndcg(&state, VALIDATION_CUTOFF));
        debug!("sweep {t}: objective {obj:.6e}, valid NDCG@100 {ndcg:?}");
        history.push(SweepRecord {
            sweep: t,
            objective: obj,
            valid_ndcg: ndcg,
        });

        if let Some(score) = ndcg {
            match &best {
                Some((_, b, _)) if score <= *b => {
                    stale += 1;
                    if stale >= hp.patience.max(1) {
                        break;
                    }
                }
                _ => {
                    best = Some((state.clone(), score, t));
                    stale = 0;
                }
            }
        }
    }

    Ok(match best {
        Some((state, score, sweep)) => TrainOutcome {
            state,
            history,
            best_sweep: sweep,
            best_ndcg: Some(score),
        },
        None => TrainOutcome {
            best_sweep: history.len(),
            state,
            history,
            best_ndcg: None,
        },
    })
}
