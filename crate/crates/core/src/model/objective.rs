use super::{Cooccurrence, Hyperparams, ModelError, ModelState, Preferences};
use crate::cooccur::SppmiMatrix;
use crate::linalg::dot;
use crate::model::Factors;

/// The objective split into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveTerms {
    pub wmf: f64,
    pub liked_items: f64,
    pub disliked_items: f64,
    pub users: f64,
    pub regularization: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.wmf + self.liked_items + self.disliked_items + self.users + self.regularization
    }
}

pub(crate) fn check_shapes(state: &ModelState, prefs: &Preferences, ctx: &Cooccurrence, hp: &Hyperparams) -> Result<(), ModelError> {
    ctx.check(prefs)?;
    if state.n_users() != prefs.n_users() || state.n_items() != prefs.n_items() {
        return Err(ModelError::DimensionMismatch(format!(
            "state is {}x{}, preferences are {}x{}",
            state.n_users(),
            state.n_items(),
            prefs.n_users(),
            prefs.n_items()
        )));
    }
    if state.k() != hp.k {
        return Err(ModelError::DimensionMismatch(format!(
            "state has k = {}, hyperparameters k = {}",
            state.k(),
            hp.k
        )));
    }
    Ok(())
}

/// `½ w Σ_{(p,i) stored} (v_pi − row_p·ctx_i − bias_p − ctx_bias_i)²`
fn embedding_term(
    mat: &SppmiMatrix,
    rows: &Factors,
    contexts: &Factors,
    row_bias: &[f64],
    context_bias: &[f64],
    weight: f64,
) -> f64 {
    0.5 * weight
        * mat
            .iter()
            .map(|(p, i, v)| {
                let (p, i) = (p as usize, i as usize);
                let r = v - dot(rows.row(p), contexts.row(i)) - row_bias[p] - context_bias[i];
                r * r
            })
            .sum::<f64>()
}

/// Evaluates the joint objective term by term.
///
/// The WMF part covers every (user, item) cell; it is computed as
/// `l·Σ_all (α_u·β_p)²` through `tr(αᵀα · βᵀβ)` plus a correction over the
/// liked cells, which is exact.
pub fn objective_terms(
    state: &ModelState,
    prefs: &Preferences,
    ctx: &Cooccurrence,
    hp: &Hyperparams,
) -> Result<ObjectiveTerms, ModelError> {
    check_shapes(state, prefs, ctx, hp)?;
    let (w0, w1) = (hp.weight_unobserved(), hp.weight_observed());

    let ga = state.users.gram();
    let gb = state.items.gram();
    let all_sq: f64 = ga.iter().zip(&gb).map(|(a, b)| a * b).sum();
    let mut observed = 0.0;
    for u in 0..prefs.n_users() {
        let alpha = state.users.row(u);
        for &p in prefs.items_of(u) {
            let s = dot(alpha, state.items.row(p as usize));
            observed += w1 * (1.0 - s) * (1.0 - s) - w0 * s * s;
        }
    }
    let mut terms = ObjectiveTerms {
        wmf: 0.5 * (w0 * all_sq + observed),
        ..ObjectiveTerms::default()
    };

    let t = state.toggles;
    if t.liked_items {
        terms.liked_items = embedding_term(
            ctx.liked,
            &state.items,
            &state.liked_contexts,
            &state.liked_item_bias,
            &state.liked_context_bias,
            hp.w_liked_cooccur,
        );
    }
    if t.disliked_items {
        terms.disliked_items = embedding_term(
            ctx.disliked,
            &state.items,
            &state.disliked_contexts,
            &state.disliked_item_bias,
            &state.disliked_context_bias,
            hp.w_disliked_cooccur,
        );
    }
    if t.users {
        terms.users = embedding_term(
            ctx.users,
            &state.users,
            &state.user_contexts,
            &state.user_bias,
            &state.user_context_bias,
            hp.w_user_cooccur,
        );
    }

    let mut context_sq = 0.0;
    if t.liked_items {
        context_sq += state.liked_contexts.norm_sq();
    }
    if t.disliked_items {
        context_sq += state.disliked_contexts.norm_sq();
    }
    if t.users {
        context_sq += state.user_contexts.norm_sq();
    }
    terms.regularization = 0.5 * hp.lambda_factor * (state.users.norm_sq() + state.items.norm_sq())
        + 0.5 * hp.lambda_context * context_sq;
    Ok(terms)
}

pub fn objective(state: &ModelState, prefs: &Preferences, ctx: &Cooccurrence, hp: &Hyperparams) -> Result<f64, ModelError> {
    objective_terms(state, prefs, ctx, hp).map(|t| t.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Toggles;

    #[test]
    fn zero_state_empty_data_is_zero() {
        let prefs = Preferences::from_lists(3, &[vec![], vec![]]);
        let x = SppmiMatrix::empty(3);
        let z = SppmiMatrix::empty(2);
        let ctx = Cooccurrence::new(&x, &x, &z);
        let hp = Hyperparams { k: 2, ..Hyperparams::default() };
        let state = ModelState::zeros(2, 3, 2, Toggles::ALL);
        assert_eq!(objective(&state, &prefs, &ctx, &hp).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let prefs = Preferences::from_lists(3, &[vec![0]]);
        let x = SppmiMatrix::empty(4);
        let z = SppmiMatrix::empty(1);
        let ctx = Cooccurrence::new(&x, &x, &z);
        let hp = Hyperparams { k: 2, ..Hyperparams::default() };
        let state = ModelState::zeros(1, 3, 2, Toggles::ALL);
        assert!(matches!(
            objective(&state, &prefs, &ctx, &hp),
            Err(ModelError::DimensionMismatch(_))
        ));
    }
}
