//! Closed-form block updates. Each factor row solves its `k x k` ridge
//! normal equations with every other block held fixed; each bias is the
//! mean residual over its nonzero SPPMI row. Rows within a block are
//! independent and solved in parallel.
//!
//! The SPPMI matrices are symmetric, so the column of a context index is
//! read from its row.

use rayon::prelude::*;

use super::objective::check_shapes;
use super::{Cooccurrence, Factors, Hyperparams, ModelError, ModelState, Preferences};
use crate::cooccur::SppmiMatrix;
use crate::linalg::{add_outer, axpy, dot, solve_spd};

fn ridge_base(gram: &[f64], scale: f64, lambda: f64, k: usize) -> Vec<f64> {
    let mut a: Vec<f64> = gram.iter().map(|g| g * scale).collect();
    for d in 0..k {
        a[d * k + d] += lambda;
    }
    a
}

fn write_rows(target: &mut Factors, rows: Vec<Option<Vec<f64>>>) {
    for (r, row) in rows.into_iter().enumerate() {
        if let Some(row) = row {
            target.row_mut(r).copy_from_slice(&row);
        }
    }
}

/// α update. The all-items WMF sum is `l·βᵀβ` corrected on liked items.
pub fn update_user_factors(
    state: &mut ModelState,
    prefs: &Preferences,
    ctx: &Cooccurrence,
    hp: &Hyperparams,
) -> Result<(), ModelError> {
    check_shapes(state, prefs, ctx, hp)?;
    let k = hp.k;
    let (w0, w1) = (hp.weight_unobserved(), hp.weight_observed());
    let base = ridge_base(&state.items.gram(), w0, hp.lambda_factor, k);
    let use_users = state.toggles.users;
    let st = &*state;

    let rows = (0..prefs.n_users())
        .into_par_iter()
        .map(|u| {
            let mut a = base.clone();
            let mut b = vec![0.0; k];
            for &p in prefs.items_of(u) {
                let beta = st.items.row(p as usize);
                add_outer(&mut a, beta, w1 - w0);
                axpy(&mut b, beta, w1);
            }
            if use_users {
                let (cols, vals) = ctx.users.row(u);
                for (&j, &z) in cols.iter().zip(vals) {
                    let theta = st.user_contexts.row(j as usize);
                    add_outer(&mut a, theta, hp.w_user_cooccur);
                    axpy(
                        &mut b,
                        theta,
                        hp.w_user_cooccur * (z - st.user_bias[u] - st.user_context_bias[j as usize]),
                    );
                }
            }
            solve_spd(a, b, k)
                .map(Some)
                .ok_or(ModelError::SingularSystem { block: "user", row: u })
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_rows(&mut state.users, rows);
    Ok(())
}

/// β update, with co-liked and co-disliked rows when those terms are on.
pub fn update_item_factors(
    state: &mut ModelState,
    prefs: &Preferences,
    ctx: &Cooccurrence,
    hp: &Hyperparams,
) -> Result<(), ModelError> {
    check_shapes(state, prefs, ctx, hp)?;
    let k = hp.k;
    let (w0, w1) = (hp.weight_unobserved(), hp.weight_observed());
    let base = ridge_base(&state.users.gram(), w0, hp.lambda_factor, k);
    let t = state.toggles;
    let st = &*state;

    let rows = (0..prefs.n_items())
        .into_par_iter()
        .map(|p| {
            let mut a = base.clone();
            let mut b = vec![0.0; k];
            for &u in prefs.users_of(p) {
                let alpha = st.users.row(u as usize);
                add_outer(&mut a, alpha, w1 - w0);
                axpy(&mut b, alpha, w1);
            }
            if t.liked_items {
                let (cols, vals) = ctx.liked.row(p);
                for (&i, &x) in cols.iter().zip(vals) {
                    let gamma = st.liked_contexts.row(i as usize);
                    add_outer(&mut a, gamma, hp.w_liked_cooccur);
                    axpy(
                        &mut b,
                        gamma,
                        hp.w_liked_cooccur * (x - st.liked_item_bias[p] - st.liked_context_bias[i as usize]),
                    );
                }
            }
            if t.disliked_items {
                let (cols, vals) = ctx.disliked.row(p);
                for (&i, &y) in cols.iter().zip(vals) {
                    let delta = st.disliked_contexts.row(i as usize);
                    add_outer(&mut a, delta, hp.w_disliked_cooccur);
                    axpy(
                        &mut b,
                        delta,
                        hp.w_disliked_cooccur * (y - st.disliked_item_bias[p] - st.disliked_context_bias[i as usize]),
                    );
                }
            }
            solve_spd(a, b, k)
                .map(Some)
                .ok_or(ModelError::SingularSystem { block: "item", row: p })
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_rows(&mut state.items, rows);
    Ok(())
}

/// The context blocks, in update order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextBlock {
    /// γ
    LikedItems,
    /// δ
    DislikedItems,
    /// θ
    Users,
}

/// Solves every context row of one SPPMI term. Rows without entries get
/// the ridge solution 0 when `lambda > 0` and keep their value otherwise.
fn solve_contexts(
    mat: &SppmiMatrix,
    factors: &Factors,
    row_bias: &[f64],
    context_bias: &[f64],
    weight: f64,
    lambda: f64,
    block: &'static str,
) -> Result<Vec<Option<Vec<f64>>>, ModelError> {
    let k = factors.k();
    (0..mat.dim())
        .into_par_iter()
        .map(|i| {
            let (cols, vals) = mat.row(i);
            if cols.is_empty() {
                return Ok((lambda > 0.0).then(|| vec![0.0; k]));
            }
            let mut a = vec![0.0; k * k];
            for d in 0..k {
                a[d * k + d] = lambda;
            }
            let mut b = vec![0.0; k];
            for (&p, &v) in cols.iter().zip(vals) {
                let f = factors.row(p as usize);
                add_outer(&mut a, f, weight);
                axpy(&mut b, f, weight * (v - row_bias[p as usize] - context_bias[i]));
            }
            solve_spd(a, b, k).map(Some).ok_or(ModelError::SingularSystem { block, row: i })
        })
        .collect()
}

pub fn update_context_block(
    state: &mut ModelState,
    prefs: &Preferences,
    ctx: &Cooccurrence,
    hp: &Hyperparams,
    block: ContextBlock,
) -> Result<(), ModelError> {
    check_shapes(state, prefs, ctx, hp)?;
    let t = state.toggles;
    let lambda = hp.lambda_context;
    match block {
        ContextBlock::LikedItems if t.liked_items => {
            let rows = solve_contexts(
                ctx.liked,
                &state.items,
                &state.liked_item_bias,
                &state.liked_context_bias,
                hp.w_liked_cooccur,
                lambda,
                "co-liked context",
            )?;
            write_rows(&mut state.liked_contexts, rows);
        }
        ContextBlock::DislikedItems if t.disliked_items => {
            let rows = solve_contexts(
                ctx.disliked,
                &state.items,
                &state.disliked_item_bias,
                &state.disliked_context_bias,
                hp.w_disliked_cooccur,
                lambda,
                "co-disliked context",
            )?;
            write_rows(&mut state.disliked_contexts, rows);
        }
        ContextBlock::Users if t.users => {
            let rows = solve_contexts(
                ctx.users,
                &state.users,
                &state.user_bias,
                &state.user_context_bias,
                hp.w_user_cooccur,
                lambda,
                "user context",
            )?;
            write_rows(&mut state.user_contexts, rows);
        }
        _ => {}
    }
    Ok(())
}

/// γ, δ and θ in that order.
pub fn update_context_factors(
    state: &mut ModelState,
    prefs: &Preferences,
    ctx: &Cooccurrence,
    hp: &Hyperparams,
) -> Result<(), ModelError> {
    for block in [ContextBlock::LikedItems, ContextBlock::DislikedItems, ContextBlock::Users] {
        update_context_block(state, prefs, ctx, hp, block)?;
    }
    Ok(())
}

/// The bias vectors, in update order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasBlock {
    /// b
    LikedItem,
    /// c
    LikedContext,
    /// d
    DislikedItem,
    /// e
    DislikedContext,
    /// f
    User,
    /// g
    UserContext,
}

impl BiasBlock {
    pub const ORDER: [BiasBlock; 6] = [
        BiasBlock::LikedItem,
        BiasBlock::LikedContext,
        BiasBlock::DislikedItem,
        BiasBlock::DislikedContext,
        BiasBlock::User,
        BiasBlock::UserContext,
    ];
}

/// `row_bias[p] = mean_i (v_pi − f_p·c_i − context_bias[i])`
fn mean_row_residual(mat: &SppmiMatrix, factors: &Factors, contexts: &Factors, context_bias: &[f64], row_bias: &mut [f64]) {
    for (p, bias) in row_bias.iter_mut().enumerate() {
        let (cols, vals) = mat.row(p);
        if cols.is_empty() {
            continue;
        }
        let f = factors.row(p);
        let sum: f64 = cols
            .iter()
            .zip(vals)
            .map(|(&i, &v)| v - dot(f, contexts.row(i as usize)) - context_bias[i as usize])
            .sum();
        *bias = sum / cols.len() as f64;
    }
}

/// `context_bias[i] = mean_p (v_pi − f_p·c_i − row_bias[p])`
fn mean_context_residual(
    mat: &SppmiMatrix,
    factors: &Factors,
    contexts: &Factors,
    row_bias: &[f64],
    context_bias: &mut [f64],
) {
    for (i, bias) in context_bias.iter_mut().enumerate() {
        let (cols, vals) = mat.row(i);
        if cols.is_empty() {
            continue;
        }
        let c = contexts.row(i);
        let sum: f64 = cols
            .iter()
            .zip(vals)
            .map(|(&p, &v)| v - dot(factors.row(p as usize), c) - row_bias[p as usize])
            .sum();
        *bias = sum / cols.len() as f64;
    }
}

pub fn update_bias_block(state: &mut ModelState, ctx: &Cooccurrence, block: BiasBlock) {
    let t = state.toggles;
    let s = state;
    match block {
        BiasBlock::LikedItem if t.liked_items => mean_row_residual(
            ctx.liked,
            &s.items,
            &s.liked_contexts,
            &s.liked_context_bias,
            &mut s.liked_item_bias,
        ),
        BiasBlock::LikedContext if t.liked_items => mean_context_residual(
            ctx.liked,
            &s.items,
            &s.liked_contexts,
            &s.liked_item_bias,
            &mut s.liked_context_bias,
        ),
        BiasBlock::DislikedItem if t.disliked_items => mean_row_residual(
            ctx.disliked,
            &s.items,
            &s.disliked_contexts,
            &s.disliked_context_bias,
            &mut s.disliked_item_bias,
        ),
        BiasBlock::DislikedContext if t.disliked_items => mean_context_residual(
            ctx.disliked,
            &s.items,
            &s.disliked_contexts,
            &s.disliked_item_bias,
            &mut s.disliked_context_bias,
        ),
        BiasBlock::User if t.users => mean_row_residual(
            ctx.users,
            &s.users,
            &s.user_contexts,
            &s.user_context_bias,
            &mut s.user_bias,
        ),
        BiasBlock::UserContext if t.users => mean_context_residual(
            ctx.users,
            &s.users,
            &s.user_contexts,
            &s.user_bias,
            &mut s.user_context_bias,
        ),
        _ => {}
    }
}

/// b, c, d, e, f, g in that order, each using the latest values of the others.
pub fn update_biases(state: &mut ModelState, ctx: &Cooccurrence) {
    for block in BiasBlock::ORDER {
        update_bias_block(state, ctx, block);
    }
}
