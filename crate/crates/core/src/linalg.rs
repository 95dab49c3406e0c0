use nalgebra::{DMatrix, DVector};

/// Solves `A x = b` for a symmetric positive definite `k x k` matrix given
/// row-major. Returns `None` when the Cholesky factorization fails.
pub(crate) fn solve_spd(a: Vec<f64>, b: Vec<f64>, k: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), k * k);
    debug_assert_eq!(b.len(), k);
    // symmetric, so the row-major buffer reads the same column-major
    let chol = DMatrix::from_vec(k, k, a).cholesky()?;
    let x = chol.solve(&DVector::from_vec(b));
    x.iter().all(|v| v.is_finite()).then(|| x.as_slice().to_vec())
}

/// `acc += scale * v vᵀ`, row-major `k x k`.
#[inline]
pub(crate) fn add_outer(acc: &mut [f64], v: &[f64], scale: f64) {
    let k = v.len();
    for a in 0..k {
        let sa = scale * v[a];
        let row = &mut acc[a * k..(a + 1) * k];
        for (r, vb) in row.iter_mut().zip(v) {
            *r += sa * vb;
        }
    }
}

#[inline]
pub(crate) fn axpy(acc: &mut [f64], v: &[f64], scale: f64) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += scale * b;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
