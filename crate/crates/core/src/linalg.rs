//! Small dense helpers shared by the solver, the generator and the metrics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type Mask = DMatrix<bool>;

/// Largest entrywise gap between `m` and its transpose.
pub fn max_asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for k in (j + 1)..n {
            worst = worst.max((m[(j, k)] - m[(k, j)]).abs());
        }
    }
    worst
}

/// Replaces `m` by `(m + mᵀ) / 2` in place.
pub fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for j in 0..n {
        for k in (j + 1)..n {
            let v = 0.5 * (m[(j, k)] + m[(k, j)]);
            m[(j, k)] = v;
            m[(k, j)] = v;
        }
    }
}

/// Eigendecomposition of a symmetric matrix. The input is symmetrized first.
pub fn sym_eigen(m: &Matrix) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s)
}

/// Rebuilds `P diag(values) Pᵀ` and symmetrizes the result.
pub fn recompose(vectors: &Matrix, values: &Vector) -> Matrix {
    let mut scaled = vectors.clone();
    for (c, &v) in values.iter().enumerate() {
        scaled.column_mut(c).scale_mut(v);
    }
    let mut out = scaled * vectors.transpose();
    symmetrize(&mut out);
    out
}

/// `log det m` for a positive definite matrix, `None` when Cholesky fails.
pub fn log_det_pd(m: &Matrix) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for j in 0..m.nrows() {
        let d = l[(j, j)];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

pub fn is_pd(m: &Matrix) -> bool {
    log_det_pd(m).is_some()
}

pub fn min_eigenvalue(m: &Matrix) -> f64 {
    sym_eigen(m).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn spectral_norm_sym(m: &Matrix) -> f64 {
    sym_eigen(m).eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// Inverse of a positive definite matrix through Cholesky.
pub fn inverse_pd(m: &Matrix) -> Option<Matrix> {
    let chol = m.clone().cholesky()?;
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Some(inv)
}

/// Sign with `sgn(0) = 0`.
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Frobenius norm of a list of equally-shaped matrices, viewed as one vector.
pub fn stacked_norm<'a>(blocks: impl IntoIterator<Item = &'a Matrix>) -> f64 {
    blocks
        .into_iter()
        .map(|b| b.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}
