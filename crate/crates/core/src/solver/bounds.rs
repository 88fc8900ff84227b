use serde::{Deserialize, Serialize};

use crate::linalg::{self, Matrix, Vector};
use crate::types::{CovarianceSet, Hyperparams};

/// Floor used when the eigenvalue bounds do not apply.
pub const DEFAULT_FLOOR: f64 = 1e-8;

/// Eigenvalue range guaranteed for every optimal `Λ_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigBounds {
    pub lambda_min: Vec<f64>,
    /// `f64::INFINITY` when no upper bound is known.
    pub lambda_max: f64,
}

/// `λ_i^min = t_i / (t_i‖S_i‖ + dγ)` and `λ^max = N^{1/p} d² / ρ`, valid for
/// `0 < ρ < N^{1/p}γ < ∞`. Elsewhere the floor is `1e-8` with no upper bound.
pub fn eigen_bounds(cov: &CovarianceSet, hp: &Hyperparams) -> EigBounds {
    let n = cov.len();
    let d = cov.dim() as f64;
    if !hp.in_mixed_regime(n) {
        return EigBounds { lambda_min: vec![DEFAULT_FLOOR; n], lambda_max: f64::INFINITY };
    }
    let lambda_min = cov
        .matrices()
        .iter()
        .zip(cov.weights())
        .map(|(s, &t)| {
            let v = t / (t * linalg::spectral_norm_sym(s) + d * hp.gamma);
            if v > 0.0 { v } else { DEFAULT_FLOOR }
        })
        .collect();
    let lambda_max = if hp.penalize_diagonal {
        hp.p.ones_norm(n) * d * d / hp.rho
    } else {
        f64::INFINITY
    };
    EigBounds { lambda_min, lambda_max }
}

/// Nearest matrix (in Frobenius norm) whose eigenvalues are all at least `floor`.
/// Returns `m` itself when it already satisfies the floor.
pub fn project_psd_floor(m: &Matrix, floor: f64) -> Matrix {
    let mut shifted = m.clone();
    for j in 0..m.nrows() {
        shifted[(j, j)] -= floor;
    }
    if linalg::is_pd(&shifted) {
        return m.clone();
    }
    let eig = linalg::sym_eigen(m);
    let clamped = Vector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&v| v.max(floor)));
    linalg::recompose(&eig.eigenvectors, &clamped)
}
