use rayon::prelude::*;

use super::bounds::{project_psd_floor, EigBounds};
use super::objective::{dual_value, primal_objective};
use super::split::split_with;
use super::{GapRecord, SolverState};
use crate::error::{CsslError, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::projection::{project_onto_c, ProjectionSpec};
use crate::types::{CovarianceSet, Hyperparams, PrecisionDecomposition};

/// Positive root of `x² − σx − c/4 = 0`, i.e. `(σ + √(σ² + c))/2` with `c = 4/(βt)`.
pub(crate) fn w_eigenvalue(sigma: f64, c: f64) -> f64 {
    let root = (sigma * sigma + c).sqrt();
    if sigma >= 0.0 {
        0.5 * (sigma + root)
    } else {
        // avoids cancellation for large negative σ
        0.5 * c / (root - sigma)
    }
}

/// Closed-form minimizer of `−t log det W + (βt²/2)‖W − M‖²`.
pub fn w_subproblem(m: &Matrix, beta: f64, t: f64) -> Matrix {
    let eig = linalg::sym_eigen(m);
    let c = 4.0 / (beta * t);
    let vals = Vector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&s| w_eigenvalue(s, c)));
    linalg::recompose(&eig.eigenvectors, &vals)
}

fn w_target(y: &Matrix, z: &Matrix, s: &Matrix, beta: f64, t: f64) -> Matrix {
    let mut m = y / t - z / (beta * t) + s;
    linalg::symmetrize(&mut m);
    m
}

pub fn update_w(state: &mut SolverState, cov: &CovarianceSet) -> Result<()> {
    if let Some(i) = cov.weights().iter().position(|&t| !(t > 0.0)) {
        return Err(CsslError::Validation(format!("dataset {i} has zero weight; drop it before solving")));
    }
    let beta = state.beta;
    state.w = (0..cov.len())
        .map(|i| {
            let t = cov.weights()[i];
            w_subproblem(&w_target(&state.y[i], &state.z[i], &cov.matrices()[i], beta, t), beta, t)
        })
        .collect();
    Ok(())
}

/// Projects every position's N-vector of `y0` onto the dual constraint set and mirrors
/// the upper triangle. Unpenalized diagonal positions are pinned to zero.
pub fn project_dual_set(y0: &[Matrix], hp: &Hyperparams, parallel: bool) -> Vec<Matrix> {
    let n = y0.len();
    let d = y0[0].nrows();
    let spec = ProjectionSpec { rho: hp.rho, gamma: hp.gamma, q: hp.q() };
    let column = |c: usize| -> Vec<Vec<f64>> {
        let mut buf = vec![0.0; n];
        (0..=c)
            .map(|r| {
                if r == c && !hp.penalize_diagonal {
                    return vec![0.0; n];
                }
                for (i, m) in y0.iter().enumerate() {
                    buf[i] = m[(r, c)];
                }
                project_onto_c(&buf, &spec)
            })
            .collect()
    };
    let cols: Vec<Vec<Vec<f64>>> = if parallel {
        (0..d).into_par_iter().map(column).collect()
    } else {
        (0..d).map(column).collect()
    };
    let mut out = vec![Matrix::zeros(d, d); n];
    for (c, col) in cols.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            for (i, m) in out.iter_mut().enumerate() {
                m[(r, c)] = v[i];
                m[(c, r)] = v[i];
            }
        }
    }
    out
}

pub fn update_y(state: &mut SolverState, cov: &CovarianceSet, hp: &Hyperparams, parallel: bool) {
    let beta = state.beta;
    let y0: Vec<Matrix> = (0..cov.len())
        .map(|i| {
            let t = cov.weights()[i];
            (&state.w[i] - &cov.matrices()[i]) * t + &state.z[i] / beta
        })
        .collect();
    state.y = project_dual_set(&y0, hp, parallel);
}

fn residual(state: &SolverState, cov: &CovarianceSet, i: usize) -> Matrix {
    let t = cov.weights()[i];
    (&state.w[i] - &cov.matrices()[i]) * t - &state.y[i]
}

pub fn update_z(state: &mut SolverState, cov: &CovarianceSet) {
    let beta = state.beta;
    for i in 0..cov.len() {
        let r = residual(state, cov, i);
        state.z[i] += r * beta;
    }
}

/// `‖TW − Y − TΣ‖` and `β‖T(Y − Y_prev)‖`.
pub fn primal_dual_gaps(state: &SolverState, prev_y: &[Matrix], cov: &CovarianceSet) -> (f64, f64) {
    let mut p = 0.0;
    let mut dl = 0.0;
    for i in 0..cov.len() {
        p += residual(state, cov, i).norm_squared();
        dl += ((&state.y[i] - &prev_y[i]) * cov.weights()[i]).norm_squared();
    }
    (p.sqrt(), state.beta * dl.sqrt())
}

pub fn adapt_beta(primal_gap: f64, dual_gap: f64, beta: f64, bounds: (f64, f64)) -> f64 {
    let next = if primal_gap >= 10.0 * dual_gap && primal_gap > 0.0 {
        2.0 * beta
    } else if dual_gap >= 10.0 * primal_gap && dual_gap > 0.0 {
        0.5 * beta
    } else {
        beta
    };
    next.clamp(bounds.0, bounds.1)
}

/// Entrywise common/individual split of a list of precisions.
pub fn split_precisions(lambdas: &[Matrix], hp: &Hyperparams) -> PrecisionDecomposition {
    let n = lambdas.len();
    let d = lambdas[0].nrows();
    let mut theta = Matrix::zeros(d, d);
    let mut omegas = vec![Matrix::zeros(d, d); n];
    let mut buf = vec![0.0; n];
    for c in 0..d {
        for r in 0..=c {
            for (i, l) in lambdas.iter().enumerate() {
                buf[i] = l[(r, c)];
            }
            let (t, w) = split_with(&buf, hp.rho, hp.gamma, hp.p);
            theta[(r, c)] = t;
            theta[(c, r)] = t;
            for (i, o) in omegas.iter_mut().enumerate() {
                o[(r, c)] = w[i];
                o[(c, r)] = w[i];
            }
        }
    }
    PrecisionDecomposition { theta, omegas }
}

/// Primal candidate built from the dual multipliers: floor the spectrum, then split.
pub fn primal_candidate(z: &[Matrix], hp: &Hyperparams, bounds: &EigBounds) -> PrecisionDecomposition {
    let floored: Vec<Matrix> = z.iter().zip(&bounds.lambda_min).map(|(m, &f)| project_psd_floor(m, f)).collect();
    split_precisions(&floored, hp)
}

/// Dual point `W̃ = S + Ỹ/t` with `Ỹ` the projection of `T(W − Σ)`.
pub fn feasible_dual_point(state: &SolverState, cov: &CovarianceSet, hp: &Hyperparams, parallel: bool) -> Vec<Matrix> {
    let y0: Vec<Matrix> = (0..cov.len())
        .map(|i| (&state.w[i] - &cov.matrices()[i]) * cov.weights()[i])
        .collect();
    let y = project_dual_set(&y0, hp, parallel);
    (0..cov.len())
        .map(|i| {
            let mut m = &cov.matrices()[i] + &y[i] / cov.weights()[i];
            linalg::symmetrize(&mut m);
            m
        })
        .collect()
}

/// `f(W̃) − max_k g(Θ̃_k, Ω̃_k)`; also records the current and best primal candidates.
pub fn duality_gap(
    state: &mut SolverState,
    cov: &CovarianceSet,
    hp: &Hyperparams,
    bounds: &EigBounds,
    parallel: bool,
) -> f64 {
    let w_tilde = feasible_dual_point(state, cov, hp, parallel);
    let f = dual_value(&w_tilde, cov).unwrap_or(f64::INFINITY);
    let candidate = primal_candidate(&state.z, hp, bounds);
    if let Ok(g) = primal_objective(&candidate, cov, hp) {
        if g > state.best_primal {
            state.best_primal = g;
            state.best = Some(candidate.clone());
        }
    }
    state.current = Some(candidate);
    f - state.best_primal
}

pub(crate) fn record(state: &mut SolverState, duality_gap: f64, primal_gap: f64, dual_gap: f64) {
    state.gap_history.push(GapRecord { duality_gap, primal_gap, dual_gap });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::NormOrder;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let mut m = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        linalg::symmetrize(&mut m);
        m
    }

    fn random_state(cov: &CovarianceSet, rng: &mut ChaCha8Rng) -> SolverState {
        let d = cov.dim();
        let mut s = SolverState::new(cov, 1.3);
        for i in 0..cov.len() {
            s.y[i] = random_sym(d, rng) * 0.2;
            s.z[i] = random_sym(d, rng) + Matrix::identity(d, d) * 3.0;
            s.w[i] = random_sym(d, rng) * 0.3 + Matrix::identity(d, d) * 2.0;
        }
        s
    }

    fn random_cov(d: usize, n: usize, rng: &mut ChaCha8Rng) -> CovarianceSet {
        let mats = (0..n)
            .map(|_| {
                let a = Matrix::from_fn(d, d + 2, |_, _| rng.random_range(-1.0..1.0));
                let mut s = &a * a.transpose() / (d + 2) as f64;
                linalg::symmetrize(&mut s);
                s
            })
            .collect();
        CovarianceSet::uniform(mats).unwrap()
    }

    #[test]
    fn zero_target_gives_identity() {
        let w = w_subproblem(&Matrix::zeros(3, 3), 1.0, 1.0);
        assert!((w - Matrix::identity(3, 3)).amax() < 1e-15);
    }

    #[test]
    fn scalar_perfect_square() {
        assert_eq!(w_eigenvalue(1.5, 4.0), 2.0);
        assert!((w_eigenvalue(-1e8, 4.0) - 1e-8).abs() < 1e-20);
    }

    #[test]
    fn w_stationarity_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_sym(3, &mut rng);
        let (beta, t) = (2.0, 0.5);
        let w = w_subproblem(&m, beta, t);
        let inv = linalg::inverse_pd(&w).unwrap();
        let res = &w - &m - inv / (beta * t);
        assert!(res.amax() <= 1e-8);
    }

    #[test]
    fn zero_weight_is_rejected() {
        let cov = CovarianceSet::new(vec![Matrix::identity(2, 2); 2], vec![1.0, 0.0], None).unwrap();
        let mut s = SolverState::new(&cov, 1.0);
        assert!(update_w(&mut s, &cov).is_err());
    }

    #[test]
    fn y_update_is_feasible_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for p in [NormOrder::One, NormOrder::Two, NormOrder::Inf] {
            let cov = random_cov(4, 3, &mut rng);
            let hp = Hyperparams::new(0.05, 0.04, p).unwrap();
            let mut s = random_state(&cov, &mut rng);
            update_y(&mut s, &cov, &hp, false);
            let spec = ProjectionSpec { rho: hp.rho, gamma: hp.gamma, q: hp.q() };
            for r in 0..4 {
                for c in 0..4 {
                    let v: Vec<f64> = s.y.iter().map(|m| m[(r, c)]).collect();
                    assert!(spec.contains(&v, 1e-9), "{p:?} {v:?} sum {} norm {}", v.iter().sum::<f64>(), hp.q().norm(&v));
                    for m in &s.y {
                        assert_eq!(m[(r, c)], m[(c, r)]);
                    }
                }
            }
        }
    }

    #[test]
    fn interior_y_is_unchanged() {
        let cov = CovarianceSet::uniform(vec![Matrix::identity(2, 2); 2]).unwrap();
        let hp = Hyperparams::new(10.0, 10.0, NormOrder::Two).unwrap();
        let mut s = SolverState::new(&cov, 1.0);
        s.w = vec![Matrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 1.1]); 2];
        s.z = vec![Matrix::zeros(2, 2); 2];
        update_y(&mut s, &cov, &hp, false);
        let expect = (&s.w[0] - Matrix::identity(2, 2)) * 0.5;
        assert_eq!(s.y[0], expect);
    }

    #[test]
    fn parallel_projection_is_bitwise_serial() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cov = random_cov(9, 4, &mut rng);
        let hp = Hyperparams::new(0.03, 0.05, NormOrder::One).unwrap();
        let s = random_state(&cov, &mut rng);
        let mut a = s.clone();
        let mut b = s;
        update_y(&mut a, &cov, &hp, false);
        update_y(&mut b, &cov, &hp, true);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn z_update_adds_the_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cov = random_cov(3, 2, &mut rng);
        let mut s = random_state(&cov, &mut rng);
        let before = s.z.clone();
        let expect: Vec<Matrix> = (0..2).map(|i| residual(&s, &cov, i) * s.beta).collect();
        update_z(&mut s, &cov);
        for i in 0..2 {
            assert!((&s.z[i] - &before[i] - &expect[i]).amax() <= 1e-15);
        }
        s.beta = 0.0;
        let frozen = s.z.clone();
        update_z(&mut s, &cov);
        assert_eq!(s.z, frozen);
    }

    #[test]
    fn consensus_z_is_unchanged() {
        let cov = CovarianceSet::uniform(vec![Matrix::identity(2, 2); 2]).unwrap();
        let mut s = SolverState::new(&cov, 1.0);
        s.w = vec![Matrix::identity(2, 2) * 1.5; 2];
        s.y = vec![Matrix::identity(2, 2) * 0.25; 2];
        let z = s.z.clone();
        update_z(&mut s, &cov);
        assert_eq!(s.z, z);
        let (p, d) = primal_dual_gaps(&s, &s.y.clone(), &cov);
        assert_eq!((p, d), (0.0, 0.0));
    }

    #[test]
    fn gaps_match_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cov = random_cov(3, 3, &mut rng);
        let s = random_state(&cov, &mut rng);
        let prev: Vec<Matrix> = (0..3).map(|_| random_sym(3, &mut rng)).collect();
        let (p, dg) = primal_dual_gaps(&s, &prev, &cov);
        let (mut pp, mut dd) = (0.0, 0.0);
        for i in 0..3 {
            let t = cov.weights()[i];
            for r in 0..3 {
                for c in 0..3 {
                    let e = t * s.w[i][(r, c)] - s.y[i][(r, c)] - t * cov.matrices()[i][(r, c)];
                    pp += e * e;
                    let f = t * (s.y[i][(r, c)] - prev[i][(r, c)]);
                    dd += f * f;
                }
            }
        }
        assert!((p - pp.sqrt()).abs() <= 1e-12);
        assert!((dg - s.beta * dd.sqrt()).abs() <= 1e-12);
        let mut z = s.clone();
        z.beta = 0.0;
        assert_eq!(primal_dual_gaps(&z, &prev, &cov).1, 0.0);
    }

    #[test]
    fn beta_rule() {
        assert_eq!(adapt_beta(1.0, 0.05, 1.0, (1e-4, 1e4)), 2.0);
        assert_eq!(adapt_beta(0.05, 1.0, 1.0, (1e-4, 1e4)), 0.5);
        assert_eq!(adapt_beta(1.0, 0.5, 1.0, (1e-4, 1e4)), 1.0);
        assert_eq!(adapt_beta(1.0, 0.0, 1e4, (1e-4, 1e4)), 1e4);
    }

    #[test]
    fn first_gap_is_finite_and_nonnegative() {
        let d = 3;
        let cov = CovarianceSet::uniform(vec![Matrix::identity(d, d); 2]).unwrap();
        let hp = Hyperparams::new(0.1, 0.2, NormOrder::Two).unwrap();
        let bounds = super::super::bounds::eigen_bounds(&cov, &hp);
        let mut s = SolverState::new(&cov, 1.0);
        update_w(&mut s, &cov).unwrap();
        update_y(&mut s, &cov, &hp, false);
        update_z(&mut s, &cov);
        let g = duality_gap(&mut s, &cov, &hp, &bounds, false);
        assert!(g.is_finite() && g >= -1e-9, "{g}");
    }
}
