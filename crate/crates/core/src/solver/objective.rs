use crate::error::{validation, CsslError, Result};
use crate::linalg::{self, Matrix};
use crate::types::{log_likelihood, CovarianceSet, Hyperparams, PrecisionDecomposition};

const DUAL_FEAS_TOL: f64 = 1e-9;

/// `ρ‖Θ‖₁ + γ‖Ω‖_{1,p}`, with the diagonal left out when it is not penalized.
pub fn penalty(decomp: &PrecisionDecomposition, hp: &Hyperparams) -> f64 {
    let d = decomp.dim();
    let n = decomp.len();
    let mut theta_part = 0.0;
    let mut omega_part = 0.0;
    let mut buf = vec![0.0; n];
    for c in 0..d {
        for r in 0..d {
            if r == c && !hp.penalize_diagonal {
                continue;
            }
            theta_part += decomp.theta[(r, c)].abs();
            for (i, o) in decomp.omegas.iter().enumerate() {
                buf[i] = o[(r, c)];
            }
            omega_part += hp.p.norm(&buf);
        }
    }
    let omega_term = if omega_part == 0.0 { 0.0 } else { hp.gamma * omega_part };
    hp.rho * theta_part + omega_term
}

/// `Σ t_i ℓ(Θ + Ω_i; S_i) − ρ‖Θ‖₁ − γ‖Ω‖_{1,p}`.
pub fn primal_objective(decomp: &PrecisionDecomposition, cov: &CovarianceSet, hp: &Hyperparams) -> Result<f64> {
    if decomp.len() != cov.len() || decomp.dim() != cov.dim() {
        return validation("decomposition and covariance set shapes differ");
    }
    let mut fit = 0.0;
    for (i, (s, &t)) in cov.matrices().iter().zip(cov.weights()).enumerate() {
        if t == 0.0 {
            continue;
        }
        let lam = decomp.lambda(i);
        fit += t * log_likelihood(&lam, s).map_err(|_| CsslError::Domain(format!("precision {i} is not positive definite")))?;
    }
    Ok(fit - penalty(decomp, hp))
}

/// Largest violation of the dual constraints by `W`.
pub fn dual_violation(w: &[Matrix], cov: &CovarianceSet, hp: &Hyperparams) -> f64 {
    let d = cov.dim();
    let n = cov.len();
    let q = hp.q();
    let mut worst = 0.0_f64;
    let mut buf = vec![0.0; n];
    for c in 0..d {
        for r in 0..=c {
            for (i, (wi, (s, &t))) in w.iter().zip(cov.matrices().iter().zip(cov.weights())).enumerate() {
                buf[i] = t * (wi[(r, c)] - s[(r, c)]);
            }
            if r == c && !hp.penalize_diagonal {
                worst = worst.max(buf.iter().fold(0.0_f64, |a, v| a.max(v.abs())));
                continue;
            }
            let total: f64 = buf.iter().sum();
            worst = worst.max(total.abs() - hp.rho);
            if hp.gamma.is_finite() {
                worst = worst.max(q.norm(&buf) - hp.gamma);
            }
        }
    }
    worst.max(0.0)
}

/// `−Σ t_i log det W_i − d` for a dual-feasible `W`.
pub fn dual_objective(w: &[Matrix], cov: &CovarianceSet, hp: &Hyperparams) -> Result<f64> {
    if w.len() != cov.len() {
        return validation("one W matrix per dataset is required");
    }
    let violation = dual_violation(w, cov, hp);
    if violation > DUAL_FEAS_TOL {
        return Err(CsslError::Infeasible(format!("dual constraints violated by {violation:e}")));
    }
    dual_value(w, cov).ok_or_else(|| CsslError::Domain("W is not positive definite".into()))
}

pub(crate) fn dual_value(w: &[Matrix], cov: &CovarianceSet) -> Option<f64> {
    let mut acc = 0.0;
    for (wi, &t) in w.iter().zip(cov.weights()) {
        acc -= t * linalg::log_det_pd(wi)?;
    }
    Some(acc - cov.dim() as f64)
}
