use crate::types::{Hyperparams, NormOrder};

/// Relative spread below which the entries of one position count as equal.
const EQUAL_REL_TOL: f64 = 1e-12;

fn cost(lambda: &[f64], theta: f64, rho: f64, gamma: f64, p: NormOrder) -> f64 {
    let dev: Vec<f64> = lambda.iter().map(|v| v - theta).collect();
    rho * theta.abs() + gamma * p.norm(&dev)
}

/// Splits one position's entries `λ` into a common value `θ` and residuals `ω = λ − θ1`
/// by minimizing `ρ|θ| + γ‖λ − θ1‖_p`.
pub fn split_common_individual(lambda: &[f64], hp: &Hyperparams) -> (f64, Vec<f64>) {
    split_with(lambda, hp.rho, hp.gamma, hp.p)
}

pub(crate) fn split_with(lambda: &[f64], rho: f64, gamma: f64, p: NormOrder) -> (f64, Vec<f64>) {
    let n = lambda.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let lo = lambda.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = lambda.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = lo.abs().max(hi.abs());
    let equal = hi - lo <= EQUAL_REL_TOL * scale;
    if !gamma.is_finite() || (equal && rho < p.ones_norm(n) * gamma) {
        let theta = if hi == lo { lo } else { lambda.iter().sum::<f64>() / n as f64 };
        let omega = if equal { vec![0.0; n] } else { lambda.iter().map(|v| v - theta).collect() };
        return (theta, omega);
    }
    if rho >= p.ones_norm(n) * gamma {
        return (0.0, lambda.to_vec());
    }
    let mut candidates = vec![0.0];
    match p {
        NormOrder::One => candidates.extend_from_slice(lambda),
        NormOrder::Inf => candidates.push(0.5 * (lo + hi)),
        NormOrder::Two => {
            let nf = n as f64;
            let mean = lambda.iter().sum::<f64>() / nf;
            let spread = lambda.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt();
            let u = rho * spread / (nf * (nf * gamma * gamma - rho * rho)).sqrt();
            if mean - u > 0.0 {
                candidates.push(mean - u);
            }
            if mean + u < 0.0 {
                candidates.push(mean + u);
            }
        }
    }
    let mut best = (f64::INFINITY, 0.0_f64);
    for &c in &candidates {
        let v = cost(lambda, c, rho, gamma, p);
        if v < best.0 || (v == best.0 && c.abs() < best.1.abs()) {
            best = (v, c);
        }
    }
    let theta = best.1;
    (theta, lambda.iter().map(|v| v - theta).collect())
}
