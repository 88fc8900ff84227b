//! Euclidean projection of an N-vector onto
//! `C = {u : |1ᵀu| ≤ ρ, ‖u‖_q ≤ γ}` and onto the pieces of its boundary.
//!
//! `∂C₁` is the sum hyperplane `|1ᵀu| = ρ`, `∂C₂` the norm sphere `‖u‖_q = γ`,
//! `∂C₃` their intersection.

use std::cmp::Ordering;

use crate::error::{validation, CsslError, Result};
use crate::types::NormOrder;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionSpec {
    pub rho: f64,
    /// May be `f64::INFINITY`, which drops the norm constraint.
    pub gamma: f64,
    pub q: NormOrder,
}

impl ProjectionSpec {
    pub fn new(rho: f64, gamma: f64, q: NormOrder) -> Result<Self> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return validation(format!("rho must be finite and >= 0, got {rho}"));
        }
        if !(gamma > 0.0) {
            return validation(format!("gamma must be > 0, got {gamma}"));
        }
        Ok(ProjectionSpec { rho, gamma, q })
    }

    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        y.iter().sum::<f64>().abs() <= self.rho + tol && self.q.norm(y) <= self.gamma + tol
    }
}

fn sum(v: &[f64]) -> f64 {
    v.iter().sum()
}

fn sign_or_plus(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn desc(a: &f64, b: &f64) -> Ordering {
    b.partial_cmp(a).unwrap_or(Ordering::Equal)
}

/// Closest point on `|1ᵀy| = ρ`, choosing the side that matches the sign of `1ᵀy0`.
pub fn project_sum_hyperplane(y0: &[f64], rho: f64) -> Vec<f64> {
    let n = y0.len() as f64;
    let s = sum(y0);
    let target = if s < 0.0 { -rho } else { rho };
    let shift = (s - target) / n;
    y0.iter().map(|v| v - shift).collect()
}

/// Minimizer of `½‖z − a‖²` subject to `z ≥ 0`, `1ᵀz = target` (`target ≥ 0`).
/// `a` may hold negative entries.
fn simplex_knapsack(a: &[f64], target: f64) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    if target <= 0.0 {
        return vec![0.0; a.len()];
    }
    let mut sorted = a.to_vec();
    sorted.sort_by(desc);
    // I₀ is the set of the k largest entries; grow it while the next entry stays positive at ν.
    let mut prefix = 0.0;
    let mut nu = sorted[0] - target;
    for (k, &v) in sorted.iter().enumerate() {
        prefix += v;
        let cand = (prefix - target) / (k + 1) as f64;
        if v > cand {
            nu = cand;
        } else {
            break;
        }
    }
    a.iter().map(|v| (v - nu).max(0.0)).collect()
}

/// Continuous quadratic knapsack over the simplex `{z ≥ 0, 1ᵀz = γ}`.
pub fn solve_cq_knapsack_simplex(a: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return validation(format!("knapsack budget must be positive and finite, got {gamma}"));
    }
    if a.is_empty() {
        return validation("knapsack needs at least one variable");
    }
    Ok(simplex_knapsack(a, gamma))
}

/// Continuous quadratic knapsack over the box: minimizes `½‖y − y0‖²` with
/// `1ᵀy = ζ` and `−γ ≤ y ≤ γ`.
pub fn solve_cq_knapsack_box(y0: &[f64], zeta: f64, gamma: f64) -> Result<Vec<f64>> {
    let n = y0.len();
    if n == 0 {
        return validation("knapsack needs at least one variable");
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return validation(format!("box half-width must be positive and finite, got {gamma}"));
    }
    let cap = n as f64 * gamma;
    if zeta.abs() > cap * (1.0 + 1e-12) {
        return Err(CsslError::Infeasible(format!("|zeta| = {} exceeds N*gamma = {cap}", zeta.abs())));
    }
    let zeta = zeta.clamp(-cap, cap);

    // f(ν) = Σ clamp(y0_i − ν, −γ, γ) falls from Nγ to −Nγ; each y0_i − γ starts a
    // slope −1 segment and each y0_i + γ ends one.
    let mut events: Vec<(f64, i32)> = Vec::with_capacity(2 * n);
    for &v in y0 {
        events.push((v - gamma, 1));
        events.push((v + gamma, -1));
    }
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(b.1.cmp(&a.1)));

    let mut f = cap;
    let mut active = 0i32;
    let mut prev = events[0].0;
    let mut nu0 = events[events.len() - 1].0;
    let mut probe = nu0;
    for &(b, delta) in &events {
        f -= active as f64 * (b - prev);
        if f <= zeta {
            nu0 = b;
            // membership of I₁, I₂, I₃ is constant on (prev, b); testing at the
            // midpoint keeps rounding at the breakpoints out of the classification
            probe = 0.5 * (prev + b);
            break;
        }
        prev = b;
        active += delta;
    }

    let (mut s2, mut n1, mut n2, mut n3) = (0.0, 0usize, 0usize, 0usize);
    for &v in y0 {
        let r = v - probe;
        if r >= gamma {
            n1 += 1;
        } else if r > -gamma {
            n2 += 1;
            s2 += v;
        } else {
            n3 += 1;
        }
    }
    let nu = if n2 == 0 {
        nu0
    } else {
        (s2 + gamma * (n1 as f64 - n3 as f64) - zeta) / n2 as f64
    };
    Ok(y0.iter().map(|v| (v - nu).clamp(-gamma, gamma)).collect())
}

/// Closest point on the sphere `‖y‖_q = γ` (for `q = ∞`, the box projection).
pub fn project_lq_ball_boundary(y0: &[f64], gamma: f64, q: NormOrder) -> Result<Vec<f64>> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return validation(format!("gamma must be positive and finite, got {gamma}"));
    }
    match q {
        NormOrder::One => {
            let mags: Vec<f64> = y0.iter().map(|v| v.abs()).collect();
            let z = simplex_knapsack(&mags, gamma);
            Ok(y0.iter().zip(z).map(|(v, z)| if *v < 0.0 { -z } else { z }).collect())
        }
        NormOrder::Two => {
            let norm = NormOrder::Two.norm(y0);
            if norm == 0.0 {
                return Err(CsslError::Domain("projection of the zero vector onto a sphere is undefined".into()));
            }
            Ok(y0.iter().map(|v| gamma * v / norm).collect())
        }
        NormOrder::Inf => Ok(y0.iter().map(|v| v.clamp(-gamma, gamma)).collect()),
    }
}

/// Closest point satisfying `|1ᵀy| = ρ` and `‖y‖_q = γ` together.
///
/// `tilde_y` is the hyperplane candidate for `y0`; only its signs are used, and only for `q = 1`.
pub fn project_intersection_boundary(y0: &[f64], spec: &ProjectionSpec, tilde_y: &[f64]) -> Result<Vec<f64>> {
    let n = y0.len();
    if n == 0 {
        return validation("empty vector");
    }
    let ProjectionSpec { rho, gamma, q } = *spec;
    if !gamma.is_finite() {
        return validation("the intersection boundary needs a finite gamma");
    }
    let cap = q.conjugate().ones_norm(n) * gamma;
    if rho > cap * (1.0 + 1e-12) {
        return Err(CsslError::Infeasible(format!(
            "rho = {rho} exceeds the largest attainable sum {cap} on the gamma-sphere"
        )));
    }
    let rho = rho.min(cap);
    match q {
        NormOrder::Two => Ok(intersection_l2(y0, rho, gamma)),
        NormOrder::Inf => {
            let mut best: Option<(f64, Vec<f64>)> = None;
            for zeta in [rho, -rho] {
                let y = solve_cq_knapsack_box(y0, zeta, gamma)?;
                let obj = sq_dist(&y, y0);
                if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                    best = Some((obj, y));
                }
            }
            Ok(best.expect("two branches").1)
        }
        NormOrder::One => {
            if tilde_y.len() != n {
                return validation("tilde_y length differs from y0");
            }
            let pos: Vec<usize> = (0..n).filter(|&i| tilde_y[i] >= 0.0).collect();
            let neg: Vec<usize> = (0..n).filter(|&i| tilde_y[i] < 0.0).collect();
            let mut best: Option<(f64, Vec<f64>)> = None;
            for zeta in [rho, -rho] {
                let up = 0.5 * (gamma + zeta);
                let down = 0.5 * (gamma - zeta);
                if (pos.is_empty() && up > 0.0) || (neg.is_empty() && down > 0.0) {
                    continue;
                }
                let a_pos: Vec<f64> = pos.iter().map(|&i| y0[i]).collect();
                let a_neg: Vec<f64> = neg.iter().map(|&i| -y0[i]).collect();
                let z = simplex_knapsack(&a_pos, up);
                let w = simplex_knapsack(&a_neg, down);
                let mut y = vec![0.0; n];
                for (k, &i) in pos.iter().enumerate() {
                    y[i] = z[k];
                }
                for (k, &i) in neg.iter().enumerate() {
                    y[i] = -w[k];
                }
                let obj = sq_dist(&y, y0);
                if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                    best = Some((obj, y));
                }
            }
            best.map(|b| b.1).ok_or_else(|| {
                CsslError::Infeasible("no sign-consistent point on the intersection boundary".into())
            })
        }
    }
}

/// The circle `{1ᵀy = σρ} ∩ {‖y‖₂ = γ}` has center `σρ/N·1` and radius `√(γ² − ρ²/N)`
/// inside the hyperplane; the nearest point lies along the centered direction of `y0`.
fn intersection_l2(y0: &[f64], rho: f64, gamma: f64) -> Vec<f64> {
    let n = y0.len();
    let nf = n as f64;
    let s = sum(y0);
    let sigma = sign_or_plus(s);
    let center = sigma * rho / nf;
    let radius = (gamma * gamma - rho * rho / nf).max(0.0).sqrt();
    let mut r: Vec<f64> = y0.iter().map(|v| v - s / nf).collect();
    let mut norm = NormOrder::Two.norm(&r);
    if norm == 0.0 {
        if n == 1 {
            return vec![center];
        }
        // y0 parallel to 1: every point of the circle is equally close.
        r = (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 } - 1.0 / nf).collect();
        norm = NormOrder::Two.norm(&r);
    }
    r.iter().map(|v| center + radius * v / norm).collect()
}

/// Euclidean projection onto `C`.
pub fn project_onto_c(y0: &[f64], spec: &ProjectionSpec) -> Vec<f64> {
    let ProjectionSpec { rho, gamma, q } = *spec;
    let s = sum(y0);
    let norm = q.norm(y0);
    let sum_tol = 1e-12 * rho.max(1.0);
    let norm_tol = 1e-12 * if gamma.is_finite() { gamma.max(1.0) } else { 1.0 };
    if s.abs() <= rho && norm <= gamma {
        return y0.to_vec();
    }
    if s.abs() > rho {
        let cand = project_sum_hyperplane(y0, rho);
        if q.norm(&cand) <= gamma + norm_tol {
            return cand;
        }
    }
    let mut sphere = None;
    if norm > gamma {
        if let Ok(cand) = project_lq_ball_boundary(y0, gamma, q) {
            if sum(&cand).abs() <= rho + sum_tol {
                return cand;
            }
            sphere = Some(cand);
        }
    }
    let tilde_y = project_sum_hyperplane(y0, rho);
    match project_intersection_boundary(y0, spec, &tilde_y) {
        Ok(y) => y,
        // Only reachable through rounding at an empty intersection, where the sphere point is the answer.
        Err(_) => sphere.unwrap_or(tilde_y),
    }
}
