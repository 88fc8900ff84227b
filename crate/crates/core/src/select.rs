//! Hyper-parameter heuristic and extraction of the common substructure from fitted precisions.

use serde::{Deserialize, Serialize};

use crate::error::{validation, CsslError, Result};
use crate::linalg::{Mask, Matrix};
use crate::types::{CovarianceSet, Hyperparams, NormOrder, PrecisionDecomposition};

pub const DEFAULT_ZERO_TOL: f64 = 1e-6;

/// `|Σ t_i S_i| ≈ s₁ · max_i |S_i| + s₀`, fitted over the upper triangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleLine {
    pub s0: f64,
    pub s1: f64,
}

/// `(max_i |S_{i,jj'}|, |Σ_i t_i S_{i,jj'}|)` for every `j ≤ j'`.
pub fn scale_tuples(cov: &CovarianceSet) -> Vec<(f64, f64)> {
    let d = cov.dim();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for c in 0..d {
        for r in 0..=c {
            let mut x = 0.0_f64;
            let mut y = 0.0;
            for (s, &t) in cov.matrices().iter().zip(cov.weights()) {
                x = x.max(s[(r, c)].abs());
                y += t * s[(r, c)];
            }
            out.push((x, y.abs()));
        }
    }
    out
}

/// Ordinary least squares through the tuples.
pub fn fit_scale_line(cov: &CovarianceSet) -> Result<ScaleLine> {
    let pts = scale_tuples(cov);
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return validation("scale line is degenerate: all abscissae are identical");
    }
    let s1 = sxy / sxx;
    Ok(ScaleLine { s0: my - s1 * mx, s1 })
}

/// `ρ = max(s₁α + s₀, 0)`, `γ = α`.
pub fn params_from_alpha(line: &ScaleLine, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return validation(format!("alpha must be positive and finite, got {alpha}"));
    }
    Ok(((line.s1 * alpha + line.s0).max(0.0), alpha))
}

/// Hyperparameters from the scale-line heuristic.
pub fn heuristic_hyperparams(cov: &CovarianceSet, alpha: f64, p: NormOrder) -> Result<(ScaleLine, Hyperparams)> {
    let line = fit_scale_line(cov)?;
    let (rho, gamma) = params_from_alpha(&line, alpha)?;
    Ok((line, Hyperparams::new(rho, gamma, p)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub j: usize,
    pub k: usize,
    pub value: f64,
}

/// Detected common entries and their values.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonStructure {
    pub theta_hat: Matrix,
    pub support: Mask,
}

impl CommonStructure {
    fn from_support(support: Mask, values: &Matrix) -> Self {
        let theta_hat = Matrix::from_fn(values.nrows(), values.ncols(), |r, c| {
            if support[(r, c)] { values[(r, c)] } else { 0.0 }
        });
        CommonStructure { theta_hat, support }
    }

    /// Upper-triangle edges, diagonal excluded.
    pub fn edges(&self) -> Vec<Edge> {
        let d = self.support.nrows();
        let mut out = Vec::new();
        for j in 0..d {
            for k in (j + 1)..d {
                if self.support[(j, k)] {
                    out.push(Edge { j, k, value: self.theta_hat[(j, k)] });
                }
            }
        }
        out
    }
}

/// An entry is common when every `Ω_i` vanishes there (within `zero_tol`) and `Θ` does not.
pub fn extract_common_exact(decomp: &PrecisionDecomposition, zero_tol: f64) -> CommonStructure {
    let d = decomp.dim();
    let support = Mask::from_fn(d, d, |r, c| {
        decomp.theta[(r, c)].abs() > zero_tol && decomp.omegas.iter().all(|o| o[(r, c)].abs() <= zero_tol)
    });
    let lambda1 = decomp.lambda(0);
    CommonStructure::from_support(support, &lambda1)
}

/// `max_{i<i'} |Λ_{i,jk} − Λ_{i',jk}|`, i.e. the range across datasets.
pub fn entry_variation(precisions: &[Matrix], r: usize, c: usize) -> f64 {
    let lo = precisions.iter().map(|m| m[(r, c)]).fold(f64::INFINITY, f64::min);
    let hi = precisions.iter().map(|m| m[(r, c)]).fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// Smallest value `v` in `values` with at least `⌈q·m⌉` of the `m` values `≤ v`.
pub fn inclusive_lower_quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite variations"));
    let need = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[need - 1])
}

/// Marks entries that are nonzero in some estimate and whose variation across the estimates is
/// at most the `eps0`-quantile of the variations of all upper-triangle entries, diagonal
/// included. Returns the structure and the threshold used.
pub fn extract_common_threshold(precisions: &[Matrix], eps0: f64) -> Result<(CommonStructure, f64)> {
    if precisions.len() < 2 {
        return validation("threshold extraction needs at least two precision matrices");
    }
    if !(eps0 > 0.0 && eps0 < 1.0) {
        return validation(format!("eps0 must lie in (0, 1), got {eps0}"));
    }
    let d = precisions[0].nrows();
    if precisions.iter().any(|m| m.shape() != (d, d)) {
        return validation("precision matrices differ in shape");
    }
    let nonzero = |r: usize, c: usize| precisions.iter().any(|m| m[(r, c)] != 0.0);
    let mut variations = Vec::new();
    for c in 0..d {
        for r in 0..=c {
            variations.push(entry_variation(precisions, r, c));
        }
    }
    let eps = inclusive_lower_quantile(&variations, eps0)
        .ok_or_else(|| CsslError::Validation("empty precision matrices".into()))?;
    let support = Mask::from_fn(d, d, |r, c| nonzero(r, c) && entry_variation(precisions, r, c) <= eps);
    Ok((CommonStructure::from_support(support, &precisions[0]), eps))
}
