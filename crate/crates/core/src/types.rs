//! Domain types shared by every stage, plus the Gaussian likelihood primitives.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{validation, CsslError, Result};
use crate::linalg::{self, Matrix};

const SYMMETRY_TOL: f64 = 1e-12;
const WEIGHT_SUM_TOL: f64 = 1e-12;
const CENTER_TOL: f64 = 1e-10;

/// Order of a vector norm. Only the three orders with efficient projections are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormOrder {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "inf")]
    Inf,
}

impl NormOrder {
    /// Hölder conjugate: `1/p + 1/q = 1`.
    pub fn conjugate(self) -> NormOrder {
        match self {
            NormOrder::One => NormOrder::Inf,
            NormOrder::Two => NormOrder::Two,
            NormOrder::Inf => NormOrder::One,
        }
    }

    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            NormOrder::One => v.iter().map(|x| x.abs()).sum(),
            NormOrder::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            NormOrder::Inf => v.iter().fold(0.0, |a, x| a.max(x.abs())),
        }
    }

    /// `n^{1/p}`, the ℓ_p norm of the all-ones vector of length `n`.
    pub fn ones_norm(self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            NormOrder::One => n,
            NormOrder::Two => n.sqrt(),
            NormOrder::Inf => 1.0,
        }
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormOrder::One => write!(f, "1"),
            NormOrder::Two => write!(f, "2"),
            NormOrder::Inf => write!(f, "inf"),
        }
    }
}

impl FromStr for NormOrder {
    type Err = CsslError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" => Ok(NormOrder::One),
            "2" => Ok(NormOrder::Two),
            "inf" | "infinity" => Ok(NormOrder::Inf),
            other => validation(format!("norm order must be 1, 2 or inf, got {other:?}")),
        }
    }
}

/// Symmetrizes `m` after checking it is symmetric to within `1e-12`.
pub fn checked_symmetric(mut m: Matrix, what: &str) -> Result<Matrix> {
    if m.nrows() != m.ncols() {
        return validation(format!("{what} must be square, got {}x{}", m.nrows(), m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return validation(format!("{what} has non-finite entries"));
    }
    let asym = linalg::max_asymmetry(&m);
    if asym > SYMMETRY_TOL {
        return validation(format!("{what} is not symmetric (max asymmetry {asym:e})"));
    }
    linalg::symmetrize(&mut m);
    Ok(m)
}

/// The N sample covariance matrices with their (normalized) weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    matrices: Vec<Matrix>,
    weights: Vec<f64>,
    n_points: Option<Vec<usize>>,
}

impl CovarianceSet {
    pub fn new(matrices: Vec<Matrix>, weights: Vec<f64>, n_points: Option<Vec<usize>>) -> Result<Self> {
        if matrices.is_empty() {
            return validation("a covariance set needs at least one matrix");
        }
        if weights.len() != matrices.len() {
            return validation(format!(
                "{} weights given for {} matrices",
                weights.len(),
                matrices.len()
            ));
        }
        if let Some(n) = &n_points {
            if n.len() != matrices.len() {
                return validation("n_points length differs from the number of matrices");
            }
        }
        let d = matrices[0].nrows();
        if d == 0 {
            return validation("matrices must be at least 1x1");
        }
        let mut checked = Vec::with_capacity(matrices.len());
        for (i, m) in matrices.into_iter().enumerate() {
            if m.nrows() != d || m.ncols() != d {
                return validation(format!("matrix {i} is {}x{}, expected {d}x{d}", m.nrows(), m.ncols()));
            }
            checked.push(checked_symmetric(m, &format!("covariance {i}"))?);
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return validation("weights must be finite and nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return validation(format!("weights must sum to 1, got {total}"));
        }
        Ok(CovarianceSet { matrices: checked, weights, n_points })
    }

    /// Weights `t_i = n_i / Σ n`.
    pub fn from_counts(matrices: Vec<Matrix>, n_points: Vec<usize>) -> Result<Self> {
        let total: usize = n_points.iter().sum();
        if total == 0 {
            return validation("total sample count is zero");
        }
        let weights = n_points.iter().map(|&n| n as f64 / total as f64).collect();
        Self::new(matrices, weights, Some(n_points))
    }

    /// Equal weights `1/N`.
    pub fn uniform(matrices: Vec<Matrix>) -> Result<Self> {
        let n = matrices.len().max(1);
        Self::new(matrices, vec![1.0 / n as f64; n], None)
    }

    /// Accepts any nonnegative weights and rescales them to sum to one.
    pub fn with_unnormalized_weights(matrices: Vec<Matrix>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return validation("weights must have a positive sum");
        }
        let normalized = weights.iter().map(|w| w / total).collect();
        Self::new(matrices, normalized, None)
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.matrices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_points(&self) -> Option<&[usize]> {
        self.n_points.as_deref()
    }

    /// Number of datasets N.
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    /// Dimension d.
    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    /// `Σ t_i S_i`.
    pub fn pooled(&self) -> Matrix {
        let d = self.dim();
        let mut acc = Matrix::zeros(d, d);
        for (m, &t) in self.matrices.iter().zip(&self.weights) {
            acc += m * t;
        }
        linalg::symmetrize(&mut acc);
        acc
    }
}

/// Regularization strengths and the group norm order of the individual part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub rho: f64,
    /// `f64::INFINITY` collapses all datasets onto one shared matrix.
    pub gamma: f64,
    pub p: NormOrder,
    pub penalize_diagonal: bool,
}

impl Hyperparams {
    pub fn new(rho: f64, gamma: f64, p: NormOrder) -> Result<Self> {
        let hp = Hyperparams { rho, gamma, p, penalize_diagonal: true };
        hp.validate()?;
        Ok(hp)
    }

    pub fn off_diagonal_only(mut self) -> Self {
        self.penalize_diagonal = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return validation(format!("rho must be finite and >= 0, got {}", self.rho));
        }
        if !(self.gamma > 0.0) {
            return validation(format!("gamma must be > 0 or inf, got {}", self.gamma));
        }
        Ok(())
    }

    /// Conjugate order of `p`, used by the dual constraints.
    pub fn q(&self) -> NormOrder {
        self.p.conjugate()
    }

    /// True when `0 < ρ < N^{1/p} γ < ∞`, the regime where both parts are active.
    pub fn in_mixed_regime(&self, n: usize) -> bool {
        let cap = self.p.ones_norm(n) * self.gamma;
        self.rho > 0.0 && self.rho < cap && cap.is_finite()
    }

    /// True when `ρ ≥ N^{1/p} γ`, where the common part vanishes.
    pub fn common_part_vanishes(&self, n: usize) -> bool {
        self.rho >= self.p.ones_norm(n) * self.gamma
    }
}

/// `Λ_i = Θ + Ω_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionDecomposition {
    pub theta: Matrix,
    pub omegas: Vec<Matrix>,
}

impl PrecisionDecomposition {
    pub fn new(theta: Matrix, omegas: Vec<Matrix>) -> Result<Self> {
        let d = theta.nrows();
        let theta = checked_symmetric(theta, "theta")?;
        let mut checked = Vec::with_capacity(omegas.len());
        for (i, o) in omegas.into_iter().enumerate() {
            if o.nrows() != d || o.ncols() != d {
                return validation(format!("omega {i} has the wrong shape"));
            }
            checked.push(checked_symmetric(o, &format!("omega {i}"))?);
        }
        let out = PrecisionDecomposition { theta, omegas: checked };
        for i in 0..out.len() {
            if !linalg::is_pd(&out.lambda(i)) {
                return Err(CsslError::Singular(format!("precision {i} is not positive definite")));
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.theta.nrows()
    }

    pub fn lambda(&self, i: usize) -> Matrix {
        &self.theta + &self.omegas[i]
    }

    pub fn lambdas(&self) -> Vec<Matrix> {
        (0..self.len()).map(|i| self.lambda(i)).collect()
    }
}

/// Observations, one row per data point.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Matrix,
    /// Set when rows may be treated as draws around a zero mean.
    pub centered: bool,
}

impl Dataset {
    /// Raw observations; they must be centered before a covariance is taken.
    pub fn new(samples: Matrix) -> Self {
        Dataset { samples, centered: false }
    }

    /// Observations whose generating distribution is known to have zero mean.
    pub fn assume_zero_mean(samples: Matrix) -> Self {
        Dataset { samples, centered: true }
    }

    /// Subtracts the column means.
    pub fn center(mut self) -> Self {
        let n = self.samples.nrows();
        if n > 0 {
            for mut col in self.samples.column_iter_mut() {
                let mean = col.sum() / n as f64;
                col.add_scalar_mut(-mean);
            }
        }
        self.centered = true;
        self
    }

    pub fn n(&self) -> usize {
        self.samples.nrows()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    fn column_means_vanish(&self) -> bool {
        let n = self.n().max(1) as f64;
        self.samples.column_iter().all(|c| (c.sum() / n).abs() <= CENTER_TOL)
    }
}

/// `(1/n) XᵀX + diag_load·I`.
pub fn sample_covariance(dataset: &Dataset, diag_load: f64) -> Result<Matrix> {
    if dataset.n() == 0 {
        return validation("sample covariance needs at least one observation");
    }
    if !(diag_load >= 0.0) {
        return validation("diag_load must be nonnegative");
    }
    if !dataset.centered && !dataset.column_means_vanish() {
        return validation("dataset is not centered; call Dataset::center first");
    }
    let x = &dataset.samples;
    let mut s = x.transpose() * x;
    s /= dataset.n() as f64;
    linalg::symmetrize(&mut s);
    for j in 0..s.nrows() {
        s[(j, j)] += diag_load;
    }
    Ok(s)
}

/// Gaussian log-likelihood up to a constant: `log det Λ − tr(SΛ)`.
pub fn log_likelihood(precision: &Matrix, covariance: &Matrix) -> Result<f64> {
    if precision.shape() != covariance.shape() {
        return validation("precision and covariance shapes differ");
    }
    let log_det = linalg::log_det_pd(precision)
        .ok_or_else(|| CsslError::Domain("log det of a non positive definite precision".into()))?;
    Ok(log_det - trace_product(covariance, precision))
}

/// `tr(AB)` for symmetric `A`, `B` without forming the product.
pub fn trace_product(a: &Matrix, b: &Matrix) -> f64 {
    a.iter().zip(b.transpose().iter()).map(|(x, y)| x * y).sum()
}

/// Unregularized maximum likelihood estimate `S⁻¹`.
pub fn mle_precision(covariance: &Matrix) -> Result<Matrix> {
    let s = checked_symmetric(covariance.clone(), "covariance")?;
    linalg::inverse_pd(&s).ok_or_else(|| {
        CsslError::Singular(
            "covariance is singular; add a diagonal load (diag_load > 0) before inverting".into(),
        )
    })
}
