//! ADMM on the dual problem: alternating W-, Y- and Z-updates with an adaptive penalty.

mod bounds;
mod objective;
mod split;
mod updates;

use serde::{Deserialize, Serialize};
use std::time::Instant;

pub use bounds::{eigen_bounds, project_psd_floor, EigBounds, DEFAULT_FLOOR};
pub use objective::{dual_objective, dual_violation, penalty, primal_objective};
pub use split::split_common_individual;
pub use updates::{
    adapt_beta, duality_gap, feasible_dual_point, primal_candidate, primal_dual_gaps, project_dual_set,
    split_precisions, update_w, update_y, update_z, w_subproblem,
};

use crate::error::{validation, CsslError, Result};
use crate::linalg::Matrix;
use crate::types::{CovarianceSet, Hyperparams, PrecisionDecomposition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Absolute duality-gap tolerance; `None` means `1e-5·d`.
    pub eps_gap: Option<f64>,
    pub eps_pdgap: f64,
    pub max_iter: usize,
    pub beta0: f64,
    pub beta_bounds: (f64, f64),
    pub adapt_beta: bool,
    /// Fan the per-position Y projections out over the rayon pool.
    pub parallel: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eps_gap: None,
            eps_pdgap: 1e-5,
            max_iter: 1000,
            beta0: 1.0,
            beta_bounds: (1e-4, 1e4),
            adapt_beta: true,
            parallel: false,
        }
    }
}

impl SolverConfig {
    pub fn eps_gap_for(&self, d: usize) -> f64 {
        self.eps_gap.unwrap_or(1e-5 * d as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.eps_gap {
            if !(e > 0.0) {
                return validation("eps_gap must be > 0");
            }
        }
        if !(self.eps_pdgap > 0.0) {
            return validation("eps_pdgap must be > 0");
        }
        let (lo, hi) = self.beta_bounds;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return validation("beta bounds must satisfy 0 < min <= max < inf");
        }
        if !(self.beta0 > 0.0) {
            return validation("beta0 must be > 0");
        }
        if self.max_iter == 0 {
            return validation("max_iter must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub duality_gap: f64,
    pub primal_gap: f64,
    pub dual_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub w: Vec<Matrix>,
    pub y: Vec<Matrix>,
    pub z: Vec<Matrix>,
    pub beta: f64,
    pub iter: usize,
    pub gap_history: Vec<GapRecord>,
    pub best_primal: f64,
    pub best: Option<PrecisionDecomposition>,
    pub current: Option<PrecisionDecomposition>,
}

impl SolverState {
    /// `W = S + I`, `Y = 0`, `Z = I`.
    pub fn new(cov: &CovarianceSet, beta: f64) -> Self {
        let d = cov.dim();
        let eye = Matrix::identity(d, d);
        SolverState {
            w: cov.matrices().iter().map(|s| s + &eye).collect(),
            y: vec![Matrix::zeros(d, d); cov.len()],
            z: vec![eye; cov.len()],
            beta,
            iter: 0,
            gap_history: Vec::new(),
            best_primal: f64::NEG_INFINITY,
            best: None,
            current: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub duality_gap: f64,
    pub primal_gap: f64,
    pub dual_gap: f64,
    pub beta_trace: Vec<f64>,
    pub converged: bool,
    pub wall_time_ms: f64,
    #[serde(skip)]
    pub gap_history: Vec<GapRecord>,
}

impl SolveDiagnostics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("diagnostics serialize")
    }
}

/// Solves for `(Θ, Ω)` from a cold start.
pub fn solve(
    cov: &CovarianceSet,
    hp: &Hyperparams,
    config: &SolverConfig,
) -> Result<(PrecisionDecomposition, SolveDiagnostics)> {
    solve_from(cov, hp, config, None)
}

/// Like [`solve`], seeding `Z` (the precision estimate) from an earlier solution.
pub fn solve_from(
    cov: &CovarianceSet,
    hp: &Hyperparams,
    config: &SolverConfig,
    warm_z: Option<&[Matrix]>,
) -> Result<(PrecisionDecomposition, SolveDiagnostics)> {
    hp.validate()?;
    config.validate()?;
    if let Some(z) = warm_z {
        if z.len() != cov.len() || z.iter().any(|m| m.shape() != (cov.dim(), cov.dim())) {
            return validation("warm start has the wrong shape");
        }
    }
    if hp.gamma.is_infinite() && cov.len() > 1 {
        return solve_pooled(cov, hp, config, warm_z);
    }
    run_admm(cov, hp, config, warm_z)
}

/// With `γ = ∞` every `Ω_i` vanishes and the problem is a single penalized fit on `Σ t_i S_i`.
fn solve_pooled(
    cov: &CovarianceSet,
    hp: &Hyperparams,
    config: &SolverConfig,
    warm_z: Option<&[Matrix]>,
) -> Result<(PrecisionDecomposition, SolveDiagnostics)> {
    let n = cov.len();
    let pooled = CovarianceSet::new(vec![cov.pooled()], vec![1.0], None)?;
    let warm = warm_z.map(|z| vec![z[0].clone()]);
    let expand = |single: PrecisionDecomposition| {
        let d = single.dim();
        PrecisionDecomposition { theta: single.lambda(0), omegas: vec![Matrix::zeros(d, d); n] }
    };
    match run_admm(&pooled, hp, config, warm.as_deref()) {
        Ok((single, diag)) => Ok((expand(single), diag)),
        Err(CsslError::NotConverged { iterations, duality_gap, best, diagnostics }) => {
            Err(CsslError::NotConverged { iterations, duality_gap, best: Box::new(expand(*best)), diagnostics })
        }
        Err(e) => Err(e),
    }
}

fn run_admm(
    cov: &CovarianceSet,
    hp: &Hyperparams,
    config: &SolverConfig,
    warm_z: Option<&[Matrix]>,
) -> Result<(PrecisionDecomposition, SolveDiagnostics)> {
    let start = Instant::now();
    let bounds = eigen_bounds(cov, hp);
    let eps_gap = config.eps_gap_for(cov.dim());
    let mut state = SolverState::new(cov, config.beta0.clamp(config.beta_bounds.0, config.beta_bounds.1));
    if let Some(z) = warm_z {
        state.z = z.to_vec();
    }
    let mut beta_trace = vec![state.beta];
    let mut last = GapRecord { duality_gap: f64::INFINITY, primal_gap: f64::INFINITY, dual_gap: f64::INFINITY };
    let mut converged = false;

    while state.iter < config.max_iter {
        update_w(&mut state, cov)?;
        let prev_y = state.y.clone();
        update_y(&mut state, cov, hp, config.parallel);
        update_z(&mut state, cov);
        state.iter += 1;

        let (pg, dg) = primal_dual_gaps(&state, &prev_y, cov);
        let gap = duality_gap(&mut state, cov, hp, &bounds, config.parallel);
        updates::record(&mut state, gap, pg, dg);
        last = GapRecord { duality_gap: gap, primal_gap: pg, dual_gap: dg };

        if gap <= eps_gap || pg.max(dg) <= config.eps_pdgap {
            converged = true;
            break;
        }
        if config.adapt_beta {
            state.beta = adapt_beta(pg, dg, state.beta, config.beta_bounds);
        }
        beta_trace.push(state.beta);
    }

    let diagnostics = SolveDiagnostics {
        iterations: state.iter,
        duality_gap: last.duality_gap,
        primal_gap: last.primal_gap,
        dual_gap: last.dual_gap,
        beta_trace,
        converged,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        gap_history: std::mem::take(&mut state.gap_history),
    };
    if converged {
        let out = state.current.take().expect("at least one iteration ran");
        return Ok((out, diagnostics));
    }
    let best = state
        .best
        .take()
        .or(state.current.take())
        .unwrap_or_else(|| primal_candidate(&state.z, hp, &bounds));
    Err(CsslError::NotConverged {
        iterations: state.iter,
        duality_gap: last.duality_gap,
        best: Box::new(best),
        diagnostics: Box::new(diagnostics),
    })
}
