//! Desk-scale experiments: structure recovery on synthetic families and correlation-anomaly
//! detection on synthetic mis-wiring.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{validation, CsslError, Result};
use crate::eval::{anomaly_score_pair, roc_auc, weighted_prf};
use crate::io::{self, format_value};
use crate::linalg::Matrix;
use crate::select::{extract_common_threshold, heuristic_hyperparams};
use crate::solver::{solve_from, SolverConfig};
use crate::synth::{generate_family, offdiag_density, sample_gaussian, GenConfig};
use crate::types::{sample_covariance, CovarianceSet, Hyperparams, NormOrder};

/// Entries with `|x|` at or below this count as zero when matching densities.
pub const DENSITY_TOL: f64 = 1e-8;
/// Spread below which CSSL estimates count as a common entry.
pub const CSSL_COMMON_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    /// Heuristic `ρ(α)`, `γ = α`.
    Cssl,
    /// `ρ = α`, `γ = ∞`: one fit on the pooled covariance.
    CsslPooled,
    /// Independent ℓ₁ fits with `ρ = α`.
    Sics,
    /// Group penalty `α‖Λ‖_{1,p}` with no common part.
    Msics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub kind: MethodKind,
    #[serde(default)]
    pub p: Option<NormOrder>,
    /// Quantile for threshold extraction; used by SICS and MSICS.
    #[serde(default)]
    pub eps0: Option<f64>,
}

impl MethodSpec {
    pub fn cssl(p: NormOrder) -> Self {
        MethodSpec { kind: MethodKind::Cssl, p: Some(p), eps0: None }
    }
    pub fn cssl_pooled() -> Self {
        MethodSpec { kind: MethodKind::CsslPooled, p: None, eps0: None }
    }
    pub fn sics(eps0: f64) -> Self {
        MethodSpec { kind: MethodKind::Sics, p: None, eps0: Some(eps0) }
    }
    pub fn msics(p: NormOrder, eps0: f64) -> Self {
        MethodSpec { kind: MethodKind::Msics, p: Some(p), eps0: Some(eps0) }
    }

    fn validate(&self) -> Result<()> {
        let needs_p = matches!(self.kind, MethodKind::Cssl | MethodKind::Msics);
        if needs_p && self.p.is_none() {
            return validation(format!("{:?} needs p", self.kind));
        }
        let needs_eps0 = matches!(self.kind, MethodKind::Sics | MethodKind::Msics);
        match self.eps0 {
            None if needs_eps0 => validation(format!("{:?} needs eps0", self.kind)),
            Some(e) if !(e > 0.0 && e <= 1.0) => validation("eps0 must lie in (0, 1]"),
            _ => Ok(()),
        }
    }

    /// Methods sharing a fit differ only in how common entries are read off.
    fn fit_key(&self) -> (MethodKind, Option<NormOrder>) {
        (self.kind, self.p)
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, self.p, self.eps0) {
            (MethodKind::Cssl, Some(p), _) => write!(f, "CSSL(p={p})"),
            (MethodKind::CsslPooled, _, _) => write!(f, "CSSL(gamma=inf)"),
            (MethodKind::Sics, _, Some(e)) => write!(f, "SICS(eps0={e})"),
            (MethodKind::Msics, Some(p), Some(e)) => write!(f, "MSICS(p={p},eps0={e})"),
            (kind, _, _) => write!(f, "{kind:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySettings {
    pub n_normal: usize,
    pub n_faulty: usize,
    /// Swap two variables in the faulty regime; without it both regimes share one matrix.
    pub inject_fault: bool,
    pub diag_load: f64,
}

impl Default for AnomalySettings {
    fn default() -> Self {
        AnomalySettings { n_normal: 4, n_faulty: 1, inject_fault: true, diag_load: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub dims: Vec<usize>,
    pub n_datasets: usize,
    pub runs: usize,
    pub alpha_grid: Vec<f64>,
    pub methods: Vec<MethodSpec>,
    pub density_target: f64,
    pub seed: u64,
    /// Defaults to `5d`.
    #[serde(default)]
    pub samples_per_dataset: Option<usize>,
    /// Rescale each sample covariance to unit diagonal before fitting.
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub anomaly: AnomalySettings,
}

/// `count` values from `10^lo` to `10^hi`, evenly spaced in the exponent.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![10f64.powf(lo)],
        _ => (0..count).map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (count - 1) as f64)).collect(),
    }
}

impl ExperimentPlan {
    /// d ∈ {10, 25}, N = 5, 30 runs, 41 values of α in [0.01, 1], every method of the comparison.
    pub fn desk_structure(seed: u64) -> Self {
        let mut methods = vec![
            MethodSpec::cssl(NormOrder::One),
            MethodSpec::cssl(NormOrder::Two),
            MethodSpec::cssl(NormOrder::Inf),
            MethodSpec::cssl_pooled(),
        ];
        for eps0 in [0.5, 0.7, 0.9] {
            methods.push(MethodSpec::sics(eps0));
        }
        for p in [NormOrder::Two, NormOrder::Inf] {
            for eps0 in [0.5, 0.7, 0.9] {
                methods.push(MethodSpec::msics(p, eps0));
            }
        }
        ExperimentPlan {
            dims: vec![10, 25],
            n_datasets: 5,
            runs: 30,
            alpha_grid: log_grid(-2.0, 0.0, 41),
            methods,
            density_target: 0.15,
            seed,
            samples_per_dataset: None,
            standardize: false,
            solver: SolverConfig::default(),
            anomaly: AnomalySettings::default(),
        }
    }

    /// d = 20, 30 runs, 11 values of α in [10^-1.5, 10^-0.5], four normal and one faulty dataset.
    pub fn desk_anomaly(seed: u64) -> Self {
        let mut methods: Vec<MethodSpec> =
            [NormOrder::One, NormOrder::Two, NormOrder::Inf].into_iter().map(MethodSpec::cssl).collect();
        methods.push(MethodSpec::sics(0.5));
        methods.push(MethodSpec::msics(NormOrder::Two, 0.5));
        methods.push(MethodSpec::msics(NormOrder::Inf, 0.5));
        ExperimentPlan {
            dims: vec![20],
            n_datasets: 5,
            runs: 30,
            alpha_grid: log_grid(-1.5, -0.5, 11),
            methods,
            density_target: 0.15,
            seed,
            samples_per_dataset: None,
            standardize: false,
            solver: SolverConfig::default(),
            anomaly: AnomalySettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return validation("runs must be >= 1");
        }
        if self.dims.is_empty() || self.dims.iter().any(|&d| d < 2) {
            return validation("dims must be non-empty and each d >= 2");
        }
        if self.n_datasets < 2 {
            return validation("experiments need at least two datasets");
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return validation("alpha_grid must hold finite positive values");
        }
        if self.alpha_grid.windows(2).any(|w| w[0] >= w[1]) {
            return validation("alpha_grid must be strictly ascending");
        }
        if self.methods.is_empty() {
            return validation("at least one method is required");
        }
        for m in &self.methods {
            m.validate()?;
        }
        if !(self.density_target > 0.0 && self.density_target < 1.0) {
            return validation("density_target must lie in (0, 1)");
        }
        if self.anomaly.n_normal == 0 || self.anomaly.n_faulty == 0 {
            return validation("anomaly experiments need normal and faulty datasets");
        }
        self.solver.validate()
    }

    fn samples(&self, d: usize) -> usize {
        self.samples_per_dataset.unwrap_or(5 * d)
    }

    fn fit_keys(&self) -> Vec<(MethodKind, Option<NormOrder>)> {
        let mut keys = Vec::new();
        for m in &self.methods {
            if !keys.contains(&m.fit_key()) {
                keys.push(m.fit_key());
            }
        }
        keys
    }
}

/// Seed for one `(d, run)` cell, drawn from its own stream of the plan seed.
pub fn run_seed(base: u64, d: usize, run: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(((d as u64) << 32) | run as u64);
    rng.next_u64()
}

/// Mean off-diagonal density of a set of estimates.
pub fn mean_density(estimates: &[Matrix]) -> f64 {
    estimates.iter().map(|m| offdiag_density(m, DENSITY_TOL)).sum::<f64>() / estimates.len().max(1) as f64
}

/// Index of the density closest to `target`; ties go to the smaller α.
pub fn select_by_density(densities: &[f64], target: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, dens) in densities.iter().enumerate() {
        let dist = (dens - target).abs();
        if best.is_none_or(|(_, b)| dist < b) {
            best = Some((k, dist));
        }
    }
    best.map(|(k, _)| k)
}

#[derive(Debug, Clone)]
struct Fit {
    lambdas: Vec<Matrix>,
    iterations: usize,
    converged: bool,
}

fn fit_once(cov: &CovarianceSet, hp: &Hyperparams, solver: &SolverConfig, warm: Option<&[Matrix]>) -> Result<Fit> {
    match solve_from(cov, hp, solver, warm) {
        Ok((dec, diag)) => Ok(Fit { lambdas: dec.lambdas(), iterations: diag.iterations, converged: true }),
        Err(CsslError::NotConverged { best, diagnostics, .. }) => {
            Ok(Fit { lambdas: best.lambdas(), iterations: diagnostics.iterations, converged: false })
        }
        Err(e) => Err(e),
    }
}

/// One fit of a method at one α.
fn fit_method(
    key: (MethodKind, Option<NormOrder>),
    cov: &CovarianceSet,
    alpha: f64,
    solver: &SolverConfig,
    warm: Option<&[Matrix]>,
) -> Result<Fit> {
    let n = cov.len();
    match key {
        (MethodKind::Cssl, Some(p)) => {
            let (_, hp) = heuristic_hyperparams(cov, alpha, p)?;
            fit_once(cov, &hp, solver, warm)
        }
        (MethodKind::CsslPooled, _) => fit_once(cov, &Hyperparams::new(alpha, f64::INFINITY, NormOrder::Two)?, solver, warm),
        (MethodKind::Msics, Some(p)) => {
            let hp = Hyperparams::new(p.ones_norm(n) * alpha, alpha, p)?;
            fit_once(cov, &hp, solver, warm)
        }
        (MethodKind::Sics, _) => {
            let hp = Hyperparams::new(alpha, f64::INFINITY, NormOrder::Two)?;
            let mut out = Fit { lambdas: Vec::with_capacity(n), iterations: 0, converged: true };
            for (i, s) in cov.matrices().iter().enumerate() {
                let single = CovarianceSet::new(vec![s.clone()], vec![1.0], None)?;
                let w = warm.map(|w| vec![w[i].clone()]);
                let f = fit_once(&single, &hp, solver, w.as_deref())?;
                out.lambdas.extend(f.lambdas);
                out.iterations += f.iterations;
                out.converged &= f.converged;
            }
            Ok(out)
        }
        (kind, None) => validation(format!("{kind:?} needs p")),
    }
}

/// Fits over the whole α grid, from the sparsest end down, each warm-started from the last.
fn sweep(key: (MethodKind, Option<NormOrder>), cov: &CovarianceSet, grid: &[f64], solver: &SolverConfig) -> Result<Vec<Fit>> {
    let mut fits: Vec<Fit> = Vec::with_capacity(grid.len());
    for &alpha in grid.iter().rev() {
        let warm = fits.last().map(|f| f.lambdas.as_slice());
        fits.push(fit_method(key, cov, alpha, solver, warm)?);
    }
    fits.reverse();
    Ok(fits)
}

/// `D^{-1/2} S D^{-1/2}` with `D` the diagonal of `S`.
pub fn correlation(s: &Matrix) -> Matrix {
    let d = s.nrows();
    Matrix::from_fn(d, d, |r, c| if r == c { 1.0 } else { s[(r, c)] / (s[(r, r)] * s[(c, c)]).sqrt() })
}

fn covariances(datasets: &[crate::types::Dataset], weights: Vec<f64>, diag_load: f64, standardize: bool) -> Result<CovarianceSet> {
    let matrices = datasets
        .iter()
        .map(|ds| sample_covariance(ds, diag_load).map(|s| if standardize { correlation(&s) } else { s }))
        .collect::<Result<Vec<_>>>()?;
    let n_points = datasets.iter().map(|ds| ds.n()).collect();
    CovarianceSet::new(matrices, weights, Some(n_points))
}

/// One row per (method, d, run): the density-matched α and its metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureCell {
    pub method: String,
    pub d: usize,
    pub run: usize,
    pub alpha: f64,
    pub density: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub f0_measure: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// One row per (method, d, run, α) for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub method: String,
    pub d: usize,
    pub run: usize,
    pub alpha: f64,
    pub density: f64,
    pub f_measure: f64,
    pub f0_measure: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureSummary {
    pub method: String,
    pub d: usize,
    pub runs_used: usize,
    pub flagged: usize,
    pub mean_density: f64,
    pub precision: (f64, f64),
    pub recall: (f64, f64),
    pub f_measure: (f64, f64),
    pub f0_measure: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureResults {
    pub cells: Vec<StructureCell>,
    pub sweep: Vec<SweepPoint>,
    pub summary: Vec<StructureSummary>,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl StructureResults {
    pub fn summary_for(&self, method: &str, d: usize) -> Option<&StructureSummary> {
        self.summary.iter().find(|s| s.method == method && s.d == d)
    }

    pub fn cells_csv(&self) -> String {
        let mut out = String::from("method,d,run,alpha,density,precision,recall,f_measure,f0_measure,iterations,converged\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.method,
                c.d,
                c.run,
                format_value(c.alpha),
                format_value(c.density),
                format_value(c.precision),
                format_value(c.recall),
                format_value(c.f_measure),
                format_value(c.f0_measure),
                c.iterations,
                c.converged
            );
        }
        out
    }

    pub fn sweep_csv(&self) -> String {
        let mut out = String::from("method,d,run,alpha,density,f_measure,f0_measure,converged\n");
        for s in &self.sweep {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.method,
                s.d,
                s.run,
                format_value(s.alpha),
                format_value(s.density),
                format_value(s.f_measure),
                format_value(s.f0_measure),
                s.converged
            );
        }
        out
    }

    /// Writes `structure_cells.csv`, `structure_sweep.csv` and `structure_summary.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        io::write_text(dir.join("structure_cells.csv"), &self.cells_csv())?;
        io::write_text(dir.join("structure_sweep.csv"), &self.sweep_csv())?;
        io::write_json(dir.join("structure_summary.json"), &self.summary)
    }
}

fn structure_run(plan: &ExperimentPlan, d: usize, run: usize) -> Result<(Vec<StructureCell>, Vec<SweepPoint>)> {
    let mut gen = GenConfig::new(d, plan.n_datasets, run_seed(plan.seed, d, run));
    gen.target_density = plan.density_target;
    gen.n_per_dataset = Some(plan.samples(d));
    let family = generate_family(&gen)?;
    let n = plan.n_datasets;
    let cov = covariances(&family.datasets, vec![1.0 / n as f64; n], 0.0, plan.standardize)?;
    let mut cells = Vec::new();
    let mut points = Vec::new();
    for key in plan.fit_keys() {
        let fits = sweep(key, &cov, &plan.alpha_grid, &plan.solver)?;
        let densities: Vec<f64> = fits.iter().map(|f| mean_density(&f.lambdas)).collect();
        let chosen = select_by_density(&densities, plan.density_target).expect("non-empty grid");
        for method in plan.methods.iter().filter(|m| m.fit_key() == key) {
            let metrics_at = |fit: &Fit| -> Result<crate::eval::StructureMetrics> {
                let eps = match method.eps0 {
                    Some(eps0) if method.kind != MethodKind::Cssl && method.kind != MethodKind::CsslPooled => {
                        extract_common_threshold(&fit.lambdas, eps0)?.1.next_up()
                    }
                    _ => CSSL_COMMON_EPS,
                };
                weighted_prf(&fit.lambdas, &family.precisions, eps)
            };
            let label = method.to_string();
            for ((fit, &alpha), &density) in fits.iter().zip(&plan.alpha_grid).zip(&densities) {
                let m = metrics_at(fit)?;
                points.push(SweepPoint {
                    method: label.clone(),
                    d,
                    run,
                    alpha,
                    density,
                    f_measure: m.f_measure,
                    f0_measure: m.f0_measure,
                    converged: fit.converged,
                });
            }
            let fit = &fits[chosen];
            let m = metrics_at(fit)?;
            cells.push(StructureCell {
                method: label,
                d,
                run,
                alpha: plan.alpha_grid[chosen],
                density: densities[chosen],
                precision: m.precision,
                recall: m.recall,
                f_measure: m.f_measure,
                f0_measure: m.f0_measure,
                iterations: fit.iterations,
                converged: fit.converged,
            });
        }
    }
    Ok((cells, points))
}

fn jobs(plan: &ExperimentPlan) -> Vec<(usize, usize)> {
    plan.dims.iter().flat_map(|&d| (0..plan.runs).map(move |r| (d, r))).collect()
}

/// Generates a family per (d, run), sweeps α for every method, keeps the α whose estimate
/// density is closest to the target and aggregates the metrics per (method, d).
pub fn run_structure_experiment(plan: &ExperimentPlan) -> Result<StructureResults> {
    plan.validate()?;
    let per_run: Vec<(Vec<StructureCell>, Vec<SweepPoint>)> =
        jobs(plan).into_par_iter().map(|(d, r)| structure_run(plan, d, r)).collect::<Result<_>>()?;
    let mut cells = Vec::new();
    let mut sweep = Vec::new();
    for (c, s) in per_run {
        cells.extend(c);
        sweep.extend(s);
    }
    let mut summary = Vec::new();
    for &d in &plan.dims {
        for method in &plan.methods {
            let label = method.to_string();
            let mine: Vec<&StructureCell> = cells.iter().filter(|c| c.d == d && c.method == label).collect();
            let used: Vec<&&StructureCell> = mine.iter().filter(|c| c.converged).collect();
            let stat = |f: fn(&StructureCell) -> f64| mean_std(&used.iter().map(|c| f(c)).collect::<Vec<_>>());
            summary.push(StructureSummary {
                method: label,
                d,
                runs_used: used.len(),
                flagged: mine.len() - used.len(),
                mean_density: stat(|c| c.density).0,
                precision: stat(|c| c.precision),
                recall: stat(|c| c.recall),
                f_measure: stat(|c| c.f_measure),
                f0_measure: stat(|c| c.f0_measure),
            });
        }
    }
    Ok(StructureResults { cells, sweep, summary })
}

/// Swaps the rows and columns of variables `u` and `v`.
pub fn swap_variables(m: &Matrix, u: usize, v: usize) -> Matrix {
    let mut out = m.clone();
    out.swap_rows(u, v);
    out.swap_columns(u, v);
    out
}

/// One row per (method, run): AUC at each α and the best of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyCell {
    pub method: String,
    pub d: usize,
    pub run: usize,
    pub swapped: (usize, usize),
    pub aucs: Vec<f64>,
    pub best_alpha: f64,
    pub best_auc: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySummary {
    pub method: String,
    pub d: usize,
    pub runs: usize,
    pub flagged: usize,
    pub median_best_auc: f64,
    pub q25_best_auc: f64,
    pub q75_best_auc: f64,
    /// Median over every (run, α) without picking the best α.
    pub median_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyResults {
    pub alpha_grid: Vec<f64>,
    pub cells: Vec<AnomalyCell>,
    pub summary: Vec<AnomalySummary>,
}

/// Linear-interpolation quantile of the sorted copy of `values`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

impl AnomalyResults {
    pub fn summary_for(&self, method: &str) -> Option<&AnomalySummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn cells_csv(&self) -> String {
        let mut out = String::from("method,d,run,swap_u,swap_v,alpha,auc,best\n");
        for c in &self.cells {
            for (&alpha, &auc) in self.alpha_grid.iter().zip(&c.aucs) {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    c.method,
                    c.d,
                    c.run,
                    c.swapped.0 + 1,
                    c.swapped.1 + 1,
                    format_value(alpha),
                    format_value(auc),
                    alpha == c.best_alpha
                );
            }
        }
        out
    }

    /// Writes `anomaly_cells.csv` and `anomaly_summary.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        io::write_text(dir.join("anomaly_cells.csv"), &self.cells_csv())?;
        io::write_json(dir.join("anomaly_summary.json"), &self.summary)
    }
}

/// Mean AUC over every (normal, faulty) pair of estimates, with the swapped pair as positives.
fn pairwise_auc(lambdas: &[Matrix], n_normal: usize, labels: &[bool]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for a in &lambdas[..n_normal] {
        for b in &lambdas[n_normal..] {
            total += roc_auc(&anomaly_score_pair(a, b)?.scores, labels)?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn anomaly_run(plan: &ExperimentPlan, d: usize, run: usize) -> Result<Vec<AnomalyCell>> {
    let settings = &plan.anomaly;
    let seed = run_seed(plan.seed, d, run);
    let mut gen = GenConfig::new(d, 1, seed);
    gen.target_density = plan.density_target;
    let normal = generate_family(&gen)?.precisions.remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = rng.random_range(0..d);
    let v = (u + rng.random_range(1..d)) % d;
    let (u, v) = (u.min(v), u.max(v));
    let faulty = if settings.inject_fault { swap_variables(&normal, u, v) } else { normal.clone() };
    let (nn, nf) = (settings.n_normal, settings.n_faulty);
    let mut datasets = Vec::with_capacity(nn + nf);
    for k in 0..nn + nf {
        let mut stream = ChaCha8Rng::seed_from_u64(seed);
        stream.set_stream(k as u64 + 1);
        let lam = if k < nn { &normal } else { &faulty };
        datasets.push(sample_gaussian(lam, plan.samples(d), &mut stream)?);
    }
    let weights: Vec<f64> = (0..nn + nf).map(|k| if k < nn { 0.5 / nn as f64 } else { 0.5 / nf as f64 }).collect();
    let cov = covariances(&datasets, weights, settings.diag_load, plan.standardize)?;
    let labels: Vec<bool> = (0..d).map(|j| j == u || j == v).collect();
    let mut cells = Vec::new();
    for key in plan.fit_keys() {
        let fits = sweep(key, &cov, &plan.alpha_grid, &plan.solver)?;
        let aucs = fits.iter().map(|f| pairwise_auc(&f.lambdas, nn, &labels)).collect::<Result<Vec<_>>>()?;
        let converged = fits.iter().all(|f| f.converged);
        let mut best = 0;
        for (k, a) in aucs.iter().enumerate() {
            if *a > aucs[best] {
                best = k;
            }
        }
        for method in plan.methods.iter().filter(|m| m.fit_key() == key) {
            cells.push(AnomalyCell {
                method: method.to_string(),
                d,
                run,
                swapped: (u, v),
                aucs: aucs.clone(),
                best_alpha: plan.alpha_grid[best],
                best_auc: aucs[best],
                converged,
            });
        }
    }
    Ok(cells)
}

/// Fits a normal and a faulty regime jointly, scores every (normal, faulty) pair of estimates and
/// records the best AUC over the α grid; the fault swaps two variables of the faulty regime.
pub fn run_anomaly_experiment(plan: &ExperimentPlan) -> Result<AnomalyResults> {
    plan.validate()?;
    let per_run: Vec<Vec<AnomalyCell>> =
        jobs(plan).into_par_iter().map(|(d, r)| anomaly_run(plan, d, r)).collect::<Result<_>>()?;
    let cells: Vec<AnomalyCell> = per_run.into_iter().flatten().collect();
    let mut summary = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for m in &plan.methods {
        let l = m.to_string();
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    for &d in &plan.dims {
        for label in &labels {
            let mine: Vec<&AnomalyCell> = cells.iter().filter(|c| c.d == d && &c.method == label).collect();
            let used: Vec<&&AnomalyCell> = mine.iter().filter(|c| c.converged).collect();
            let best: Vec<f64> = used.iter().map(|c| c.best_auc).collect();
            let all: Vec<f64> = used.iter().flat_map(|c| c.aucs.iter().cloned()).collect();
            summary.push(AnomalySummary {
                method: label.clone(),
                d,
                runs: used.len(),
                flagged: mine.len() - used.len(),
                median_best_auc: quantile(&best, 0.5),
                q25_best_auc: quantile(&best, 0.25),
                q75_best_auc: quantile(&best, 0.75),
                median_auc: quantile(&all, 0.5),
            });
        }
    }
    Ok(AnomalyResults { alpha_grid: plan.alpha_grid.clone(), cells, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints() {
        let g = log_grid(-2.0, 0.0, 41);
        assert_eq!(g.len(), 41);
        assert!((g[0] - 0.01).abs() < 1e-15 && (g[40] - 1.0).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn density_selection_prefers_smaller_alpha_on_ties() {
        assert_eq!(select_by_density(&[0.75, 0.5, 0.25, 0.0], 0.375), Some(1));
        assert_eq!(select_by_density(&[1.0, 0.75, 0.25], 0.5), Some(1));
        assert_eq!(select_by_density(&[], 0.15), None);
    }

    #[test]
    fn method_labels() {
        assert_eq!(MethodSpec::cssl(NormOrder::Two).to_string(), "CSSL(p=2)");
        assert_eq!(MethodSpec::msics(NormOrder::Inf, 0.9).to_string(), "MSICS(p=inf,eps0=0.9)");
        assert_eq!(MethodSpec::sics(0.5).to_string(), "SICS(eps0=0.5)");
        assert_eq!(MethodSpec::cssl_pooled().to_string(), "CSSL(gamma=inf)");
    }

    #[test]
    fn plan_validation() {
        let mut plan = ExperimentPlan::desk_structure(0);
        assert!(plan.validate().is_ok());
        plan.alpha_grid = vec![0.5, 0.1];
        assert!(plan.validate().is_err());
        let mut plan = ExperimentPlan::desk_structure(0);
        plan.methods.push(MethodSpec { kind: MethodKind::Msics, p: None, eps0: Some(0.5) });
        assert!(plan.validate().is_err());
        let mut plan = ExperimentPlan::desk_anomaly(0);
        plan.runs = 0;
        assert!(plan.validate().is_err());
    }

    #[test]
    fn plan_round_trips_through_json() {
        let plan = ExperimentPlan::desk_anomaly(7);
        let text = serde_json::to_string(&plan).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentPlan>(&text).unwrap(), plan);
    }

    #[test]
    fn swap_is_a_permutation() {
        let m = Matrix::from_fn(3, 3, |r, c| (r * 3 + c) as f64);
        let s = swap_variables(&m, 0, 2);
        assert_eq!(s[(0, 0)], m[(2, 2)]);
        assert_eq!(s[(0, 1)], m[(2, 1)]);
        assert_eq!(swap_variables(&s, 0, 2), m);
    }

    #[test]
    fn stats_helpers() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 2f64.sqrt()));
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.5), 2.5);
        assert_eq!(quantile(&[1.0, 2.0, 3.0], 0.25), 1.5);
    }

    #[test]
    fn seeds_differ_per_cell() {
        assert_ne!(run_seed(1, 10, 0), run_seed(1, 10, 1));
        assert_ne!(run_seed(1, 10, 0), run_seed(1, 11, 0));
        assert_eq!(run_seed(1, 10, 0), run_seed(1, 10, 0));
    }
}
