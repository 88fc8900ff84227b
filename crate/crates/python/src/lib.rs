//! Python bindings. Matrices cross the boundary as lists of rows, so numpy arrays work after
//! `.tolist()` or directly as nested sequences.

use cssl::eval;
use cssl::select;
use cssl::synth::{self, GenConfig};
use cssl::types::sample_covariance as covariance_of;
use cssl::{CovarianceSet, CsslError, Dataset, Matrix, NormOrder, PrecisionDecomposition};
use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(pycssl, NotConvergedError, PyRuntimeError);

type Rows = Vec<Vec<f64>>;

fn to_py_err(e: CsslError) -> PyErr {
    match e {
        CsslError::NotConverged { .. } => NotConvergedError::new_err(e.to_string()),
        CsslError::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: &Rows) -> PyResult<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("rows differ in length"));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn rows(m: &Matrix) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn mask_rows(m: &cssl::linalg::Mask) -> Vec<Vec<bool>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrices(list: &[Rows]) -> PyResult<Vec<Matrix>> {
    list.iter().map(matrix).collect()
}

fn norm_order(p: &str) -> PyResult<NormOrder> {
    p.parse().map_err(|e: CsslError| PyValueError::new_err(e.to_string()))
}

fn covariance_set(covariances: &[Rows], weights: Option<Vec<f64>>) -> PyResult<CovarianceSet> {
    let mats = matrices(covariances)?;
    match weights {
        Some(w) => CovarianceSet::with_unnormalized_weights(mats, w),
        None => CovarianceSet::uniform(mats),
    }
    .map_err(to_py_err)
}

/// Penalty parameters `rho`, `gamma` and the group norm order `p` ("1", "2" or "inf").
#[pyclass(name = "Hyperparams", from_py_object)]
#[derive(Clone)]
struct PyHyperparams(cssl::Hyperparams);

#[pymethods]
impl PyHyperparams {
    #[new]
    #[pyo3(signature = (rho, gamma, p = "2", penalize_diagonal = true))]
    fn new(rho: f64, gamma: f64, p: &str, penalize_diagonal: bool) -> PyResult<Self> {
        let hp = cssl::Hyperparams::new(rho, gamma, norm_order(p)?).map_err(to_py_err)?;
        Ok(PyHyperparams(if penalize_diagonal { hp } else { hp.off_diagonal_only() }))
    }

    /// Hyperparameters from a single scale `alpha` through the fitted scale line.
    /// Returns `(hyperparams, s0, s1)`.
    #[staticmethod]
    #[pyo3(signature = (covariances, alpha, p = "2", weights = None))]
    fn heuristic(covariances: Vec<Rows>, alpha: f64, p: &str, weights: Option<Vec<f64>>) -> PyResult<(Self, f64, f64)> {
        let cov = covariance_set(&covariances, weights)?;
        let (line, hp) = select::heuristic_hyperparams(&cov, alpha, norm_order(p)?).map_err(to_py_err)?;
        Ok((PyHyperparams(hp), line.s0, line.s1))
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.0.rho
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma
    }

    #[getter]
    fn p(&self) -> String {
        self.0.p.to_string()
    }

    #[getter]
    fn penalize_diagonal(&self) -> bool {
        self.0.penalize_diagonal
    }

    fn __repr__(&self) -> String {
        let diag = if self.0.penalize_diagonal { "True" } else { "False" };
        format!("Hyperparams(rho={}, gamma={}, p={}, penalize_diagonal={diag})", self.0.rho, self.0.gamma, self.0.p)
    }
}

#[pyclass(name = "SolverConfig", from_py_object)]
#[derive(Clone)]
struct PySolverConfig(cssl::SolverConfig);

#[pymethods]
impl PySolverConfig {
    #[new]
    #[pyo3(signature = (eps_gap = None, eps_pdgap = 1e-5, max_iter = 1000, beta0 = 1.0, adapt_beta = true, parallel = false))]
    fn new(eps_gap: Option<f64>, eps_pdgap: f64, max_iter: usize, beta0: f64, adapt_beta: bool, parallel: bool) -> PyResult<Self> {
        let cfg = cssl::SolverConfig { eps_gap, eps_pdgap, max_iter, beta0, adapt_beta, parallel, ..Default::default() };
        cfg.validate().map_err(to_py_err)?;
        Ok(PySolverConfig(cfg))
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

/// Fitted common part, individual parts and convergence diagnostics.
#[pyclass(name = "FitResult")]
struct PyFitResult {
    decomposition: PrecisionDecomposition,
    diagnostics: cssl::SolveDiagnostics,
}

#[pymethods]
impl PyFitResult {
    #[getter]
    fn theta(&self) -> Rows {
        rows(&self.decomposition.theta)
    }

    #[getter]
    fn omegas(&self) -> Vec<Rows> {
        self.decomposition.omegas.iter().map(rows).collect()
    }

    #[getter]
    fn lambdas(&self) -> Vec<Rows> {
        self.decomposition.lambdas().iter().map(rows).collect()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.diagnostics.converged
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.diagnostics.iterations
    }

    #[getter]
    fn duality_gap(&self) -> f64 {
        self.diagnostics.duality_gap
    }

    /// Entries where every individual part vanishes and the common part does not.
    /// Returns `(mask, edges)` with edges as `(j, k, value)` for `j < k`.
    #[pyo3(signature = (zero_tol = 1e-10))]
    fn common_structure(&self, zero_tol: f64) -> (Vec<Vec<bool>>, Vec<(usize, usize, f64)>) {
        let cs = select::extract_common_exact(&self.decomposition, zero_tol);
        (mask_rows(&cs.support), cs.edges().iter().map(|e| (e.j, e.k, e.value)).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "FitResult(n={}, d={}, converged={}, iterations={}, duality_gap={:e})",
            self.decomposition.len(),
            self.decomposition.dim(),
            if self.diagnostics.converged { "True" } else { "False" },
            self.diagnostics.iterations,
            self.diagnostics.duality_gap
        )
    }
}

/// Fits the joint model. With `strict=True` a fit that hits the iteration cap raises
/// `NotConvergedError`; otherwise the best iterate is returned with `converged == False`.
#[pyfunction]
#[pyo3(signature = (covariances, hyperparams, weights = None, config = None, strict = false))]
fn solve(
    py: Python<'_>,
    covariances: Vec<Rows>,
    hyperparams: PyHyperparams,
    weights: Option<Vec<f64>>,
    config: Option<PySolverConfig>,
    strict: bool,
) -> PyResult<PyFitResult> {
    let cov = covariance_set(&covariances, weights)?;
    let cfg = config.map(|c| c.0).unwrap_or_default();
    match py.detach(|| cssl::solve(&cov, &hyperparams.0, &cfg)) {
        Ok((decomposition, diagnostics)) => Ok(PyFitResult { decomposition, diagnostics }),
        Err(CsslError::NotConverged { best, diagnostics, .. }) if !strict => {
            Ok(PyFitResult { decomposition: *best, diagnostics: *diagnostics })
        }
        Err(e) => Err(to_py_err(e)),
    }
}

/// `(1/n) XᵀX + diag_load·I` of an `n × d` sample matrix, centered first unless `center=False`.
#[pyfunction]
#[pyo3(signature = (samples, center = true, diag_load = 0.0))]
fn sample_covariance(samples: Rows, center: bool, diag_load: f64) -> PyResult<Rows> {
    let x = matrix(&samples)?;
    let ds = if center { Dataset::new(x).center() } else { Dataset::assume_zero_mean(x) };
    covariance_of(&ds, diag_load).map(|s| rows(&s)).map_err(to_py_err)
}

/// Lower eigenvalue bounds per dataset and the shared upper bound of the fitted precisions.
#[pyfunction]
#[pyo3(signature = (covariances, hyperparams, weights = None))]
fn eigen_bounds(covariances: Vec<Rows>, hyperparams: PyHyperparams, weights: Option<Vec<f64>>) -> PyResult<(Vec<f64>, f64)> {
    let cov = covariance_set(&covariances, weights)?;
    let b = cssl::solver::eigen_bounds(&cov, &hyperparams.0);
    Ok((b.lambda_min, b.lambda_max))
}

/// Common entries of independently fitted precisions by thresholding their spread at the
/// `eps0` quantile. Returns `(mask, eps)`.
#[pyfunction]
fn extract_common_threshold(precisions: Vec<Rows>, eps0: f64) -> PyResult<(Vec<Vec<bool>>, f64)> {
    let (cs, eps) = select::extract_common_threshold(&matrices(&precisions)?, eps0).map_err(to_py_err)?;
    Ok((mask_rows(&cs.support), eps))
}

/// Synthetic family of precision matrices sharing a common block structure, with samples.
#[pyfunction]
#[pyo3(signature = (d, n_datasets, seed = 0, samples = None, target_density = None))]
fn generate_family<'py>(
    py: Python<'py>,
    d: usize,
    n_datasets: usize,
    seed: u64,
    samples: Option<usize>,
    target_density: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = GenConfig::new(d, n_datasets, seed);
    cfg.n_per_dataset = samples;
    if let Some(t) = target_density {
        cfg.target_density = t;
    }
    let fam = synth::generate_family(&cfg).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("precisions", fam.precisions.iter().map(rows).collect::<Vec<_>>())?;
    out.set_item("datasets", fam.datasets.iter().map(|ds| rows(&ds.samples)).collect::<Vec<_>>())?;
    out.set_item("common_mask", mask_rows(&fam.common_mask))?;
    out.set_item("densities", fam.densities.clone())?;
    out.set_item("warnings", fam.warnings.clone())?;
    Ok(out)
}

/// Weighted precision, recall and F of common-entry detection, plus the zero-pattern F0.
#[pyfunction]
fn weighted_prf<'py>(py: Python<'py>, estimates: Vec<Rows>, truth: Vec<Rows>, eps: f64) -> PyResult<Bound<'py, PyDict>> {
    let m = eval::weighted_prf(&matrices(&estimates)?, &matrices(&truth)?, eps).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("precision", m.precision)?;
    out.set_item("recall", m.recall)?;
    out.set_item("f_measure", m.f_measure)?;
    out.set_item("f0_measure", m.f0_measure)?;
    Ok(out)
}

/// Per-variable anomaly scores between two precision matrices.
#[pyfunction]
fn anomaly_scores(a: Rows, b: Rows) -> PyResult<Vec<f64>> {
    eval::anomaly_score_pair(&matrix(&a)?, &matrix(&b)?).map(|r| r.scores).map_err(to_py_err)
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    eval::roc_auc(&scores, &labels).map_err(to_py_err)
}

#[pymodule]
fn pycssl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("NotConvergedError", m.py().get_type::<NotConvergedError>())?;
    m.add_class::<PyHyperparams>()?;
    m.add_class::<PySolverConfig>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(sample_covariance, m)?)?;
    m.add_function(wrap_pyfunction!(eigen_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(extract_common_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(generate_family, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_prf, m)?)?;
    m.add_function(wrap_pyfunction!(anomaly_scores, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    Ok(())
}
