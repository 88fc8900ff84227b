//! Command-line front end. Exit status 0 on success, 1 on invalid input, 2 when a fit stops
//! before converging (its best iterate is still written).

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::bench::{run_anomaly_experiment, run_structure_experiment, ExperimentPlan};
use crate::error::{validation, CsslError, Result};
use crate::eval::{anomaly_score_pair, weighted_prf};
use crate::io::{self, format_value, Manifest};
use crate::linalg::Matrix;
use crate::select::{extract_common_exact, extract_common_threshold, heuristic_hyperparams, CommonStructure, ScaleLine};
use crate::solver::{solve, SolveDiagnostics, SolverConfig};
use crate::synth::{generate_family, write_family, GenConfig};
use crate::types::{sample_covariance, CovarianceSet, Hyperparams, NormOrder, PrecisionDecomposition};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cssl", version, about = "Common substructure learning for sparse precision matrices")]
pub struct Cli {
    /// Worker threads for parallel sections; defaults to the available parallelism.
    #[arg(long, global = true, env = "CSSL_WORKERS")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic family with a planted common substructure.
    Generate(GenerateArgs),
    /// Fit common and individual precision parts to a covariance manifest.
    Fit(FitArgs),
    /// Extract the common substructure from fitted precision matrices.
    Extract(ExtractArgs),
    /// Score estimated precision matrices against the truth.
    Evaluate(EvaluateArgs),
    /// Per-variable correlation-anomaly scores between two precision matrices.
    Anomaly(AnomalyArgs),
    /// Run an experiment plan.
    Bench(BenchArgs),
    /// Print the scale line and the hyperparameters it gives for one α.
    Heuristic(HeuristicArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub d: usize,
    /// Number of datasets.
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long, default_value_t = 0.15)]
    pub density: f64,
    /// Samples per dataset; defaults to 5d.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Draw new coupling indices for every matrix instead of sharing one set.
    #[arg(long)]
    pub fresh_index_sets: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "inf")]
    Inf,
}

impl From<PArg> for NormOrder {
    fn from(p: PArg) -> Self {
        match p {
            PArg::One => NormOrder::One,
            PArg::Two => NormOrder::Two,
            PArg::Inf => NormOrder::Inf,
        }
    }
}

fn parse_gamma(s: &str) -> std::result::Result<f64, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" => Ok(f64::INFINITY),
        t => t.parse::<f64>().map_err(|e| format!("{s}: {e}")),
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub rho: Option<f64>,
    /// A number or "inf".
    #[arg(long, value_parser = parse_gamma)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum, default_value = "2")]
    pub p: PArg,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Derive ρ and γ from `--alpha` through the scale-line heuristic.
    #[arg(long)]
    pub heuristic: bool,
    /// Leave the diagonal out of both penalties.
    #[arg(long)]
    pub off_diagonal_only: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub eps_gap: Option<f64>,
    #[arg(long, default_value_t = 1e-5)]
    pub eps_pdgap: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1.0)]
    pub beta0: f64,
    #[arg(long)]
    pub fixed_beta: bool,
    /// Project the dual positions on the worker pool.
    #[arg(long)]
    pub parallel: bool,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            eps_gap: self.eps_gap,
            eps_pdgap: self.eps_pdgap,
            max_iter: self.max_iter,
            beta0: self.beta0,
            adapt_beta: !self.fixed_beta,
            parallel: self.parallel,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExtractMode {
    /// Entries where every individual part vanishes.
    Exact,
    /// Entries whose spread across datasets is within the ε₀ quantile.
    Threshold,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory holding `lambda_i.csv`, plus `theta.csv` and `omega_i.csv` for exact mode.
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    pub mode: ExtractMode,
    #[arg(long, default_value_t = 0.5)]
    pub eps0: f64,
    #[arg(long, default_value_t = crate::select::DEFAULT_ZERO_TOL)]
    pub zero_tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory holding `lambda_i.csv`.
    #[arg(long)]
    pub estimates: PathBuf,
    /// Directory holding `precision_i.csv`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Spread below which an estimated entry counts as common.
    #[arg(long, conflicts_with = "eps0")]
    pub eps: Option<f64>,
    /// Pick ε as this quantile of the estimated spreads instead.
    #[arg(long)]
    pub eps0: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnomalyArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// One 0/1 label per variable, comma or newline separated.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Experiment {
    Structure,
    Anomaly,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long, value_enum, default_value = "structure")]
    pub experiment: Experiment,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HeuristicArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "2")]
    pub p: PArg,
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    if let Some(w) = cli.workers {
        // the global pool can only be built once per process; later calls keep the first size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global();
    }
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}

fn dispatch(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::Generate(a) => cmd_generate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Anomaly(a) => cmd_anomaly(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Heuristic(a) => cmd_heuristic(a),
    }
}

fn cmd_generate(a: &GenerateArgs) -> Result<i32> {
    let mut config = GenConfig::new(a.d, a.n, a.seed);
    if let Some(b) = a.blocks {
        config.blocks = b;
    }
    config.target_density = a.density;
    config.n_per_dataset = a.samples;
    config.shared_index_sets = !a.fresh_index_sets;
    let family = generate_family(&config)?;
    write_family(&a.out, &family, &config)?;
    let covs = family.datasets.iter().map(|ds| sample_covariance(ds, 0.0)).collect::<Result<Vec<_>>>()?;
    let counts = family.datasets.iter().map(|ds| ds.n()).collect();
    Manifest::save(&a.out, &CovarianceSet::from_counts(covs, counts)?)?;
    for w in &family.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {} datasets to {}", family.precisions.len(), a.out.display());
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct FitReport<'a> {
    rho: f64,
    gamma: Option<f64>,
    p: NormOrder,
    penalize_diagonal: bool,
    alpha: Option<f64>,
    scale_line: Option<ScaleLine>,
    #[serde(flatten)]
    diagnostics: &'a SolveDiagnostics,
}

fn resolve_hyperparams(a: &FitArgs, cov: &CovarianceSet) -> Result<(Hyperparams, Option<ScaleLine>)> {
    let p = NormOrder::from(a.p);
    let (hp, line) = match (a.heuristic, a.alpha, a.rho, a.gamma) {
        (true, Some(alpha), None, None) => {
            let (line, hp) = heuristic_hyperparams(cov, alpha, p)?;
            (hp, Some(line))
        }
        (true, _, _, _) => return validation("--heuristic takes --alpha and no --rho/--gamma"),
        (false, None, Some(rho), Some(gamma)) => (Hyperparams::new(rho, gamma, p)?, None),
        _ => return validation("give either --rho and --gamma, or --alpha with --heuristic"),
    };
    Ok((if a.off_diagonal_only { hp.off_diagonal_only() } else { hp }, line))
}

fn write_decomposition(dir: &Path, dec: &PrecisionDecomposition) -> Result<()> {
    io::write_matrix(dir.join("theta.csv"), &dec.theta)?;
    for (i, o) in dec.omegas.iter().enumerate() {
        io::write_matrix(dir.join(format!("omega_{}.csv", i + 1)), o)?;
        io::write_matrix(dir.join(format!("lambda_{}.csv", i + 1)), &dec.lambda(i))?;
    }
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> Result<i32> {
    let cov = Manifest::load(&a.manifest)?;
    let (hp, line) = resolve_hyperparams(a, &cov)?;
    let (dec, diag, code) = match solve(&cov, &hp, &a.solver.config()) {
        Ok((dec, diag)) => (dec, diag, EXIT_OK),
        Err(CsslError::NotConverged { best, diagnostics, .. }) => (*best, *diagnostics, EXIT_NOT_CONVERGED),
        Err(e) => return Err(e),
    };
    write_decomposition(&a.out, &dec)?;
    let report = FitReport {
        rho: hp.rho,
        gamma: hp.gamma.is_finite().then_some(hp.gamma),
        p: hp.p,
        penalize_diagonal: hp.penalize_diagonal,
        alpha: a.alpha,
        scale_line: line,
        diagnostics: &diag,
    };
    io::write_json(a.out.join("diagnostics.json"), &report)?;
    if code == EXIT_NOT_CONVERGED {
        eprintln!(
            "warning: stopped after {} iterations with duality gap {:e}; best iterate written",
            diag.iterations, diag.duality_gap
        );
    }
    Ok(code)
}

/// Reads `prefix_1.csv`, `prefix_2.csv`, … until the next index is missing.
pub fn read_indexed(dir: &Path, prefix: &str) -> Result<Vec<Matrix>> {
    let mut out = Vec::new();
    loop {
        let path = dir.join(format!("{prefix}_{}.csv", out.len() + 1));
        if !path.exists() {
            break;
        }
        out.push(io::read_matrix(&path)?);
    }
    if out.is_empty() {
        return validation(format!("no {prefix}_1.csv in {}", dir.display()));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct ExtractReport {
    mode: &'static str,
    eps: Option<f64>,
    edges: usize,
}

fn edges_csv(common: &CommonStructure) -> String {
    let mut out = String::from("j,k,value\n");
    for e in common.edges() {
        let _ = writeln!(out, "{},{},{}", e.j + 1, e.k + 1, format_value(e.value));
    }
    out
}

fn cmd_extract(a: &ExtractArgs) -> Result<i32> {
    let (common, eps, mode) = match a.mode {
        ExtractMode::Exact => {
            let theta = io::read_matrix(a.dir.join("theta.csv"))?;
            let omegas = read_indexed(&a.dir, "omega")?;
            let dec = PrecisionDecomposition { theta, omegas };
            (extract_common_exact(&dec, a.zero_tol), None, "exact")
        }
        ExtractMode::Threshold => {
            let lambdas = read_indexed(&a.dir, "lambda")?;
            let (common, eps) = extract_common_threshold(&lambdas, a.eps0)?;
            (common, Some(eps), "threshold")
        }
    };
    io::write_matrix(a.out.join("common_theta.csv"), &common.theta_hat)?;
    io::write_mask(a.out.join("common_mask.csv"), &common.support)?;
    io::write_text(a.out.join("edges.csv"), &edges_csv(&common))?;
    io::write_json(a.out.join("extract.json"), &ExtractReport { mode, eps, edges: common.edges().len() })?;
    Ok(EXIT_OK)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<i32> {
    let estimates = read_indexed(&a.estimates, "lambda")?;
    let truth = read_indexed(&a.truth, "precision")?;
    let eps = match (a.eps, a.eps0) {
        (Some(e), _) => e,
        (None, Some(q)) => extract_common_threshold(&estimates, q)?.1.next_up(),
        (None, None) => crate::bench::CSSL_COMMON_EPS,
    };
    let metrics = weighted_prf(&estimates, &truth, eps)?;
    let text = serde_json::to_string_pretty(&metrics).map_err(|e| CsslError::Parse(e.to_string()))? + "\n";
    match &a.out {
        Some(path) => io::write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(EXIT_OK)
}

fn parse_labels(text: &str) -> Result<Vec<bool>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| match t {
            "0" => Ok(false),
            "1" => Ok(true),
            other => validation(format!("labels must be 0 or 1, found {other:?}")),
        })
        .collect()
}

fn cmd_anomaly(a: &AnomalyArgs) -> Result<i32> {
    let lam_a = io::read_matrix(&a.a)?;
    let lam_b = io::read_matrix(&a.b)?;
    let mut report = anomaly_score_pair(&lam_a, &lam_b)?;
    if let Some(path) = &a.labels {
        report = report.with_labels(&parse_labels(&io::read_text(path)?)?)?;
    }
    report.write_csv(&a.out)?;
    if let Some(auc) = report.auc {
        println!("auc {}", format_value(auc));
    }
    Ok(EXIT_OK)
}

fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    let plan: ExperimentPlan = io::read_json(&a.plan)?;
    match a.experiment {
        Experiment::Structure => {
            let res = run_structure_experiment(&plan)?;
            res.write(&a.out)?;
            for s in &res.summary {
                println!(
                    "{} d={} F={:.3} ({:.3}) F0={:.3} flagged={}",
                    s.method, s.d, s.f_measure.0, s.f_measure.1, s.f0_measure.0, s.flagged
                );
            }
        }
        Experiment::Anomaly => {
            let res = run_anomaly_experiment(&plan)?;
            res.write(&a.out)?;
            for s in &res.summary {
                println!(
                    "{} d={} median best AUC={:.3} ({:.3} / {:.3}) flagged={}",
                    s.method, s.d, s.median_best_auc, s.q25_best_auc, s.q75_best_auc, s.flagged
                );
            }
        }
    }
    Ok(EXIT_OK)
}

fn cmd_heuristic(a: &HeuristicArgs) -> Result<i32> {
    let cov = Manifest::load(&a.manifest)?;
    let (line, hp) = heuristic_hyperparams(&cov, a.alpha, a.p.into())?;
    println!("s0 {}", format_value(line.s0));
    println!("s1 {}", format_value(line.s1));
    println!("rho {}", format_value(hp.rho));
    println!("gamma {}", format_value(hp.gamma));
    Ok(EXIT_OK)
}
