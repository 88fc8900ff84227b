//! Structure-recovery metrics and the per-variable correlation-anomaly score.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{validation, CsslError, Result};
use crate::io;
use crate::linalg::{self, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureMetrics {
    pub wtp: f64,
    pub wfp: f64,
    pub wfn: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub f0_measure: f64,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn check_shapes(estimates: &[Matrix], truth: &[Matrix]) -> Result<usize> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return validation(format!("{} estimates for {} true matrices", estimates.len(), truth.len()));
    }
    let d = truth[0].nrows();
    for m in estimates.iter().chain(truth) {
        if m.nrows() != d || m.ncols() != d {
            return validation(format!("expected {d}x{d} matrices, found {}x{}", m.nrows(), m.ncols()));
        }
    }
    Ok(d)
}

fn spread(ms: &[Matrix], r: usize, c: usize) -> f64 {
    let (lo, hi) = ms
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| (lo.min(m[(r, c)]), hi.max(m[(r, c)])));
    hi - lo
}

/// Weighted true/false positives and negatives of common-entry detection over `j < j'`.
///
/// An estimated entry counts as detected common when its spread across the estimates is
/// strictly below `eps` and it is nonzero in at least one estimate. Each entry is weighted
/// by its largest true magnitude. The F₀-measure of the zero pattern is filled in as well.
pub fn weighted_prf(estimates: &[Matrix], truth: &[Matrix], eps: f64) -> Result<StructureMetrics> {
    let d = check_shapes(estimates, truth)?;
    if truth.len() < 2 {
        return validation("weighted metrics need at least two matrices");
    }
    let (mut wtp, mut wfp, mut wfn) = (0.0, 0.0, 0.0);
    for c in 1..d {
        for r in 0..c {
            let weight = truth.iter().map(|m| m[(r, c)].abs()).fold(0.0, f64::max);
            let detected_common = spread(estimates, r, c) < eps;
            let nonzero = estimates.iter().any(|m| m[(r, c)] != 0.0);
            let truly_common = spread(truth, r, c) == 0.0;
            match (detected_common && nonzero, truly_common) {
                (true, true) => wtp += weight,
                (true, false) => wfp += weight,
                (false, true) => wfn += weight,
                (false, false) => {}
            }
        }
    }
    let precision = ratio(wtp, wtp + wfp);
    let recall = ratio(wtp, wtp + wfn);
    Ok(StructureMetrics {
        wtp,
        wfp,
        wfn,
        precision,
        recall,
        f_measure: harmonic(precision, recall),
        f0_measure: f0_measure(estimates, truth)?,
    })
}

/// `2TP / (2TP + FP + FN)` where TP counts entries that are zero in both truth and estimate.
pub fn f0_measure(estimates: &[Matrix], truth: &[Matrix]) -> Result<f64> {
    let d = check_shapes(estimates, truth)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (est, tru) in estimates.iter().zip(truth) {
        for c in 1..d {
            for r in 0..c {
                match (tru[(r, c)] == 0.0, est[(r, c)] == 0.0) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
        }
    }
    let den = 2 * tp + fp + fn_;
    Ok(if den == 0 { 1.0 } else { (2 * tp) as f64 / den as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub scores: Vec<f64>,
    /// `(d_j^AB, d_j^BA)` per variable.
    pub per_direction: Vec<(f64, f64)>,
    pub auc: Option<f64>,
}

impl AnomalyReport {
    pub fn with_labels(mut self, labels: &[bool]) -> Result<Self> {
        self.auc = Some(roc_auc(&self.scores, labels)?);
        Ok(self)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,d_ab,d_ba,a\n");
        for (j, ((ab, ba), a)) in self.per_direction.iter().zip(&self.scores).enumerate() {
            let _ = writeln!(out, "{},{},{},{}", j + 1, io::format_value(*ab), io::format_value(*ba), io::format_value(*a));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_text(path, &self.to_csv())
    }
}

struct Gaussian<'a> {
    lam: &'a Matrix,
    cov: Matrix,
}

impl<'a> Gaussian<'a> {
    fn new(lam: &'a Matrix, which: &str) -> Result<Self> {
        let cov = linalg::inverse_pd(lam)
            .ok_or_else(|| CsslError::Domain(format!("{which} is not positive definite")))?;
        Ok(Gaussian { lam, cov })
    }
}

/// Expected KL divergence, over `x_rest ~ a`, between the conditionals of `x_j` given the rest.
///
/// Given the rest, `x_j` has precision `λ_j` and mean `-lᵀx_rest/λ_j`, so with
/// `δ = l_a/λ_a − l_b/λ_b` the divergence is
/// `½[ln(λ_a/λ_b) + λ_b/λ_a − 1] + ½λ_b·δᵀ V_a δ`, `V_a` the marginal covariance of the rest.
fn conditional_kl(a: &Gaussian, b: &Gaussian, j: usize, rest: &[usize]) -> f64 {
    let (la, lb) = (a.lam[(j, j)], b.lam[(j, j)]);
    let delta: Vec<f64> = rest.iter().map(|&k| a.lam[(k, j)] / la - b.lam[(k, j)] / lb).collect();
    let mut quad = 0.0;
    for (x, &k) in delta.iter().zip(rest) {
        for (y, &m) in delta.iter().zip(rest) {
            quad += x * a.cov[(k, m)] * y;
        }
    }
    0.5 * ((la / lb).ln() + lb / la - 1.0) + 0.5 * lb * quad
}

pub fn anomaly_score_pair(lam_a: &Matrix, lam_b: &Matrix) -> Result<AnomalyReport> {
    if lam_a.shape() != lam_b.shape() || !lam_a.is_square() {
        return validation("anomaly scoring needs two square matrices of the same size");
    }
    let a = Gaussian::new(lam_a, "first precision matrix")?;
    let b = Gaussian::new(lam_b, "second precision matrix")?;
    let d = lam_a.nrows();
    let mut scores = Vec::with_capacity(d);
    let mut per_direction = Vec::with_capacity(d);
    for j in 0..d {
        let rest: Vec<usize> = (0..d).filter(|&k| k != j).collect();
        let ab = conditional_kl(&a, &b, j, &rest);
        let ba = conditional_kl(&b, &a, j, &rest);
        per_direction.push((ab, ba));
        scores.push(ab.max(ba));
    }
    Ok(AnomalyReport { scores, per_direction, auc: None })
}

/// Area under the ROC curve as the Mann-Whitney rank statistic, ties counting one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return validation(format!("{} scores for {} labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return validation("scores contain NaN");
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return validation("AUC needs at least one positive and one negative label");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&x, &y| scores[x].total_cmp(&scores[y]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = 0.5 * ((start + 1) + end) as f64;
        rank_sum += mid_rank * order[start..end].iter().filter(|&&k| labels[k]).count() as f64;
        start = end;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}
