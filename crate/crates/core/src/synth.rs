//! Families of sparse precision matrices that share a planted common substructure.
//!
//! Blocks `Ψ_k = V D Vᵀ` come from random Givens rotations of the identity. Each family
//! member couples the blocks through `Φ = Ṽ₁ Ξ Ṽ₂ᵀ`, built from eigenvectors with large
//! eigenvalues, so the block-diagonal part is shared while the off-block part is individual.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use rand::SeedableRng;

use crate::error::{validation, CsslError, Result};
use crate::io;
use crate::linalg::{self, Mask, Matrix};
use crate::types::Dataset;

pub const RNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9), seed_from_u64(seed); stream 0 builds the shared blocks and shared index sets, stream 2i+1 couples matrix i, stream 2i+2 samples dataset i";

const CLEAN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub d: usize,
    pub n_datasets: usize,
    pub blocks: usize,
    pub coupling_rank: usize,
    pub target_density: f64,
    pub eig_floor: f64,
    pub seed: u64,
    /// Defaults to `5d`.
    pub n_per_dataset: Option<usize>,
    /// Couple every matrix through the same eigenvector indices, redrawing only the strengths.
    #[serde(default = "default_true")]
    pub shared_index_sets: bool,
}

fn default_true() -> bool {
    true
}

impl GenConfig {
    /// Two blocks below d = 50, three below 100, four otherwise.
    pub fn new(d: usize, n_datasets: usize, seed: u64) -> Self {
        let blocks = if d < 50 { 2 } else if d < 100 { 3 } else { 4 };
        GenConfig {
            d,
            n_datasets,
            blocks: blocks.min(d.max(1)),
            coupling_rank: 2,
            target_density: 0.15,
            eig_floor: 0.05,
            seed,
            n_per_dataset: None,
            shared_index_sets: true,
        }
    }

    pub fn samples_per_dataset(&self) -> usize {
        self.n_per_dataset.unwrap_or(5 * self.d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_datasets == 0 {
            return validation("d and n_datasets must be positive");
        }
        if self.blocks == 0 || self.blocks > self.d {
            return validation(format!("blocks must lie in 1..={}", self.d));
        }
        if self.coupling_rank == 0 {
            return validation("coupling_rank must be >= 1");
        }
        if !(self.target_density > 0.0 && self.target_density < 1.0) {
            return validation("target_density must lie in (0, 1)");
        }
        if !(self.eig_floor > 0.0 && self.eig_floor < 1.0) {
            return validation("eig_floor must lie in (0, 1)");
        }
        Ok(())
    }

    /// Sizes of the diagonal blocks, as even as possible.
    pub fn block_sizes(&self) -> Vec<usize> {
        let base = self.d / self.blocks;
        let extra = self.d % self.blocks;
        (0..self.blocks).map(|k| base + usize::from(k < extra)).collect()
    }
}

/// Fraction of strict upper-triangle entries with `|x| > tol`.
pub fn offdiag_density(m: &Matrix, tol: f64) -> f64 {
    let d = m.nrows();
    if d < 2 {
        return 0.0;
    }
    let mut nnz = 0usize;
    for c in 1..d {
        for r in 0..c {
            if m[(r, c)].abs() > tol {
                nnz += 1;
            }
        }
    }
    nnz as f64 / (d * (d - 1) / 2) as f64
}

fn clean(m: &mut Matrix) {
    m.apply(|v| {
        if v.abs() < CLEAN_TOL {
            *v = 0.0;
        }
    });
    linalg::symmetrize(m);
}

/// Left-multiplies `v` by the rotation acting on rows `j`, `k`.
pub fn rotate_rows(v: &mut Matrix, j: usize, k: usize, theta: f64) {
    let (s, c) = theta.sin_cos();
    for col in 0..v.ncols() {
        let a = v[(j, col)];
        let b = v[(k, col)];
        v[(j, col)] = c * a - s * b;
        v[(k, col)] = s * a + c * b;
    }
}

fn random_rotation(dim: usize, rng: &mut ChaCha8Rng) -> (usize, usize, f64) {
    let pair = sample(rng, dim, 2);
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    (pair.index(0), pair.index(1), theta)
}

fn fill(m: &Matrix) -> f64 {
    m.iter().filter(|v| v.abs() > CLEAN_TOL).count() as f64 / m.len().max(1) as f64
}

/// Applies random Givens rotations to the identity until the fraction of nonzero entries
/// reaches `target_col_density` or the budget of `20·dim²` rotations runs out.
pub fn givens_sparse_orthonormal(dim: usize, target_col_density: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let mut v = Matrix::identity(dim, dim);
    if dim < 2 {
        return v;
    }
    for _ in 0..20 * dim * dim {
        if fill(&v) >= target_col_density {
            break;
        }
        let (j, k, theta) = random_rotation(dim, rng);
        rotate_rows(&mut v, j, k, theta);
    }
    v
}

/// A sparse precision matrix with its eigendecomposition `matrix = vectors · diag(values) · vectorsᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePrecision {
    pub matrix: Matrix,
    pub vectors: Matrix,
    pub values: Vec<f64>,
    pub density: f64,
    pub reached_target: bool,
}

/// A block being grown one rotation at a time, with `lam = V D Vᵀ` kept in step.
#[derive(Debug, Clone)]
struct Grower {
    v: Matrix,
    lam: Matrix,
    values: Vec<f64>,
    nnz: usize,
}

impl Grower {
    fn new(dim: usize, eig_floor: f64, rng: &mut ChaCha8Rng) -> Self {
        let values: Vec<f64> = (0..dim).map(|_| rng.random_range(eig_floor..=1.0)).collect();
        let lam = Matrix::from_diagonal(&linalg::Vector::from_vec(values.clone()));
        Grower { v: Matrix::identity(dim, dim), lam, values, nnz: 0 }
    }

    fn dim(&self) -> usize {
        self.values.len()
    }

    fn rotate(&mut self, rng: &mut ChaCha8Rng) {
        let (j, k, theta) = random_rotation(self.dim(), rng);
        rotate_rows(&mut self.v, j, k, theta);
        rotate_rows(&mut self.lam, j, k, theta);
        self.lam.transpose_mut();
        rotate_rows(&mut self.lam, j, k, theta);
        let d = self.dim();
        self.nnz = (1..d).map(|c| (0..c).filter(|&r| self.lam[(r, c)].abs() > CLEAN_TOL).count()).sum();
    }

    /// Mean support size of the eigenvectors eligible for coupling.
    fn pool_support(&self, b: usize) -> f64 {
        let pool = top_pool(&self.values, b);
        let total: usize = pool
            .iter()
            .map(|&m| self.v.column(m).iter().filter(|x| x.abs() > CLEAN_TOL).count())
            .sum();
        total as f64 / pool.len().max(1) as f64
    }

    fn finish(self, reached: bool) -> SparsePrecision {
        let mut matrix = linalg::recompose(&self.v, &linalg::Vector::from_vec(self.values.clone()));
        clean(&mut matrix);
        let density = offdiag_density(&matrix, 0.0);
        SparsePrecision { matrix, vectors: self.v, values: self.values, density, reached_target: reached }
    }
}

/// Rotates the blocks round-robin until `score` reaches `target`, keeping whichever of the
/// last two states lands closer. Returns whether the target was reached within `20·dim²` rotations.
fn grow(blocks: &mut [Grower], target: f64, score: impl Fn(&[Grower]) -> f64, rng: &mut ChaCha8Rng) -> bool {
    let dim: usize = blocks.iter().map(Grower::dim).sum();
    let active: Vec<usize> = (0..blocks.len()).filter(|&k| blocks[k].dim() >= 2).collect();
    if active.is_empty() {
        return false;
    }
    let mut current = score(blocks);
    if current >= target {
        return true;
    }
    for step in 0..20 * dim * dim {
        let k = active[step % active.len()];
        let before = blocks[k].clone();
        blocks[k].rotate(rng);
        let next = score(blocks);
        if next >= target {
            if next - target > target - current {
                blocks[k] = before;
            }
            return true;
        }
        current = next;
    }
    false
}

/// `V D Vᵀ` with eigenvalues drawn from `U([eig_floor, 1])` and `V` grown one rotation at a
/// time; keeps whichever rotation count lands closest to the requested density.
pub fn sparse_precision(dim: usize, density: f64, eig_floor: f64, rng: &mut ChaCha8Rng) -> SparsePrecision {
    let mut block = [Grower::new(dim, eig_floor, rng)];
    let pairs = (dim * dim.saturating_sub(1) / 2).max(1) as f64;
    let reached = dim < 2 || grow(&mut block, density, |b| b[0].nnz as f64 / pairs, rng);
    let [block] = block;
    block.finish(reached)
}

/// Eigenpairs tracked alongside a (possibly coupled) precision matrix.
#[derive(Debug, Clone)]
struct Spectral {
    matrix: Matrix,
    vectors: Matrix,
    values: Vec<f64>,
}

impl From<&SparsePrecision> for Spectral {
    fn from(s: &SparsePrecision) -> Self {
        Spectral { matrix: s.matrix.clone(), vectors: s.vectors.clone(), values: s.values.clone() }
    }
}

/// Indices of the `max(⌈dim/3⌉, b)` largest eigenvalues.
fn top_pool(values: &[f64], b: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &c| values[c].partial_cmp(&values[a]).expect("finite eigenvalues").then(a.cmp(&c)));
    let keep = values.len().div_ceil(3).max(b).min(values.len());
    idx.truncate(keep);
    idx
}

/// One sampled coupling: eigenvector indices in each block and the normalized strengths ξ₀.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub xi0: Vec<f64>,
}

fn draw_indices(v1: &[f64], v2: &[f64], b: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let p1 = top_pool(v1, b);
    let p2 = top_pool(v2, b);
    let b = b.min(p1.len()).min(p2.len());
    let left = sample(rng, p1.len(), b).into_iter().map(|k| p1[k]).collect();
    let right = sample(rng, p2.len(), b).into_iter().map(|k| p2[k]).collect();
    (left, right)
}

fn draw_strengths(b: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..b)
        .map(|_| {
            let mag = rng.random_range(0.5..=0.8);
            if rng.random_bool(0.5) { mag } else { -mag }
        })
        .collect()
}

fn draw_coupling(v1: &[f64], v2: &[f64], b: usize, rng: &mut ChaCha8Rng) -> Coupling {
    let (left, right) = draw_indices(v1, v2, b, rng);
    let xi0 = draw_strengths(left.len(), rng);
    Coupling { left, right, xi0 }
}

/// `[[Ψ₁, Φ], [Φᵀ, Ψ₂]]` with `Φ = Σ_m ξ_m v_{1,π₁m} v_{2,π₂m}ᵀ` and `ξ = ξ₀√(σ₁σ₂)`.
fn couple(a: &Spectral, b: &Spectral, coupling: &Coupling) -> Result<Spectral> {
    let n1 = a.matrix.nrows();
    let n2 = b.matrix.nrows();
    let dim = n1 + n2;
    let mut phi = Matrix::zeros(n1, n2);
    let mut vectors = Matrix::zeros(dim, dim);
    vectors.view_mut((0, 0), (n1, n1)).copy_from(&a.vectors);
    vectors.view_mut((n1, n1), (n2, n2)).copy_from(&b.vectors);
    let mut values: Vec<f64> = a.values.iter().chain(&b.values).cloned().collect();
    let mut det_factor = 1.0;
    for ((&l, &r), &x0) in coupling.left.iter().zip(&coupling.right).zip(&coupling.xi0) {
        let (s1, s2) = (a.values[l], b.values[r]);
        let xi = x0 * (s1 * s2).sqrt();
        det_factor *= s1 - xi * xi / s2;
        let u = a.vectors.column(l);
        let w = b.vectors.column(r);
        phi += u * w.transpose() * xi;
        // the pair spans a 2×2 block [[σ₁, ξ], [ξ, σ₂]] in the eigenbasis
        let half_tr = 0.5 * (s1 + s2);
        let disc = (0.25 * (s1 - s2) * (s1 - s2) + xi * xi).sqrt();
        let (e_hi, e_lo) = (half_tr + disc, half_tr - disc);
        let angle = 0.5 * (2.0 * xi).atan2(s1 - s2);
        let (sn, cs) = angle.sin_cos();
        let cl = vectors.column(l).clone_owned();
        let cr = vectors.column(n1 + r).clone_owned();
        vectors.set_column(l, &(&cl * cs + &cr * sn));
        vectors.set_column(n1 + r, &(&cr * cs - &cl * sn));
        values[l] = e_hi;
        values[n1 + r] = e_lo;
    }
    if !(det_factor > 0.0) {
        return Err(CsslError::Domain("coupling broke positive definiteness".into()));
    }
    let mut matrix = Matrix::zeros(dim, dim);
    matrix.view_mut((0, 0), (n1, n1)).copy_from(&a.matrix);
    matrix.view_mut((n1, n1), (n2, n2)).copy_from(&b.matrix);
    let mut phi_clean = phi;
    phi_clean.apply(|v| {
        if v.abs() < CLEAN_TOL {
            *v = 0.0;
        }
    });
    matrix.view_mut((0, n1), (n1, n2)).copy_from(&phi_clean);
    matrix.view_mut((n1, 0), (n2, n1)).copy_from(&phi_clean.transpose());
    if !linalg::is_pd(&matrix) {
        return Err(CsslError::Domain("coupled matrix is not positive definite".into()));
    }
    Ok(Spectral { matrix, vectors, values })
}

/// Couples two blocks with `b` random eigenvector pairs. Returns the block matrix and the
/// support of the off-diagonal block.
pub fn couple_blocks(psi1: &SparsePrecision, psi2: &SparsePrecision, b: usize, rng: &mut ChaCha8Rng) -> Result<(Matrix, Mask)> {
    let coupling = draw_coupling(&psi1.values, &psi2.values, b, rng);
    let out = couple(&psi1.into(), &psi2.into(), &coupling)?;
    let n1 = psi1.matrix.nrows();
    let dim = out.matrix.nrows();
    let mask = Mask::from_fn(dim, dim, |r, c| (r < n1) != (c < n1) && out.matrix[(r, c)] != 0.0);
    Ok((out.matrix, mask))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFamily {
    pub precisions: Vec<Matrix>,
    pub common_mask: Mask,
    pub datasets: Vec<Dataset>,
    pub base: Matrix,
    pub densities: Vec<f64>,
    /// Largest `|VᵀV − I|` entry over the block eigenbases.
    pub orthonormality_residual: f64,
    pub warnings: Vec<String>,
}

impl SyntheticFamily {
    pub fn mean_density(&self) -> f64 {
        self.densities.iter().sum::<f64>() / self.densities.len().max(1) as f64
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Expected off-diagonal density of a family member: shared block entries plus, for each
/// coupling, `b` outer products of eigenvector supports.
fn expected_density(blocks: &[Grower], b: usize) -> f64 {
    let d: usize = blocks.iter().map(Grower::dim).sum();
    let pairs = (d * d.saturating_sub(1) / 2).max(1) as f64;
    let shared: usize = blocks.iter().map(|g| g.nnz).sum();
    let mut coupled = 0.0;
    let mut acc_support = blocks[0].pool_support(b);
    for (k, g) in blocks.iter().enumerate().skip(1) {
        let support = g.pool_support(b);
        coupled += b as f64 * acc_support * support;
        acc_support = (acc_support * k as f64 + support) / (k + 1) as f64;
    }
    (shared as f64 + coupled) / pairs
}

pub fn generate_family(config: &GenConfig) -> Result<SyntheticFamily> {
    config.validate()?;
    let mut warnings = Vec::new();
    let mut structure_rng = stream(config.seed, 0);
    let mut growers: Vec<Grower> = config
        .block_sizes()
        .iter()
        .map(|&m| Grower::new(m, config.eig_floor, &mut structure_rng))
        .collect();
    let b = config.coupling_rank;
    let reached = grow(&mut growers, config.target_density, |g| expected_density(g, b), &mut structure_rng);
    if !reached {
        warnings.push(format!(
            "expected density {:.3} stays below the requested {:.3} within the rotation budget",
            expected_density(&growers, b),
            config.target_density
        ));
    }
    let blocks: Vec<SparsePrecision> = growers.into_iter().map(|g| g.finish(reached)).collect();
    let d = config.d;
    let mut base = Matrix::zeros(d, d);
    let mut offset = 0;
    for b in &blocks {
        let m = b.matrix.nrows();
        base.view_mut((offset, offset), (m, m)).copy_from(&b.matrix);
        offset += m;
    }
    let common_mask = base.map(|v| v != 0.0);
    let orthonormality_residual = blocks
        .iter()
        .map(|b| {
            let m = b.vectors.nrows();
            (b.vectors.transpose() * &b.vectors - Matrix::identity(m, m)).amax()
        })
        .fold(0.0, f64::max);

    // coupling step k joins blocks 0..=k with block k+1; shared index sets rank by the uncoupled spectrum
    let shared: Option<Vec<(Vec<usize>, Vec<usize>)>> = config.shared_index_sets.then(|| {
        let mut acc_values = blocks[0].values.clone();
        blocks[1..]
            .iter()
            .map(|next| {
                let idx = draw_indices(&acc_values, &next.values, b, &mut structure_rng);
                acc_values.extend(&next.values);
                idx
            })
            .collect()
    });
    let mut precisions = Vec::with_capacity(config.n_datasets);
    let mut datasets = Vec::with_capacity(config.n_datasets);
    for i in 0..config.n_datasets as u64 {
        let mut rng = stream(config.seed, 2 * i + 1);
        let mut acc = Spectral::from(&blocks[0]);
        for (k, next) in blocks[1..].iter().enumerate() {
            let next = Spectral::from(next);
            let coupling = match &shared {
                Some(sets) => {
                    let (left, right) = sets[k].clone();
                    let xi0 = draw_strengths(left.len(), &mut rng);
                    Coupling { left, right, xi0 }
                }
                None => draw_coupling(&acc.values, &next.values, b, &mut rng),
            };
            acc = couple(&acc, &next, &coupling)?;
        }
        let mut sample_rng = stream(config.seed, 2 * i + 2);
        datasets.push(sample_gaussian(&acc.matrix, config.samples_per_dataset(), &mut sample_rng)?);
        precisions.push(acc.matrix);
    }
    let densities = precisions.iter().map(|m| offdiag_density(m, 0.0)).collect();
    Ok(SyntheticFamily { precisions, common_mask, datasets, base, densities, orthonormality_residual, warnings })
}

/// `n` draws from `N(0, Λ⁻¹)`: with `Λ = LLᵀ`, `x = L⁻ᵀz`.
pub fn sample_gaussian(precision: &Matrix, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let d = precision.nrows();
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| CsslError::Singular("precision is not positive definite".into()))?;
    let lt = chol.l().transpose();
    let z = Matrix::from_fn(d, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = lt
        .solve_upper_triangular(&z)
        .ok_or_else(|| CsslError::Singular("triangular solve failed".into()))?;
    Ok(Dataset::assume_zero_mean(x.transpose()))
}

#[derive(Debug, Clone, Serialize)]
struct FamilyMeta<'a> {
    config: &'a GenConfig,
    achieved_densities: &'a [f64],
    mean_density: f64,
    orthonormality_residual: f64,
    rng: &'static str,
    warnings: &'a [String],
}

/// Writes `precision_i.csv`, `dataset_i.csv`, `common_mask.csv` and `meta.json`.
pub fn write_family(dir: impl AsRef<Path>, family: &SyntheticFamily, config: &GenConfig) -> Result<()> {
    let dir = dir.as_ref();
    for (i, (p, ds)) in family.precisions.iter().zip(&family.datasets).enumerate() {
        io::write_matrix(dir.join(format!("precision_{}.csv", i + 1)), p)?;
        io::write_matrix(dir.join(format!("dataset_{}.csv", i + 1)), &ds.samples)?;
    }
    io::write_mask(dir.join("common_mask.csv"), &family.common_mask)?;
    let meta = FamilyMeta {
        config,
        achieved_densities: &family.densities,
        mean_density: family.mean_density(),
        orthonormality_residual: family.orthonormality_residual,
        rng: RNG_ALGORITHM,
        warnings: &family.warnings,
    };
    io::write_json(dir.join("meta.json"), &meta)
}
