//! Reference implementations used only as test oracles. They share no code with the library
//! beyond the matrix type.

#![allow(dead_code)]

use cssl::{linalg, Matrix, NormOrder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn norm(v: &[f64], q: NormOrder) -> f64 {
    match q {
        NormOrder::One => v.iter().map(|x| x.abs()).sum(),
        NormOrder::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        NormOrder::Inf => v.iter().fold(0.0, |a: f64, x| a.max(x.abs())),
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Root of a nonincreasing function on `[lo, hi]`: a uniform grid scan brackets the sign change,
/// bisection then refines it.
pub fn grid_root(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> f64 {
    let step = (hi - lo) / (points - 1) as f64;
    let mut a = lo;
    let mut b = hi;
    let mut prev = f(lo);
    if prev <= 0.0 {
        return lo;
    }
    for k in 1..points {
        let x = lo + step * k as f64;
        let v = f(x);
        if v <= 0.0 {
            a = x - step;
            b = x;
            break;
        }
        prev = v;
    }
    let _ = prev;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Simplex knapsack by line search over ν.
pub fn simplex_by_grid(a: &[f64], gamma: f64, points: usize) -> Vec<f64> {
    let hi = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = hi - gamma - 1.0;
    let nu = grid_root(|nu| a.iter().map(|v| (v - nu).max(0.0)).sum::<f64>() - gamma, lo, hi, points);
    a.iter().map(|v| (v - nu).max(0.0)).collect()
}

/// Box knapsack by line search over ν.
pub fn box_by_grid(y0: &[f64], zeta: f64, gamma: f64, points: usize) -> Vec<f64> {
    let lo = y0.iter().cloned().fold(f64::INFINITY, f64::min) - gamma - 1.0;
    let hi = y0.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + gamma + 1.0;
    let nu = grid_root(|nu| y0.iter().map(|v| (v - nu).clamp(-gamma, gamma)).sum::<f64>() - zeta, lo, hi, points);
    y0.iter().map(|v| (v - nu).clamp(-gamma, gamma)).collect()
}

/// Projection onto the ℓ1 ball by bisection on the threshold.
pub fn l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    if norm(v, NormOrder::One) <= radius {
        return v.to_vec();
    }
    let hi = v.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let (mut a, mut b) = (0.0, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let s: f64 = v.iter().map(|x| (x.abs() - m).max(0.0)).sum();
        if s > radius {
            a = m;
        } else {
            b = m;
        }
    }
    let t = 0.5 * (a + b);
    v.iter().map(|x| x.signum() * (x.abs() - t).max(0.0)).collect()
}

pub fn q_ball(v: &[f64], gamma: f64, q: NormOrder) -> Vec<f64> {
    match q {
        NormOrder::One => l1_ball(v, gamma),
        NormOrder::Two => {
            let n = norm(v, NormOrder::Two);
            if n <= gamma { v.to_vec() } else { v.iter().map(|x| x * gamma / n).collect() }
        }
        NormOrder::Inf => v.iter().map(|x| x.clamp(-gamma, gamma)).collect(),
    }
}

pub fn slab(v: &[f64], rho: f64) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s.abs() <= rho {
        return v.to_vec();
    }
    let shift = (s - rho * s.signum()) / v.len() as f64;
    v.iter().map(|x| x - shift).collect()
}

/// Projection onto `{|1ᵀu| ≤ ρ} ∩ {‖u‖_q ≤ γ}` through its one-dimensional dual: with a
/// multiplier μ on the sum, the minimizer is the ball projection of `y0 − μ1`, and `1ᵀy(μ)`
/// is nonincreasing in μ, so the active μ is found by line search.
pub fn multiplier_search(y0: &[f64], rho: f64, gamma: f64, q: NormOrder) -> Vec<f64> {
    let at = |mu: f64| -> Vec<f64> {
        let shifted: Vec<f64> = y0.iter().map(|v| v - mu).collect();
        if gamma.is_finite() { q_ball(&shifted, gamma, q) } else { shifted }
    };
    let total = |mu: f64| at(mu).iter().sum::<f64>();
    let s0 = total(0.0);
    if s0.abs() <= rho {
        return at(0.0);
    }
    let span = y0.iter().fold(0.0_f64, |a, v| a.max(v.abs())) + rho + 1.0;
    let mu = if s0 > rho {
        grid_root(|m| total(m) - rho, 0.0, span, 100_000)
    } else {
        -grid_root(|m| -rho - total(-m), 0.0, span, 100_000)
    };
    at(mu)
}

pub fn random_spd(d: usize, samples: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let a = Matrix::from_fn(d, samples, |_, _| rng.random_range(-1.0..1.0));
    let mut s = &a * a.transpose() / samples as f64;
    for j in 0..d {
        s[(j, j)] += 0.05;
    }
    linalg::symmetrize(&mut s);
    s
}

/// Entrywise `sgn(x)·max(|x| − τ, 0)`.
fn soft(x: f64, tau: f64) -> f64 {
    x.signum() * (x.abs() - tau).max(0.0)
}

/// Proximal operator of `τ‖·‖_p` on one N-vector.
fn group_prox(v: &[f64], tau: f64, p: NormOrder) -> Vec<f64> {
    match p {
        NormOrder::One => v.iter().map(|x| soft(*x, tau)).collect(),
        NormOrder::Two => {
            let n = norm(v, NormOrder::Two);
            if n <= tau { vec![0.0; v.len()] } else { v.iter().map(|x| x * (1.0 - tau / n)).collect() }
        }
        NormOrder::Inf => {
            let proj = l1_ball(v, tau);
            v.iter().zip(proj).map(|(a, b)| a - b).collect()
        }
    }
}

pub struct PrimalProblem<'a> {
    pub s: &'a [Matrix],
    pub t: &'a [f64],
    pub rho: f64,
    pub gamma: f64,
    pub p: NormOrder,
}

impl PrimalProblem<'_> {
    fn smooth(&self, theta: &Matrix, omegas: &[Matrix]) -> Option<f64> {
        let mut v = 0.0;
        for i in 0..self.s.len() {
            let lam = theta + &omegas[i];
            let chol = lam.clone().cholesky()?;
            let ld: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
            v += self.t[i] * (-ld + (&self.s[i] * &lam).trace());
        }
        Some(v)
    }

    fn nonsmooth(&self, theta: &Matrix, omegas: &[Matrix]) -> f64 {
        let d = theta.nrows();
        let mut v = self.rho * theta.iter().map(|x| x.abs()).sum::<f64>();
        for r in 0..d {
            for c in 0..d {
                let g: Vec<f64> = omegas.iter().map(|o| o[(r, c)]).collect();
                v += self.gamma * norm(&g, self.p);
            }
        }
        v
    }

    pub fn objective(&self, theta: &Matrix, omegas: &[Matrix]) -> f64 {
        self.smooth(theta, omegas).map_or(f64::INFINITY, |s| s + self.nonsmooth(theta, omegas))
    }

    fn prox(&self, theta: &Matrix, omegas: &[Matrix], step: f64) -> (Matrix, Vec<Matrix>) {
        let d = theta.nrows();
        let th = theta.map(|x| soft(x, step * self.rho));
        let mut om = vec![Matrix::zeros(d, d); omegas.len()];
        for r in 0..d {
            for c in 0..d {
                let g: Vec<f64> = omegas.iter().map(|o| o[(r, c)]).collect();
                let out = group_prox(&g, step * self.gamma, self.p);
                for (i, o) in om.iter_mut().enumerate() {
                    o[(r, c)] = out[i];
                }
            }
        }
        (th, om)
    }

    /// Accelerated proximal gradient with backtracking and function-value restarts.
    /// Returns the fitted precisions `Θ + Ω_i`.
    pub fn fista(&self, iters: usize) -> Vec<Matrix> {
        self.fista_full(iters).0
    }

    /// Fitted precisions together with the attained objective value.
    pub fn fista_full(&self, iters: usize) -> (Vec<Matrix>, f64) {
        let n = self.s.len();
        let d = self.s[0].nrows();
        let mut theta = Matrix::identity(d, d);
        let mut omegas = vec![Matrix::zeros(d, d); n];
        let mut y_theta = theta.clone();
        let mut y_om = omegas.clone();
        let mut k = 1.0_f64;
        let mut step = 1.0_f64;
        let mut fx = self.objective(&theta, &omegas);
        let mut iters_done = 0;
        let mut calm = 0;
        for _ in 0..iters {
            let f_y = match self.smooth(&y_theta, &y_om) {
                Some(v) => v,
                None => {
                    y_theta = theta.clone();
                    y_om = omegas.clone();
                    k = 1.0;
                    self.smooth(&y_theta, &y_om).unwrap()
                }
            };
            let mut g_theta = Matrix::zeros(d, d);
            let mut g_om = Vec::with_capacity(n);
            for i in 0..n {
                let lam = &y_theta + &y_om[i];
                let inv = lam.clone().cholesky().unwrap().inverse();
                let g = (&self.s[i] - inv) * self.t[i];
                g_theta += &g;
                g_om.push(g);
            }
            let (nt, no) = loop {
                let a = &y_theta - &g_theta * step;
                let b: Vec<Matrix> = (0..n).map(|i| &y_om[i] - &g_om[i] * step).collect();
                let (nt, no) = self.prox(&a, &b, step);
                if let Some(fs) = self.smooth(&nt, &no) {
                    let dt = &nt - &y_theta;
                    let mut lin = (&g_theta.component_mul(&dt)).sum();
                    let mut sq = dt.norm_squared();
                    for i in 0..n {
                        let di = &no[i] - &y_om[i];
                        lin += g_om[i].component_mul(&di).sum();
                        sq += di.norm_squared();
                    }
                    if fs <= f_y + lin + sq / (2.0 * step) + 1e-15 {
                        break (nt, no);
                    }
                }
                step *= 0.5;
                if step < 1e-20 {
                    break (theta.clone(), omegas.clone());
                }
            };
            let f_new = self.objective(&nt, &no);
            if f_new > fx {
                if k == 1.0 {
                    break;
                }
                // restart momentum from the current point
                y_theta = theta.clone();
                y_om = omegas.clone();
                k = 1.0;
                continue;
            }
            let k_next = 0.5 * (1.0 + (1.0 + 4.0 * k * k).sqrt());
            let mom = (k - 1.0) / k_next;
            y_theta = &nt + (&nt - &theta) * mom;
            y_om = (0..n).map(|i| &no[i] + (&no[i] - &omegas[i]) * mom).collect();
            let moved = (0..n).map(|i| (&no[i] - &omegas[i]).amax()).fold((&nt - &theta).amax(), f64::max);
            theta = nt;
            omegas = no;
            fx = f_new;
            k = k_next;
            step *= 1.2;
            calm = if moved < 1e-14 { calm + 1 } else { 0 };
            if calm >= 50 {
                break;
            }
            iters_done += 1;
        }
        if std::env::var("FISTA_DEBUG").is_ok() {
            eprintln!("fista iters {iters_done} step {step:e} f {fx}");
        }
        ((0..n).map(|i| &theta + &omegas[i]).collect(), fx)
    }
}

/// Regression coefficients and residual variance of `x_j` on the other variables, read off the
/// covariance matrix.
pub fn conditional_from_covariance(cov: &Matrix, j: usize) -> (Vec<usize>, Vec<f64>, f64) {
    let d = cov.nrows();
    let rest: Vec<usize> = (0..d).filter(|&k| k != j).collect();
    let srr = Matrix::from_fn(rest.len(), rest.len(), |a, b| cov[(rest[a], rest[b])]);
    let srj = linalg::Vector::from_fn(rest.len(), |a, _| cov[(rest[a], j)]);
    let coef = srr.cholesky().expect("PD covariance").solve(&srj);
    let var = cov[(j, j)] - srj.dot(&coef);
    (rest, coef.iter().cloned().collect(), var)
}

/// Monte-Carlo average, over `x ~ N(0, Λ_a⁻¹)`, of `log p_a(x_j | rest) − log p_b(x_j | rest)`.
pub fn mc_conditional_kl(lam_a: &Matrix, lam_b: &Matrix, j: usize, samples: usize, r: &mut ChaCha8Rng) -> f64 {
    use rand_distr::StandardNormal;
    let cov_a = lam_a.clone().try_inverse().expect("invertible");
    let cov_b = lam_b.clone().try_inverse().expect("invertible");
    let (rest, ca, va) = conditional_from_covariance(&cov_a, j);
    let (_, cb, vb) = conditional_from_covariance(&cov_b, j);
    let l = cov_a.clone().cholesky().expect("PD").l();
    let d = lam_a.nrows();
    let mut total = 0.0;
    for _ in 0..samples {
        let z = linalg::Vector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal));
        let x = &l * z;
        let ma: f64 = rest.iter().zip(&ca).map(|(&k, c)| c * x[k]).sum();
        let mb: f64 = rest.iter().zip(&cb).map(|(&k, c)| c * x[k]).sum();
        let la = -0.5 * va.ln() - 0.5 * (x[j] - ma).powi(2) / va;
        let lb = -0.5 * vb.ln() - 0.5 * (x[j] - mb).powi(2) / vb;
        total += la - lb;
    }
    total / samples as f64
}
