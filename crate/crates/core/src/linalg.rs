//! Sparse symmetric matrices, Jacobi-preconditioned CG and 2-norm condition estimates.

use std::io::{self, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAXIT: usize = 20_000;
/// Largest size for which condition numbers are computed from the full spectrum.
pub const DENSE_EIGEN_LIMIT: usize = 4000;
pub const COND_CAP: f64 = 1e30;
const LANCZOS_STEPS: usize = 300;
/// Seed of the random Lanczos and inverse-iteration start vectors.
pub const DEFAULT_SEED: u64 = 0x5eed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is indefinite: λ_min = {lambda_min:e}, λ_max = {lambda_max:e}")]
    Indefinite { lambda_min: f64, lambda_max: f64 },
    #[error("non-positive diagonal entry {value:e} at row {row}")]
    NonPositiveDiagonal { row: usize, value: f64 },
    #[error("empty matrix")]
    Empty,
}

/// Square matrix in compressed-row layout.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicate entries; the result does not depend on thread scheduling
    /// because triplets are merged in a stable sorted order.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) out of range for n = {n}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self::from_triplets(d.len(), d.iter().enumerate().map(|(i, v)| (i, i, *v)).collect())
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)] != 0.0 {
                    t.push((i, j, a[(i, j)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |a_ij − a_ji| / max |a_ij|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `D^{-1/2} A D^{-1/2}` with `D = diag(A)`.
    pub fn symmetric_diagonal_scaling(&self) -> Result<Self, LinalgError> {
        let d = self.diagonal();
        let mut inv = Vec::with_capacity(self.n);
        for (row, v) in d.iter().enumerate() {
            if *v <= 0.0 {
                return Err(LinalgError::NonPositiveDiagonal { row, value: *v });
            }
            inv.push(1.0 / v.sqrt());
        }
        let mut out = self.clone();
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                out.values[k] *= inv[i] * inv[self.col_idx[k]];
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                a[(i, j)] = v;
            }
        }
        a
    }

    /// Matrix Market coordinate format (general, real).
    pub fn write_matrix_market(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n, self.n, self.nnz())?;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }
}

/// Reduced linear system `A x = b`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

impl SparseSystem {
    pub fn n(&self) -> usize {
        self.matrix.n()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_relres: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
pub fn pcg(a: &CsrMatrix, b: &[f64], tol: f64, maxit: usize) -> (Vec<f64>, SolveReport) {
    let n = a.n();
    let mut x = vec![0.0; n];
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return (
            x,
            SolveReport {
                iterations: 0,
                final_relres: 0.0,
                converged: true,
            },
        );
    }
    let dinv: Vec<f64> = a.diagonal().iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut relres = 1.0;
    for it in 1..=maxit {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return (
                x,
                SolveReport {
                    iterations: it,
                    final_relres: relres,
                    converged: false,
                },
            );
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        relres = norm(&r) / bnorm;
        if relres < tol {
            return (
                x,
                SolveReport {
                    iterations: it,
                    final_relres: relres,
                    converged: true,
                },
            );
        }
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    (
        x,
        SolveReport {
            iterations: maxit,
            final_relres: relres,
            converged: false,
        },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scaling {
    None,
    SymmetricDiagonal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EigenMethod {
    /// Full spectrum up to [`DENSE_EIGEN_LIMIT`], Lanczos beyond.
    Auto,
    Dense,
    Lanczos,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CondEstimate {
    pub value: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// The matrix is numerically singular: `value` is only a lower bound.
    pub lower_bound: bool,
}

/// Extreme eigenvalues `(λ_min, λ_max)` of a symmetric matrix.
pub fn extreme_eigenvalues(a: &CsrMatrix, method: EigenMethod) -> Result<(f64, f64), LinalgError> {
    extreme_eigenvalues_seeded(a, method, DEFAULT_SEED)
}

pub fn extreme_eigenvalues_seeded(a: &CsrMatrix, method: EigenMethod, seed: u64) -> Result<(f64, f64), LinalgError> {
    if a.n() == 0 {
        return Err(LinalgError::Empty);
    }
    let dense = match method {
        EigenMethod::Auto => a.n() <= DENSE_EIGEN_LIMIT,
        EigenMethod::Dense => true,
        EigenMethod::Lanczos => false,
    };
    if dense {
        let ev = a.to_dense().symmetric_eigenvalues();
        let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((lo, hi))
    } else {
        let (ritz_min, ritz_max) = lanczos(a, LANCZOS_STEPS, seed);
        let inv = inverse_iteration(a, ritz_max, seed);
        Ok((ritz_min.min(inv), ritz_max))
    }
}

/// 2-norm condition number of `A` (or of `D^{-1/2} A D^{-1/2}`).
pub fn cond2_estimate(a: &CsrMatrix, scaling: Scaling) -> Result<CondEstimate, LinalgError> {
    cond2_estimate_with(a, scaling, EigenMethod::Auto)
}

pub fn cond2_estimate_with(a: &CsrMatrix, scaling: Scaling, method: EigenMethod) -> Result<CondEstimate, LinalgError> {
    cond2_estimate_seeded(a, scaling, method, DEFAULT_SEED)
}

pub fn cond2_estimate_seeded(
    a: &CsrMatrix,
    scaling: Scaling,
    method: EigenMethod,
    seed: u64,
) -> Result<CondEstimate, LinalgError> {
    let scaled;
    let m = match scaling {
        Scaling::None => a,
        Scaling::SymmetricDiagonal => {
            scaled = a.symmetric_diagonal_scaling()?;
            &scaled
        }
    };
    let (lo, hi) = extreme_eigenvalues_seeded(m, method, seed)?;
    if hi <= 0.0 || lo < -1e-8 * hi {
        return Err(LinalgError::Indefinite {
            lambda_min: lo,
            lambda_max: hi,
        });
    }
    let singular = lo <= 64.0 * f64::EPSILON * hi;
    let value = if lo > 0.0 { (hi / lo).min(COND_CAP) } else { COND_CAP };
    Ok(CondEstimate {
        value,
        lambda_min: lo,
        lambda_max: hi,
        lower_bound: singular || value >= COND_CAP,
    })
}

/// Lanczos with full reorthogonalisation; returns the extreme Ritz values.
fn lanczos(a: &CsrMatrix, steps: usize, seed: u64) -> (f64, f64) {
    let n = a.n();
    let k_max = steps.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let qn = norm(&q);
    q.iter_mut().for_each(|v| *v /= qn);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alphas = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    for k in 0..k_max {
        a.matvec(&basis[k], &mut w);
        let alpha = dot(&w, &basis[k]);
        alphas.push(alpha);
        // two passes of classical Gram–Schmidt against the whole basis
        for _ in 0..2 {
            for v in &basis {
                let c = dot(&w, v);
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= c * vi);
            }
        }
        let beta = norm(&w);
        if k + 1 == k_max || beta <= 1e-14 * alpha.abs().max(1e-300) {
            break;
        }
        betas.push(beta);
        basis.push(w.iter().map(|x| x / beta).collect());
    }
    let m = alphas.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alphas[i];
        if i + 1 < m {
            t[(i, i + 1)] = betas[i];
            t[(i + 1, i)] = betas[i];
        }
    }
    let ev = t.symmetric_eigenvalues();
    (
        ev.iter().copied().fold(f64::INFINITY, f64::min),
        ev.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    )
}

/// Smallest eigenvalue by inverse power iteration with CG solves.
fn inverse_iteration(a: &CsrMatrix, lambda_max: f64, seed: u64) -> f64 {
    let n = a.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xn = norm(&x);
    x.iter_mut().for_each(|v| *v /= xn);
    let mut rayleigh = lambda_max;
    for _ in 0..100 {
        let (y, rep) = pcg(a, &x, 1e-12, 50 * n.max(100));
        let yn = norm(&y);
        if yn == 0.0 || !yn.is_finite() {
            break;
        }
        x = y.iter().map(|v| v / yn).collect();
        let ax = a.mul(&x);
        let r = dot(&x, &ax);
        let converged = ((rayleigh - r) / r).abs() < 1e-8;
        rayleigh = r;
        if converged || !rep.converged {
            break;
        }
    }
    rayleigh
}
