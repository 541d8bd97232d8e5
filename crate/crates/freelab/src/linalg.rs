//! Dense and matrix-free linear algebra helpers on complex matrices.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::seeded;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

pub fn zeros(n: usize) -> CMat {
    CMat::zeros(n, n)
}

pub fn eye(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).fold(0.0, |acc, (x, y)| acc.max((x - y).norm()))
}

pub fn is_hermitian(m: &CMat, tol: f64) -> bool {
    m.is_square() && max_abs_diff(m, &m.adjoint()) <= tol
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMat::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = s * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Normalized trace `tr(m)/n`.
pub fn ntrace(m: &CMat) -> C64 {
    m.trace() / m.nrows() as f64
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let h = hermitize(m);
    let mut v: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigh(m: &CMat) -> (Vec<f64>, CMat) {
    let h = hermitize(m);
    let eig = h.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Largest singular value.
pub fn op_norm(m: &CMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if is_hermitian(m, 0.0) {
        return hermitian_norm(m);
    }
    m.clone().singular_values().iter().fold(0.0, |a: f64, &b| a.max(b))
}

/// Spectral radius of a Hermitian matrix.
pub fn hermitian_norm(m: &CMat) -> f64 {
    let v = hermitian_eigenvalues(m);
    match (v.first(), v.last()) {
        (Some(lo), Some(hi)) => lo.abs().max(hi.abs()),
        _ => 0.0,
    }
}

/// Square root of a positive semidefinite matrix; eigenvalues in
/// `[-clip, 0)` are set to zero.
pub fn psd_sqrt(m: &CMat, clip: f64) -> Result<CMat, f64> {
    let (vals, vecs) = hermitian_eigh(m);
    if let Some(&lo) = vals.first() {
        if lo < -clip {
            return Err(lo);
        }
    }
    let n = m.nrows();
    let mut d = CMat::zeros(n, n);
    for (i, &l) in vals.iter().enumerate() {
        d[(i, i)] = C64::new(l.max(0.0).sqrt(), 0.0);
    }
    Ok(&vecs * d * vecs.adjoint())
}

/// Options for the Lanczos extremal eigenvalue solver.
#[derive(Clone, Debug)]
pub struct LanczosOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub seed: u64,
    /// cap on stored basis entries (dimension × iterations)
    pub memory_entries: usize,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions { max_iter: 400, rel_tol: 1e-10, seed: 0x5eed, memory_entries: 40_000_000 }
    }
}

#[derive(Clone, Debug)]
pub struct LanczosResult {
    pub lowest: f64,
    pub highest: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LanczosResult {
    pub fn norm(&self) -> f64 {
        self.lowest.abs().max(self.highest.abs())
    }
}

/// Extremal eigenvalues of a Hermitian operator given by its action,
/// restricted to the orthogonal complement of `deflate` (orthonormal vectors).
pub fn lanczos_extremes<F>(dim: usize, matvec: F, deflate: &[Vec<C64>], opts: &LanczosOptions) -> LanczosResult
where
    F: Fn(&[C64], &mut [C64]),
{
    let free_dim = dim.saturating_sub(deflate.len());
    let max_iter = opts.max_iter.min(free_dim).min((opts.memory_entries / dim.max(1)).max(20));
    if free_dim == 0 {
        return LanczosResult { lowest: 0.0, highest: 0.0, iterations: 0, converged: true };
    }
    let mut rng = seeded(opts.seed);
    let mut q: Vec<C64> = (0..dim)
        .map(|_| C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)))
        .collect();
    project_out(&mut q, deflate);
    normalize(&mut q);
    let mut basis: Vec<Vec<C64>> = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![ZERO; dim];
    let mut prev = (f64::NAN, f64::NAN);
    let mut converged = false;
    let mut result = (0.0, 0.0);
    for it in 0..max_iter {
        matvec(&basis[it], &mut w);
        project_out(&mut w, deflate);
        let a = dot(&basis[it], &w).re;
        alpha.push(a);
        // two passes of full reorthogonalization
        for _ in 0..2 {
            for v in &basis {
                let c = dot(v, &w);
                for (x, y) in w.iter_mut().zip(v) {
                    *x -= c * y;
                }
            }
        }
        let b = norm2(&w);
        let k = alpha.len();
        let last = k == free_dim || k == max_iter;
        if k % 8 == 0 || last || b <= 1e-13 {
            let (lo, hi) = tridiagonal_extremes(&alpha, &beta);
            result = (lo, hi);
            let scale = lo.abs().max(hi.abs()).max(1e-300);
            if (lo - prev.0).abs() <= opts.rel_tol * scale && (hi - prev.1).abs() <= opts.rel_tol * scale {
                converged = true;
                break;
            }
            prev = (lo, hi);
            if b <= 1e-13 * scale || b == 0.0 || k == free_dim {
                converged = true;
                break;
            }
        }
        beta.push(b);
        let next: Vec<C64> = w.iter().map(|x| x / b).collect();
        basis.push(next);
    }
    LanczosResult { lowest: result.0, highest: result.1, iterations: alpha.len(), converged }
}

fn tridiagonal_extremes(alpha: &[f64], beta: &[f64]) -> (f64, f64) {
    let k = alpha.len();
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let ev = t.symmetric_eigenvalues();
    let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm2(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn normalize(a: &mut [C64]) {
    let n = norm2(a);
    if n > 0.0 {
        for x in a.iter_mut() {
            *x /= n;
        }
    }
}

fn project_out(w: &mut [C64], vs: &[Vec<C64>]) {
    for v in vs {
        let c = dot(v, w);
        for (x, y) in w.iter_mut().zip(v) {
            *x -= c * y;
        }
    }
}

/// Dense matrix as a vector-valued action (for testing matrix-free code).
pub fn dense_matvec(m: &CMat) -> impl Fn(&[C64], &mut [C64]) + '_ {
    move |x, y| {
        let v = DVector::from_column_slice(x);
        let r = m * v;
        y.copy_from_slice(r.as_slice());
    }
}

/// Smallest and largest eigenvalues of a real symmetric matrix.
pub fn real_symmetric_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = m.clone().symmetric_eigenvalues();
    let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Parses a row-major list of `[re, im]` pairs into an `n × n` matrix.
pub fn from_pairs(n: usize, pairs: &[[f64; 2]]) -> Option<CMat> {
    if pairs.len() != n * n {
        return None;
    }
    Some(CMat::from_fn(n, n, |i, j| {
        let p = pairs[i * n + j];
        C64::new(p[0], p[1])
    }))
}

pub fn to_pairs(m: &CMat) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push([m[(i, j)].re, m[(i, j)].im]);
        }
    }
    out
}

/// Standard complex Gaussian matrix (entries with `E|z|² = 1`).
pub fn complex_gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(rows, cols, |_, _| {
        C64::new(rng.sample::<f64, _>(StandardNormal) * s, rng.sample::<f64, _>(StandardNormal) * s)
    })
}
