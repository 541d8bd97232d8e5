//! Random matrix models: Haar unitary and orthogonal matrices, uniform
//! permutations, the assembled operator `A_N = a_0 ⊗ 1 + Σ a_i ⊗ U_i`, its
//! norms and Monte Carlo moments, and tensor-leg models on `(ℂ^N)^{⊗k}`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffs::CoefficientFamily;
use crate::linalg::{self, lanczos_extremes, CMat, LanczosOptions, C64, ZERO};
use crate::rng::{derive_seed, seeded};
use crate::star_ops::TensorFamily;

/// Largest `n·N` diagonalized densely.
pub const DENSE_NORM_LIMIT: usize = 6000;
/// Largest `n·N^k` for tensor-leg operators.
pub const TENSOR_MATVEC_LIMIT: usize = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("matrix size N must be at least 1")]
    EmptyModel,
    #[error("rank mismatch: coefficients have d = {coeffs}, sample has d = {sample}")]
    Rank { coeffs: usize, sample: usize },
    #[error("dimension {dim} exceeds the cap {cap}")]
    TooLarge { dim: usize, cap: usize },
    #[error("exponent p must be positive")]
    Exponent,
    #[error("operation needs a dense model")]
    NotDense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Unitary,
    Orthogonal,
    Permutation,
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "unitary" => Ok(ModelKind::Unitary),
            "orthogonal" => Ok(ModelKind::Orthogonal),
            "permutation" => Ok(ModelKind::Permutation),
            other => Err(format!("unknown model '{other}'")),
        }
    }
}

/// Haar unitary: QR of a complex Gaussian matrix, columns rephased so that
/// the diagonal of `R` is positive.
pub fn haar_unitary<R: Rng>(n: usize, rng: &mut R) -> CMat {
    let g = linalg::complex_gaussian(rng, n, n);
    let qr = g.qr();
    let (mut q, r) = qr.unpack();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { linalg::ONE };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Haar orthogonal matrix, same construction over the reals.
pub fn haar_orthogonal<R: Rng>(n: usize, rng: &mut R) -> CMat {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (mut q, r) = g.qr().unpack();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q.map(|x| C64::new(x, 0.0))
}

/// Uniform permutation as an index map `x ↦ σ(x)`.
pub fn random_permutation<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

pub fn inverse_permutation(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (x, &y) in p.iter().enumerate() {
        inv[y] = x;
    }
    inv
}

/// A tuple `(U_1, ..., U_d)` from one model with the seed that produced it.
#[derive(Clone, Debug)]
pub struct ModelSample {
    pub kind: ModelKind,
    pub size: usize,
    pub d: usize,
    pub seed: u64,
    /// dense matrices (unitary and orthogonal models)
    pub dense: Vec<CMat>,
    /// index maps (permutation model)
    pub perms: Vec<Vec<usize>>,
}

impl ModelSample {
    pub fn draw(kind: ModelKind, size: usize, d: usize, seed: u64) -> Result<Self, ModelError> {
        if size == 0 {
            return Err(ModelError::EmptyModel);
        }
        let mut dense = Vec::new();
        let mut perms = Vec::new();
        for i in 0..d {
            let mut rng = seeded(derive_seed(seed, i as u64));
            match kind {
                ModelKind::Unitary => dense.push(haar_unitary(size, &mut rng)),
                ModelKind::Orthogonal => dense.push(haar_orthogonal(size, &mut rng)),
                ModelKind::Permutation => perms.push(random_permutation(size, &mut rng)),
            }
        }
        Ok(ModelSample { kind, size, d, seed, dense, perms })
    }

    pub fn from_permutations(perms: Vec<Vec<usize>>) -> Result<Self, ModelError> {
        let size = perms.first().map(|p| p.len()).unwrap_or(0);
        if size == 0 {
            return Err(ModelError::EmptyModel);
        }
        Ok(ModelSample { kind: ModelKind::Permutation, size, d: perms.len(), seed: 0, dense: vec![], perms })
    }

    pub fn from_unitaries(us: Vec<CMat>) -> Result<Self, ModelError> {
        let size = us.first().map(|u| u.nrows()).unwrap_or(0);
        if size == 0 {
            return Err(ModelError::EmptyModel);
        }
        Ok(ModelSample { kind: ModelKind::Unitary, size, d: us.len(), seed: 0, dense: us, perms: vec![] })
    }

    /// `U_i` for `i ∈ 1..=2d`, with `U_{i+d} = U_i^*`.
    pub fn generator(&self, i: usize) -> CMat {
        let (base, adj) = if i > self.d { (i - self.d - 1, true) } else { (i - 1, false) };
        let m = match self.kind {
            ModelKind::Permutation => permutation_matrix(&self.perms[base]),
            _ => self.dense[base].clone(),
        };
        if adj {
            m.adjoint()
        } else {
            m
        }
    }

    /// `max |U U^* - 1|` over the tuple (0 for permutations that are bijections).
    pub fn unitarity_defect(&self) -> f64 {
        match self.kind {
            ModelKind::Permutation => {
                let ok = self.perms.iter().all(|p| {
                    let mut seen = vec![false; p.len()];
                    p.iter().all(|&y| y < p.len() && !std::mem::replace(&mut seen[y], true))
                });
                if ok {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            _ => self
                .dense
                .iter()
                .map(|u| linalg::max_abs_diff(&(u * u.adjoint()), &linalg::eye(self.size)))
                .fold(0.0, f64::max),
        }
    }

    /// Applies `U_i` (`i ∈ 1..=2d`) to a length-`N` vector.
    pub fn apply(&self, i: usize, x: &[C64], y: &mut [C64]) {
        let adj = i > self.d;
        let base = if adj { i - self.d - 1 } else { i - 1 };
        match self.kind {
            ModelKind::Permutation => {
                let p = &self.perms[base];
                if adj {
                    // (U^* v)_{σ(x)} = v_x
                    for (xx, &s) in p.iter().enumerate() {
                        y[s] = x[xx];
                    }
                } else {
                    for (xx, &s) in p.iter().enumerate() {
                        y[xx] = x[s];
                    }
                }
            }
            _ => {
                let u = &self.dense[base];
                let n = self.size;
                for r in 0..n {
                    let mut s = ZERO;
                    for c in 0..n {
                        let e = if adj { u[(c, r)].conj() } else { u[(r, c)] };
                        s += e * x[c];
                    }
                    y[r] = s;
                }
            }
        }
    }
}

/// `U_{x,y} = 1(σ(x) = y)`.
pub fn permutation_matrix(p: &[usize]) -> CMat {
    let n = p.len();
    let mut m = linalg::zeros(n);
    for (x, &y) in p.iter().enumerate() {
        m[(x, y)] = linalg::ONE;
    }
    m
}

/// `A_N` acting on `ℂ^n ⊗ ℂ^N` (index `c·N + x`).
#[derive(Clone, Debug)]
pub struct AssembledOperator {
    pub coeffs: CoefficientFamily,
    pub sample: ModelSample,
}

pub fn assemble(coeffs: &CoefficientFamily, sample: &ModelSample) -> Result<AssembledOperator, ModelError> {
    if coeffs.d != sample.d {
        return Err(ModelError::Rank { coeffs: coeffs.d, sample: sample.d });
    }
    Ok(AssembledOperator { coeffs: coeffs.clone(), sample: sample.clone() })
}

impl AssembledOperator {
    pub fn dim(&self) -> usize {
        self.coeffs.n * self.sample.size
    }

    pub fn to_dense(&self) -> CMat {
        let big_n = self.sample.size;
        let mut m = linalg::kron(&self.coeffs.a[0], &linalg::eye(big_n));
        for i in 1..=2 * self.coeffs.d {
            if linalg::max_abs(&self.coeffs.a[i]) > 0.0 {
                m += linalg::kron(&self.coeffs.a[i], &self.sample.generator(i));
            }
        }
        m
    }

    pub fn is_hermitian(&self) -> bool {
        self.coeffs.flags.selfadjoint
    }

    /// `y = A_N x` without forming `A_N`.
    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        self.apply_family(&self.coeffs.a, x, y);
    }

    /// `y = A_N^* x`.
    pub fn adjoint_matvec(&self, x: &[C64], y: &mut [C64]) {
        let d = self.coeffs.d;
        let adj: Vec<CMat> = (0..=2 * d)
            .map(|i| {
                let j = if i == 0 { 0 } else { crate::freegroup::star(d, i) };
                self.coeffs.a[j].adjoint()
            })
            .collect();
        self.apply_family(&adj, x, y);
    }

    fn apply_family(&self, a: &[CMat], x: &[C64], y: &mut [C64]) {
        let n = self.coeffs.n;
        let big_n = self.sample.size;
        y.iter_mut().for_each(|z| *z = ZERO);
        let mut moved = vec![ZERO; n * big_n];
        for (i, ai) in a.iter().enumerate() {
            if linalg::max_abs(ai) == 0.0 {
                continue;
            }
            if i == 0 {
                moved.copy_from_slice(x);
            } else {
                for c in 0..n {
                    self.sample.apply(i, &x[c * big_n..(c + 1) * big_n], &mut moved[c * big_n..(c + 1) * big_n]);
                }
            }
            for r in 0..n {
                for c in 0..n {
                    let coef = ai[(r, c)];
                    if coef == ZERO {
                        continue;
                    }
                    let (dst, src) = (&mut y[r * big_n..(r + 1) * big_n], &moved[c * big_n..(c + 1) * big_n]);
                    for (o, v) in dst.iter_mut().zip(src) {
                        *o += coef * v;
                    }
                }
            }
        }
    }

    /// Orthonormal basis of `ℂ^n ⊗ 𝟙_N`, the range of `1 - Π_N`.
    pub fn invariant_basis(&self) -> Vec<Vec<C64>> {
        let n = self.coeffs.n;
        let big_n = self.sample.size;
        let s = 1.0 / (big_n as f64).sqrt();
        (0..n)
            .map(|c| {
                let mut v = vec![ZERO; n * big_n];
                v[c * big_n..(c + 1) * big_n].iter_mut().for_each(|z| *z = C64::new(s, 0.0));
                v
            })
            .collect()
    }
}

/// `Π_N = 1 ⊗ (1 - 𝟙𝟙^*/N)` as a dense matrix.
pub fn projector(n: usize, big_n: usize) -> CMat {
    let j = CMat::from_element(big_n, big_n, C64::new(1.0 / big_n as f64, 0.0));
    linalg::kron(&linalg::eye(n), &(linalg::eye(big_n) - j))
}

/// `‖A_N‖`, or `‖A_N Π_N‖` when `project` is set.
pub fn operator_norm(op: &AssembledOperator, project: bool) -> Result<f64, ModelError> {
    let dim = op.dim();
    let deflate = if project { op.invariant_basis() } else { vec![] };
    let dense_ok = dim <= DENSE_NORM_LIMIT && op.sample.kind != ModelKind::Permutation;
    if dense_ok {
        let mut m = op.to_dense();
        if project {
            m = &m * projector(op.coeffs.n, op.sample.size);
        }
        return Ok(linalg::op_norm(&m));
    }
    let opts = LanczosOptions { rel_tol: 1e-10, max_iter: 600, ..LanczosOptions::default() };
    if op.is_hermitian() {
        // A_N commutes with Π_N for permutations, so deflation gives ‖A_N Π_N‖
        let r = lanczos_extremes(dim, |x, y| op.matvec(x, y), &deflate, &opts);
        return Ok(r.norm());
    }
    // ‖T‖² = λ_max(T^* T) with T = A_N Π_N
    let proj = |v: &mut [C64]| {
        for b in &deflate {
            let c = linalg::dot(b, v);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    };
    let r = lanczos_extremes(
        dim,
        |x, y| {
            let mut t = x.to_vec();
            proj(&mut t);
            let mut u = vec![ZERO; dim];
            op.matvec(&t, &mut u);
            op.adjoint_matvec(&u, y);
            proj(y);
        },
        &[],
        &opts,
    );
    Ok(r.highest.max(0.0).sqrt())
}

/// Singular values of a dense matrix.
fn singular_values(m: &CMat) -> Vec<f64> {
    if linalg::is_hermitian(m, 1e-12) {
        linalg::hermitian_eigenvalues(m).into_iter().map(f64::abs).collect()
    } else {
        m.singular_values().iter().cloned().collect()
    }
}

/// Normalized Schatten norm `(tr|T|^p / dim)^{1/p}`; `p = None` is the
/// operator norm.
pub fn schatten_norm(m: &CMat, p: Option<f64>) -> Result<f64, ModelError> {
    let s = singular_values(m);
    match p {
        None => Ok(s.iter().cloned().fold(0.0, f64::max)),
        Some(p) if p <= 0.0 => Err(ModelError::Exponent),
        Some(p) => {
            let mx = s.iter().cloned().fold(0.0, f64::max);
            if mx == 0.0 {
                return Ok(0.0);
            }
            let mean = s.iter().map(|x| (x / mx).powf(p)).sum::<f64>() / s.len() as f64;
            Ok(mx * mean.powf(1.0 / p))
        }
    }
}

/// `(‖T‖_p, ‖T‖, dim^{1/p} ‖T‖_p)`: the sandwich `‖T‖_p ≤ ‖T‖ ≤ dim^{1/p}‖T‖_p`.
pub fn schatten_sandwich(m: &CMat, p: f64) -> Result<(f64, f64, f64), ModelError> {
    let sp = schatten_norm(m, Some(p))?;
    let op = schatten_norm(m, None)?;
    Ok((sp, op, (m.nrows() as f64).powf(1.0 / p) * sp))
}

/// Mean and standard error of a sample.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Monte Carlo of `τ(A_N^ℓ) = tr(A_N^ℓ)/(nN)`: real-part mean and standard error.
pub fn mc_trace_moment(
    coeffs: &CoefficientFamily,
    l: usize,
    size: usize,
    kind: ModelKind,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64), ModelError> {
    if l == 0 {
        return Ok((1.0, 0.0));
    }
    let mut values = Vec::with_capacity(samples);
    for s in 0..samples {
        let sample = ModelSample::draw(kind, size, coeffs.d, derive_seed(seed, s as u64))?;
        let op = assemble(coeffs, &sample)?;
        let a = op.to_dense();
        let mut pow = a.clone();
        for _ in 1..l {
            pow = &pow * &a;
        }
        values.push(linalg::ntrace(&pow).re);
    }
    Ok(mean_stderr(&values))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ConcentrationReport {
    pub size: usize,
    pub p: Option<f64>,
    pub samples: usize,
    pub mean: f64,
    pub std: f64,
    /// `C √d ‖A★‖ N^{-1/2-1/p}`
    pub bound: f64,
    /// `t` at which `2 exp(-N^{1+2/p} t²/d) = 1/2` with unit constant
    pub t_half: f64,
    pub pass: bool,
}

/// Empirical spread of `‖A_N‖_p` over independent Haar unitary samples.
pub fn concentration_probe(
    coeffs: &CoefficientFamily,
    size: usize,
    p: Option<f64>,
    samples: usize,
    seed: u64,
    free_norm: f64,
    slack: f64,
) -> Result<ConcentrationReport, ModelError> {
    let mut values = Vec::with_capacity(samples);
    for s in 0..samples {
        let sample = ModelSample::draw(ModelKind::Unitary, size, coeffs.d, derive_seed(seed, s as u64))?;
        let m = assemble(coeffs, &sample)?.to_dense();
        values.push(schatten_norm(&m, p)?);
    }
    let (mean, se) = mean_stderr(&values);
    let std = se * (values.len() as f64).sqrt();
    let inv_p = p.map(|p| 1.0 / p).unwrap_or(0.0);
    let nf = size as f64;
    let d = coeffs.d as f64;
    let bound = slack * d.sqrt() * free_norm * nf.powf(-0.5 - inv_p);
    let t_half = (d * 4f64.ln() / nf.powf(1.0 + 2.0 * inv_p)).sqrt();
    Ok(ConcentrationReport { size, p, samples, mean, std, bound, t_half, pass: std <= bound + 1e-12 })
}

// ---------------------------------------------------------------------------
// tensor legs

/// `a_0 ⊗ 1 + Σ_{i,j} a_{i,j} ⊗ V_{i,j}` with `V_{i,j}` acting on leg `j` of
/// `(ℂ^N)^{⊗k}`; index `c·N^k + x_1 + N x_2 + ...`.
#[derive(Clone, Debug)]
pub struct TensorLegOperator {
    pub family: TensorFamily,
    pub legs: Vec<ModelSample>,
    pub size: usize,
}

pub fn tensor_leg_model(family: &TensorFamily, kind: ModelKind, size: usize, seed: u64) -> Result<TensorLegOperator, ModelError> {
    let k = family.k();
    let dim = (size as u128).pow(k as u32) * family.n as u128;
    if dim > TENSOR_MATVEC_LIMIT as u128 {
        return Err(ModelError::TooLarge { dim: dim.min(usize::MAX as u128) as usize, cap: TENSOR_MATVEC_LIMIT });
    }
    let legs = (0..k)
        .map(|j| ModelSample::draw(kind, size, family.d, derive_seed(seed, j as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TensorLegOperator { family: family.clone(), legs, size })
}

impl TensorLegOperator {
    pub fn k(&self) -> usize {
        self.legs.len()
    }

    pub fn dim(&self) -> usize {
        self.family.n * self.size.pow(self.k() as u32)
    }

    /// `V_{i,j}` applied to a vector of `(ℂ^N)^{⊗k}`.
    pub fn apply_leg(&self, i: usize, j: usize, x: &[C64], y: &mut [C64]) {
        let big_n = self.size;
        let stride = big_n.pow(j as u32);
        let total = x.len();
        let mut buf_in = vec![ZERO; big_n];
        let mut buf_out = vec![ZERO; big_n];
        for base in 0..total {
            if (base / stride) % big_n != 0 {
                continue;
            }
            for t in 0..big_n {
                buf_in[t] = x[base + t * stride];
            }
            self.legs[j].apply(i, &buf_in, &mut buf_out);
            for t in 0..big_n {
                y[base + t * stride] = buf_out[t];
            }
        }
    }

    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        let n = self.family.n;
        let block = self.size.pow(self.k() as u32);
        y.iter_mut().for_each(|z| *z = ZERO);
        let mut moved = vec![ZERO; n * block];
        let mut terms: Vec<(Option<(usize, usize)>, &CMat)> = vec![(None, &self.family.a0)];
        for (j, leg) in self.family.legs.iter().enumerate() {
            for (i, a) in leg.iter().enumerate() {
                terms.push((Some((i + 1, j)), a));
            }
        }
        for (which, a) in terms {
            if linalg::max_abs(a) == 0.0 {
                continue;
            }
            match which {
                None => moved.copy_from_slice(x),
                Some((i, j)) => {
                    for c in 0..n {
                        self.apply_leg(i, j, &x[c * block..(c + 1) * block], &mut moved[c * block..(c + 1) * block]);
                    }
                }
            }
            for r in 0..n {
                for c in 0..n {
                    let coef = a[(r, c)];
                    if coef == ZERO {
                        continue;
                    }
                    for (o, v) in y[r * block..(r + 1) * block].iter_mut().zip(&moved[c * block..(c + 1) * block]) {
                        *o += coef * v;
                    }
                }
            }
        }
    }

    /// `‖A_N‖` for a selfadjoint tensor family.
    pub fn norm(&self) -> f64 {
        let opts = LanczosOptions { rel_tol: 1e-10, max_iter: 600, ..LanczosOptions::default() };
        lanczos_extremes(self.dim(), |x, y| self.matvec(x, y), &[], &opts).norm()
    }

    /// `max |[V_{i,j}, V_{i',j'}] x|` over `j ≠ j'` for a probe vector `x`.
    pub fn cross_leg_commutator(&self, probe_seed: u64) -> f64 {
        let block = self.size.pow(self.k() as u32);
        let mut rng = seeded(probe_seed);
        let x: Vec<C64> = (0..block).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        let mut worst: f64 = 0.0;
        let gens = 2 * self.family.d;
        for j in 0..self.k() {
            for jj in 0..self.k() {
                if j == jj {
                    continue;
                }
                for i in 1..=gens {
                    for ii in 1..=gens {
                        let (mut t1, mut t2, mut s1, mut s2) =
                            (vec![ZERO; block], vec![ZERO; block], vec![ZERO; block], vec![ZERO; block]);
                        self.apply_leg(ii, jj, &x, &mut t1);
                        self.apply_leg(i, j, &t1, &mut s1);
                        self.apply_leg(i, j, &x, &mut t2);
                        self.apply_leg(ii, jj, &t2, &mut s2);
                        for (a, b) in s1.iter().zip(&s2) {
                            worst = worst.max((a - b).norm());
                        }
                    }
                }
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_samples_are_unitary() {
        for kind in [ModelKind::Unitary, ModelKind::Orthogonal, ModelKind::Permutation] {
            let s = ModelSample::draw(kind, 30, 2, 7).unwrap();
            assert!(s.unitarity_defect() <= 1e-12);
            let t = ModelSample::draw(kind, 30, 2, 7).unwrap();
            assert_eq!(s.dense, t.dense);
            assert_eq!(s.perms, t.perms);
        }
        assert!(ModelSample::draw(ModelKind::Unitary, 0, 2, 1).is_err());
    }

    #[test]
    fn haar_second_moment() {
        let mut rng = seeded(3);
        let samples = 20_000;
        let xs: Vec<f64> = (0..samples).map(|_| haar_unitary(8, &mut rng)[(0, 0)].norm_sqr()).collect();
        let (m, se) = mean_stderr(&xs);
        assert!((m - 0.125).abs() <= 4.0 * se, "{m} ± {se}");
    }

    #[test]
    fn matvec_matches_dense() {
        let mut rng = seeded(5);
        let coeffs = CoefficientFamily::random_selfadjoint(2, 2, &mut rng);
        for kind in [ModelKind::Unitary, ModelKind::Permutation] {
            let s = ModelSample::draw(kind, 9, 2, 1).unwrap();
            let op = assemble(&coeffs, &s).unwrap();
            let dense = op.to_dense();
            assert!(linalg::is_hermitian(&dense, 1e-12));
            let x: Vec<C64> = (0..op.dim()).map(|i| C64::new(i as f64 * 0.1, 1.0 - i as f64 * 0.05)).collect();
            let mut y = vec![ZERO; op.dim()];
            op.matvec(&x, &mut y);
            let want = linalg::dense_matvec(&dense);
            let mut z = vec![ZERO; op.dim()];
            want(&x, &mut z);
            assert!(y.iter().zip(&z).all(|(a, b)| (a - b).norm() < 1e-12));
            let adj = dense.adjoint();
            op.adjoint_matvec(&x, &mut y);
            linalg::dense_matvec(&adj)(&x, &mut z);
            assert!(y.iter().zip(&z).all(|(a, b)| (a - b).norm() < 1e-12));
        }
    }

    #[test]
    fn simple_norms() {
        let s = ModelSample::draw(ModelKind::Unitary, 20, 1, 2).unwrap();
        let coeffs = CoefficientFamily::kesten(1);
        let op = assemble(&coeffs, &s).unwrap();
        let norm = operator_norm(&op, false).unwrap();
        assert!(norm <= 2.0 + 1e-12);
        let eig = linalg::hermitian_eigenvalues(&s.dense[0].clone().map(|z| z)).len();
        assert_eq!(eig, 20);
        let zero = assemble(&CoefficientFamily::zero(1, 1), &s).unwrap();
        assert_eq!(operator_norm(&zero, false).unwrap(), 0.0);
        let id = linalg::eye(5);
        assert_eq!(schatten_norm(&id, Some(3.0)).unwrap(), 1.0);
        assert_eq!(schatten_norm(&id, None).unwrap(), 1.0);
    }

    #[test]
    fn schatten_two_is_normalized_frobenius() {
        let mut rng = seeded(4);
        let m = linalg::complex_gaussian(&mut rng, 6, 6);
        let fro = m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() / 6f64.sqrt();
        assert!((schatten_norm(&m, Some(2.0)).unwrap() - fro).abs() < 1e-12);
        let (lo, mid, hi) = schatten_sandwich(&m, 4.0).unwrap();
        assert!(lo <= mid + 1e-12 && mid <= hi + 1e-12);
    }

    #[test]
    fn permutation_invariant_vectors() {
        let mut rng = seeded(8);
        let coeffs = CoefficientFamily::random_selfadjoint(2, 2, &mut rng);
        let s = ModelSample::draw(ModelKind::Permutation, 12, 2, 9).unwrap();
        let op = assemble(&coeffs, &s).unwrap();
        let a1: CMat = coeffs.a.iter().fold(linalg::zeros(2), |acc, m| acc + m);
        let f = [C64::new(0.3, -0.2), C64::new(1.0, 0.5)];
        let mut x = vec![ZERO; 24];
        for c in 0..2 {
            for t in 0..12 {
                x[c * 12 + t] = f[c];
            }
        }
        let mut y = vec![ZERO; 24];
        op.matvec(&x, &mut y);
        for c in 0..2 {
            let want = a1[(c, 0)] * f[0] + a1[(c, 1)] * f[1];
            assert!((0..12).all(|t| (y[c * 12 + t] - want).norm() < 1e-12));
        }
        // matrix-free projected norm equals the dense one
        let dense = &op.to_dense() * projector(2, 12);
        let p = projector(2, 12);
        assert!(linalg::max_abs_diff(&(&p * &p), &p) < 1e-12);
        let norm = operator_norm(&op, true).unwrap();
        assert!((norm - linalg::op_norm(&dense)).abs() < 1e-8);
    }

    #[test]
    fn moments_of_unit_family() {
        let coeffs = CoefficientFamily::kesten(2);
        let (m, se) = mc_trace_moment(&coeffs, 2, 6, ModelKind::Unitary, 400, 1).unwrap();
        assert!((m - 4.0).abs() <= 4.0 * se, "{m} ± {se}");
        assert_eq!(mc_trace_moment(&coeffs, 0, 6, ModelKind::Unitary, 5, 1).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn tensor_legs_commute() {
        let fam = TensorFamily::unit(2, 2);
        let op = tensor_leg_model(&fam, ModelKind::Unitary, 5, 3).unwrap();
        assert!(op.cross_leg_commutator(1) < 1e-13);
        let one = tensor_leg_model(&TensorFamily::unit(2, 1), ModelKind::Unitary, 7, 3).unwrap();
        let direct = assemble(&CoefficientFamily::kesten(2), &one.legs[0]).unwrap();
        assert!((one.norm() - operator_norm(&direct, false).unwrap()).abs() < 1e-8);
    }
}
