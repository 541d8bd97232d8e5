//! Operator Ihara–Bass identity: resolvent diagonals `γ(z)`, `γ_i(z)` of the
//! free operator, the non-backtracking operator `B(z)` with `b_i = γ_i a_i`,
//! and a numerical check of
//! `(z − A)^{-1} = P̂ (1 − B(z))^{-1} (1 + B(z)/(2d−1)) P̂* (γ(z) ⊗ 1)`.

use nalgebra::Complex;
use serde::Serialize;
use thiserror::Error;

use crate::coeffs::CoefficientFamily;
use crate::freegroup::{star, Ball, FreeGroupError};
use crate::linalg::{self, kron, max_abs, max_abs_diff, op_norm, CMat, C64, ONE, ZERO};
use crate::matrix_models::ModelSample;

pub const DEFAULT_DEPTH: usize = 60;
pub const DENSE_CAP: usize = 3000;

#[derive(Debug, Error)]
pub enum ResolventError {
    #[error("|z| = {modulus} is inside the convergence radius {radius}")]
    InsideRadius { modulus: f64, radius: f64 },
    #[error("|z| = {modulus} is below z_min = {z_min}")]
    BelowZMin { modulus: f64, z_min: f64 },
    #[error("1 - B(z) is numerically singular (condition number {0:e})")]
    Singular(f64),
    #[error("dimension {0} exceeds the dense cap")]
    Capacity(usize),
    #[error("model rank {model} differs from coefficient rank {coeffs}")]
    Rank { model: usize, coeffs: usize },
    #[error(transparent)]
    Group(#[from] FreeGroupError),
}

/// `Σ_{i=0}^{2d} ‖a_i‖`.
pub fn coefficient_mass(fam: &CoefficientFamily) -> f64 {
    fam.a.iter().map(op_norm).sum()
}

pub fn default_z_min(fam: &CoefficientFamily) -> f64 {
    10.0 * (1.0 + coefficient_mass(fam))
}

/// Series coefficients `c[k] = (A★^k)_{𝔬𝔬}` and `c_i[k] = ((A★^𝔬)^k)_{g_i g_i}`
/// for `k ≤ depth`, by decomposing tree walks at their last excursion:
/// `c_i[k] = a_0 c_i[k−1] + Σ_{j≠i*} Σ_s a_{j*} c_j[s] a_j c_i[k−2−s]`.
#[derive(Clone, Debug)]
pub struct WalkSeries {
    pub root: Vec<CMat>,
    pub branch: Vec<Vec<CMat>>,
}

pub fn walk_series(fam: &CoefficientFamily, depth: usize) -> WalkSeries {
    let d = fam.d;
    let n = fam.n;
    let a = &fam.a;
    let mut branch: Vec<Vec<CMat>> = vec![vec![linalg::eye(n)]; 2 * d];
    // loops[j][s] = a_{j*} c_j[s] a_j
    let mut loops: Vec<Vec<CMat>> = vec![Vec::new(); 2 * d];
    let mut root = vec![linalg::eye(n)];
    for k in 1..=depth {
        for j in 0..2 * d {
            if loops[j].len() < k - 1 {
                let s = k - 2;
                let js = star(d, j + 1);
                loops[j].push(&a[js] * &branch[j][s] * &a[j + 1]);
            }
        }
        let mut next = Vec::with_capacity(2 * d);
        for i in 0..2 * d {
            let is = star(d, i + 1) - 1;
            let mut c = &a[0] * &branch[i][k - 1];
            for j in (0..2 * d).filter(|&j| j != is) {
                for s in 0..k.saturating_sub(1) {
                    c += &loops[j][s] * &branch[i][k - 2 - s];
                }
            }
            next.push(c);
        }
        let mut c = &a[0] * &root[k - 1];
        for j in 0..2 * d {
            for s in 0..k.saturating_sub(1) {
                c += &loops[j][s] * &root[k - 2 - s];
            }
        }
        root.push(c);
        for (i, c) in next.into_iter().enumerate() {
            branch[i].push(c);
        }
    }
    WalkSeries { root, branch }
}

#[derive(Clone, Debug)]
pub struct ResolventDiagonal {
    pub z: C64,
    pub depth: usize,
    pub gamma: CMat,
    pub gamma_i: Vec<CMat>,
    pub tail_bound: f64,
}

fn sum_series(coeffs: &[CMat], z: C64) -> CMat {
    let w = ONE / z;
    let mut acc = CMat::zeros(coeffs[0].nrows(), coeffs[0].ncols());
    for c in coeffs.iter().rev() {
        acc = acc * w + c;
    }
    acc * w
}

/// `γ(z)` and `γ_i(z)` from the walk series truncated at `depth`, with the
/// geometric tail `|z|^{-1} r^{L+1}/(1−r)`, `r = Σ‖a_i‖/|z|`.
pub fn resolvent_diagonal(fam: &CoefficientFamily, z: C64, depth: usize) -> Result<ResolventDiagonal, ResolventError> {
    let radius = coefficient_mass(fam);
    let modulus = z.norm();
    if modulus <= radius {
        return Err(ResolventError::InsideRadius { modulus, radius });
    }
    let series = walk_series(fam, depth);
    let r = radius / modulus;
    let tail_bound = r.powi(depth as i32 + 1) / (1.0 - r) / modulus;
    Ok(ResolventDiagonal {
        z,
        depth,
        gamma: sum_series(&series.root, z),
        gamma_i: series.branch.iter().map(|b| sum_series(b, z)).collect(),
        tail_bound,
    })
}

/// Independent oracle: iterate `γ_i = (z − a_0 − Σ_{j≠i*} a_{j*} γ_j a_j)^{-1}`
/// and `γ = (z − a_0 − Σ_j a_{j*} γ_j a_j)^{-1}` to a fixed point.
pub fn fixed_point_gammas(fam: &CoefficientFamily, z: C64, iterations: usize) -> Option<(CMat, Vec<CMat>)> {
    let d = fam.d;
    let n = fam.n;
    let a = &fam.a;
    let zi = linalg::eye(n) * z;
    let mut g: Vec<CMat> = vec![linalg::eye(n) * (ONE / z); 2 * d];
    for _ in 0..iterations {
        let loops: Vec<CMat> = (0..2 * d).map(|j| &a[star(d, j + 1)] * &g[j] * &a[j + 1]).collect();
        let mut next = Vec::with_capacity(2 * d);
        for i in 0..2 * d {
            let is = star(d, i + 1) - 1;
            let mut m = &zi - &a[0];
            for j in (0..2 * d).filter(|&j| j != is) {
                m -= &loops[j];
            }
            next.push(m.try_inverse()?);
        }
        let delta = next.iter().zip(&g).map(|(x, y)| max_abs_diff(x, y)).fold(0.0, f64::max);
        g = next;
        if delta < 1e-16 {
            break;
        }
    }
    let mut m = &zi - &a[0];
    for j in 0..2 * d {
        m -= &a[star(d, j + 1)] * &g[j] * &a[j + 1];
    }
    Some((m.try_inverse()?, g))
}

/// `B(z)` on `ℂ^n ⊗ ℂ^N ⊗ ℂ^{2d}`, index `(c·N + x)·2d + color`.
#[derive(Clone, Debug)]
pub struct NbOperatorZ {
    pub d: usize,
    pub n: usize,
    pub size: usize,
    pub matrix: CMat,
}

impl NbOperatorZ {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Block `(j, i)` acting from color `i` to color `j`.
    pub fn color_block(&self, j: usize, i: usize) -> CMat {
        let m = self.n * self.size;
        let c = 2 * self.d;
        CMat::from_fn(m, m, |r, s| self.matrix[(r * c + j, s * c + i)])
    }
}

/// `U_i`, `i = 1..=2d`, of a model sample.
pub fn sample_generators(sample: &ModelSample) -> Vec<CMat> {
    (1..=2 * sample.d).map(|i| sample.generator(i)).collect()
}

/// `λ(g_i)` compressed to the ball of radius `radius`, `i = 1..=2d`.
pub fn truncated_regular_generators(d: usize, radius: usize) -> Result<Vec<CMat>, ResolventError> {
    let ball = Ball::new(d, radius)?;
    let size = ball.size();
    if size > DENSE_CAP {
        return Err(ResolventError::Capacity(size));
    }
    Ok((1..=2 * d)
        .map(|i| {
            let mut m = CMat::zeros(size, size);
            for h in 0..size {
                if let Some(g) = ball.left_mul(i, h) {
                    m[(g, h)] = ONE;
                }
            }
            m
        })
        .collect())
}

/// Dense `B(z) = Σ_{i≠j*} b_i ⊗ u_i ⊗ E_{ji}` with `b_i = γ_i a_i`.
pub fn assemble_nb_z(fam: &CoefficientFamily, gens: &[CMat], diag: &ResolventDiagonal) -> Result<NbOperatorZ, ResolventError> {
    let d = fam.d;
    if gens.len() != 2 * d {
        return Err(ResolventError::Rank { model: gens.len() / 2, coeffs: d });
    }
    let n = fam.n;
    let size = gens[0].nrows();
    let dim = n * size * 2 * d;
    if dim > DENSE_CAP {
        return Err(ResolventError::Capacity(dim));
    }
    let mut matrix = CMat::zeros(dim, dim);
    for i in 0..2 * d {
        let bi = &diag.gamma_i[i] * &fam.a[i + 1];
        let block = kron(&bi, &gens[i]);
        let is = star(d, i + 1) - 1;
        for j in (0..2 * d).filter(|&j| j != is) {
            for r in 0..n * size {
                for s in 0..n * size {
                    let v = block[(r, s)];
                    if v != ZERO {
                        matrix[(r * 2 * d + j, s * 2 * d + i)] = v;
                    }
                }
            }
        }
    }
    Ok(NbOperatorZ { d, n, size, matrix })
}

/// `A = a_0 ⊗ 1 + Σ a_i ⊗ U_i`.
pub fn assemble_a(fam: &CoefficientFamily, gens: &[CMat]) -> CMat {
    let size = gens[0].nrows();
    let mut a = kron(&fam.a[0], &linalg::eye(size));
    for i in 0..2 * fam.d {
        a += kron(&fam.a[i + 1], &gens[i]);
    }
    a
}

#[derive(Clone, Copy, Debug)]
pub struct IdentityOptions {
    pub depth: usize,
    /// Minimum `|z|`; `None` uses `10(1 + Σ‖a_i‖)`.
    pub z_min: Option<f64>,
    /// Refuse `|z| < z_min` instead of only reporting.
    pub enforce: bool,
}

impl Default for IdentityOptions {
    fn default() -> Self {
        Self { depth: DEFAULT_DEPTH, z_min: None, enforce: true }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub z_re: f64,
    pub z_im: f64,
    pub z_min: f64,
    pub depth: usize,
    pub residual: f64,
    pub tail_bound: f64,
    pub cond: f64,
    pub lhs_scale: f64,
}

fn condition_number(m: &CMat) -> f64 {
    let sv = m.clone().singular_values();
    let hi = sv.iter().cloned().fold(0.0, f64::max);
    let lo = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Both sides of the identity on the model given by `gens`; returns the
/// entrywise maximum of their difference.
pub fn verify_identity_with(fam: &CoefficientFamily, gens: &[CMat], z: C64, opts: &IdentityOptions) -> Result<IdentityReport, ResolventError> {
    let d = fam.d;
    let z_min = opts.z_min.unwrap_or_else(|| default_z_min(fam));
    if opts.enforce && z.norm() < z_min {
        return Err(ResolventError::BelowZMin { modulus: z.norm(), z_min });
    }
    let diag = resolvent_diagonal(fam, z, opts.depth)?;
    let b = assemble_nb_z(fam, gens, &diag)?;
    let size = b.size;
    let m = fam.n * size;
    let dim = b.dim();
    let a = assemble_a(fam, gens);
    let lhs = (linalg::eye(m) * z - &a).try_inverse().ok_or(ResolventError::Singular(f64::INFINITY))?;
    let one_minus_b = linalg::eye(dim) - &b.matrix;
    let cond = condition_number(&one_minus_b);
    if !cond.is_finite() || cond > 1e12 {
        return Err(ResolventError::Singular(cond));
    }
    let inv = one_minus_b.lu().try_inverse().ok_or(ResolventError::Singular(cond))?;
    let scale = C64::new(1.0 / (2 * d - 1) as f64, 0.0);
    let middle = &inv * (linalg::eye(dim) + &b.matrix * scale);
    // P̂ M P̂* = (1/2d) Σ_{i,j} M[(·,i),(·,j)]
    let c = 2 * d;
    let inv_c = C64::new(1.0 / c as f64, 0.0);
    let mut compressed = CMat::zeros(m, m);
    for r in 0..m {
        for s in 0..m {
            let mut acc = ZERO;
            for i in 0..c {
                for j in 0..c {
                    acc += middle[(r * c + i, s * c + j)];
                }
            }
            compressed[(r, s)] = acc * inv_c;
        }
    }
    let rhs = compressed * kron(&diag.gamma, &linalg::eye(size));
    Ok(IdentityReport {
        z_re: z.re,
        z_im: z.im,
        z_min,
        depth: opts.depth,
        residual: max_abs_diff(&lhs, &rhs),
        tail_bound: diag.tail_bound,
        cond,
        lhs_scale: max_abs(&lhs),
    })
}

pub fn verify_identity(fam: &CoefficientFamily, sample: &ModelSample, z: C64, opts: &IdentityOptions) -> Result<IdentityReport, ResolventError> {
    if sample.d != fam.d {
        return Err(ResolventError::Rank { model: sample.d, coeffs: fam.d });
    }
    verify_identity_with(fam, &sample_generators(sample), z, opts)
}

/// Residuals along a list of `z` values; points that fail are skipped with
/// their error kept alongside.
pub fn z_sweep(
    fam: &CoefficientFamily,
    gens: &[CMat],
    zs: &[C64],
    opts: &IdentityOptions,
) -> Vec<(C64, Result<IdentityReport, String>)> {
    zs.iter().map(|&z| (z, verify_identity_with(fam, gens, z, opts).map_err(|e| e.to_string()))).collect()
}

pub fn complex(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix_models::ModelKind;
    use crate::rng::seeded;
    use crate::star_ops::power_entry;

    #[test]
    fn series_matches_power_table() {
        let mut rng = seeded(1);
        let fam = CoefficientFamily::random_selfadjoint(2, 2, &mut rng);
        let s = walk_series(&fam, 6);
        for k in 0..=6 {
            let e = power_entry(&fam, k, &crate::freegroup::ReducedWord::unit(2)).unwrap();
            assert!(max_abs_diff(&e, &s.root[k]) < 1e-10, "k = {k}");
        }
    }

    #[test]
    fn constant_term_only() {
        let mut fam = CoefficientFamily::zero(2, 2);
        fam.a[0] = CMat::from_fn(2, 2, |i, j| C64::new((i + 2 * j) as f64, 0.0));
        fam.a[0] = &fam.a[0] + fam.a[0].adjoint();
        let z = complex(20.0, 1.0);
        let diag = resolvent_diagonal(&fam, z, 80).unwrap();
        let exact = (linalg::eye(2) * z - &fam.a[0]).try_inverse().unwrap();
        assert!(max_abs_diff(&diag.gamma, &exact) < 1e-14);
        let sample = ModelSample::draw(ModelKind::Unitary, 5, 2, 3).unwrap();
        let b = assemble_nb_z(&fam, &sample_generators(&sample), &diag).unwrap();
        assert_eq!(max_abs(&b.matrix), 0.0);
        let r = verify_identity(&fam, &sample, complex(100.0, 0.0), &IdentityOptions::default()).unwrap();
        assert!(r.residual < 1e-15);
    }

    #[test]
    fn scalar_fixed_points() {
        let fam = CoefficientFamily::kesten(2);
        let z = complex(10.0, 0.0);
        let diag = resolvent_diagonal(&fam, z, 40).unwrap();
        let (g, gi) = fixed_point_gammas(&fam, z, 500).unwrap();
        for i in 0..4 {
            let x = diag.gamma_i[i][(0, 0)];
            assert!((x - gi[i][(0, 0)]).norm() <= diag.tail_bound + 1e-15);
            assert!((x - ONE / (z - x * 3.0)).norm() <= 10.0 * diag.tail_bound + 1e-15);
        }
        let x = diag.gamma_i[0][(0, 0)];
        assert!((diag.gamma[(0, 0)] - ONE / (z - x * 4.0)).norm() <= 10.0 * diag.tail_bound + 1e-15);
        assert!((diag.gamma[(0, 0)] - g[(0, 0)]).norm() <= diag.tail_bound + 1e-15);
    }

    #[test]
    fn schwarz_reflection() {
        let mut rng = seeded(2);
        let fam = CoefficientFamily::random_selfadjoint(2, 2, &mut rng);
        let z = complex(30.0, 7.0);
        let a = resolvent_diagonal(&fam, z, 60).unwrap();
        let b = resolvent_diagonal(&fam, z.conj(), 60).unwrap();
        assert!(max_abs_diff(&a.gamma, &b.gamma.adjoint()) < 1e-14);
    }

    #[test]
    fn sparsity_pattern() {
        let fam = CoefficientFamily::kesten(1);
        let diag = resolvent_diagonal(&fam, complex(10.0, 0.0), 30).unwrap();
        let sample = ModelSample::draw(ModelKind::Unitary, 3, 1, 1).unwrap();
        let b = assemble_nb_z(&fam, &sample_generators(&sample), &diag).unwrap();
        // d = 1: colors {1, 2} with 2 = 1*; only diagonal color blocks survive
        assert_eq!(max_abs(&b.color_block(1, 0)), 0.0);
        assert_eq!(max_abs(&b.color_block(0, 1)), 0.0);
        assert!(max_abs(&b.color_block(0, 0)) > 0.0);
    }

    #[test]
    fn identity_unit_coefficients() {
        let fam = CoefficientFamily::kesten(2);
        let sample = ModelSample::draw(ModelKind::Unitary, 40, 2, 7).unwrap();
        let opts = IdentityOptions { z_min: Some(10.0), ..Default::default() };
        let r = verify_identity(&fam, &sample, complex(10.0, 0.0), &opts).unwrap();
        assert!(r.residual <= 1e-8 + r.tail_bound, "{r:?}");
    }

    #[test]
    fn identity_random_matrix_coefficients() {
        let mut rng = seeded(4);
        let fam = CoefficientFamily::random_selfadjoint(3, 2, &mut rng);
        let sample = ModelSample::draw(ModelKind::Permutation, 20, 3, 8).unwrap();
        let z = complex(default_z_min(&fam), 3.0);
        let r = verify_identity(&fam, &sample, z, &IdentityOptions::default()).unwrap();
        assert!(r.residual <= 1e-8 + r.tail_bound, "{r:?}");
    }

    #[test]
    fn residual_shrinks_with_depth() {
        let fam = CoefficientFamily::kesten(2);
        let sample = ModelSample::draw(ModelKind::Unitary, 20, 2, 9).unwrap();
        let z = complex(6.0, 0.0);
        let res: Vec<f64> = [4, 8, 16]
            .iter()
            .map(|&depth| verify_identity(&fam, &sample, z, &IdentityOptions { depth, z_min: None, enforce: false }).unwrap().residual)
            .collect();
        assert!(res[0] > res[1] && res[1] > res[2], "{res:?}");
    }

    #[test]
    fn below_z_min_is_refused() {
        let fam = CoefficientFamily::kesten(2);
        let sample = ModelSample::draw(ModelKind::Unitary, 5, 2, 1).unwrap();
        assert!(matches!(
            verify_identity(&fam, &sample, complex(20.0, 0.0), &IdentityOptions::default()),
            Err(ResolventError::BelowZMin { .. })
        ));
        assert!(matches!(resolvent_diagonal(&fam, complex(3.0, 0.0), 10), Err(ResolventError::InsideRadius { .. })));
    }

    #[test]
    fn truncated_free_model() {
        let fam = CoefficientFamily::kesten(2);
        let gens = truncated_regular_generators(2, 3).unwrap();
        let opts = IdentityOptions { z_min: Some(10.0), ..Default::default() };
        let r = verify_identity_with(&fam, &gens, complex(12.0, 0.0), &opts);
        // truncated generators are not unitary, so only the shape is checked here
        assert!(r.is_ok());
    }
}
