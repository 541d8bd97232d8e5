//! Degree reduction for polynomials `P = Σ_{g∈B_l} a_g ⊗ u(g)` in unitaries:
//! self-adjointization, halving with `‖P‖ = ‖Q‖² − θ`, iteration down to
//! degree one, transfer of relative norm errors back to degree `l`, and a
//! quadratic probe for spectral gaps.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::freegroup::{Ball, FreeGroupError, ReducedWord};
use crate::linalg::{self, hermitian_eigenvalues, hermitian_norm, kron, lanczos_extremes, op_norm, CMat, LanczosOptions, C64};
use crate::star_ops::{GroupOperator, StarError};

pub type PolynomialOperator = GroupOperator;

pub const PSD_CLIP: f64 = 1e-10;
pub const DENSE_CAP: usize = 4000;
/// Above this dimension norms are computed matrix-free.
pub const DENSE_NORM_LIMIT: usize = 600;

#[derive(Debug, Error)]
pub enum LinearizationError {
    #[error("degree {0} is odd; pad with a zero layer first")]
    OddDegree(usize),
    #[error("operator is not selfadjoint")]
    NotSelfadjoint,
    #[error("matrix of dimension {0} exceeds the dense cap {1}")]
    Capacity(usize, usize),
    #[error("smallest eigenvalue {0} of ã + ‖ã‖ is negative")]
    NotPsd(f64),
    #[error("expected {expected} unitaries, got {got}")]
    Unitaries { expected: usize, got: usize },
    #[error("transfer needs ε ≤ (2d)^(-l) l^(-2) = {limit}, got {eps}")]
    Guard { eps: f64, limit: f64 },
    #[error("invalid interval: x = {x}, y = {y}")]
    Interval { x: f64, y: f64 },
    #[error("bad json: {0}")]
    Json(String),
    #[error(transparent)]
    Group(#[from] FreeGroupError),
    #[error(transparent)]
    Star(#[from] StarError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermJson {
    pub word: Vec<usize>,
    pub matrix: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolynomialJson {
    pub d: usize,
    pub n: usize,
    pub terms: Vec<TermJson>,
}

pub fn to_json(p: &PolynomialOperator) -> PolynomialJson {
    PolynomialJson {
        d: p.d,
        n: p.n,
        terms: p.terms.iter().map(|(w, m)| TermJson { word: w.letters(), matrix: linalg::to_pairs(m) }).collect(),
    }
}

pub fn from_json(j: &PolynomialJson) -> Result<PolynomialOperator, LinearizationError> {
    let mut terms = Vec::with_capacity(j.terms.len());
    for t in &j.terms {
        let w = ReducedWord::new(j.d, &t.word)?;
        let m = linalg::from_pairs(j.n, &t.matrix).ok_or_else(|| LinearizationError::Json(format!("matrix for {w} has wrong size")))?;
        terms.push((w, m));
    }
    Ok(GroupOperator::new(j.d, j.n, terms))
}

/// Selfadjoint polynomial with Gaussian coefficients on every word of
/// `B_l`, scaled by `(n |B_l|)^{-1/2}`.
pub fn random_selfadjoint_polynomial<R: Rng>(rng: &mut R, d: usize, n: usize, l: usize) -> Result<PolynomialOperator, LinearizationError> {
    let ball = Ball::new(d, l)?;
    let s = C64::new(1.0 / (ball.size() as f64 * n as f64).sqrt(), 0.0);
    let mut terms: std::collections::BTreeMap<ReducedWord, CMat> = Default::default();
    for w in ball.words() {
        if terms.contains_key(&w) {
            continue;
        }
        let g = linalg::complex_gaussian(rng, n, n) * s;
        if w.is_unit() {
            terms.insert(w, (&g + g.adjoint()) * C64::new(0.5, 0.0));
        } else {
            terms.insert(w.inverse(), g.adjoint());
            terms.insert(w, g);
        }
    }
    Ok(GroupOperator::new(d, n, terms.into_iter().collect()))
}

/// `U(g)` for the homomorphism `g_i ↦ U_i`.
pub fn word_unitary(w: &ReducedWord, us: &[CMat]) -> CMat {
    let d = us.len();
    let n = us.first().map(|u| u.nrows()).unwrap_or(0);
    let mut out = linalg::eye(n);
    for l in w.letters() {
        if l <= d {
            out *= &us[l - 1];
        } else {
            out *= us[l - d - 1].adjoint();
        }
    }
    out
}

/// `Σ_g a_g ⊗ U(g)`.
pub fn evaluate(p: &PolynomialOperator, us: &[CMat]) -> Result<CMat, LinearizationError> {
    if us.len() != p.d {
        return Err(LinearizationError::Unitaries { expected: p.d, got: us.len() });
    }
    let big = us.first().map(|u| u.nrows()).unwrap_or(1);
    let dim = p.n * big;
    if dim > DENSE_CAP {
        return Err(LinearizationError::Capacity(dim, DENSE_CAP));
    }
    let mut out = CMat::zeros(dim, dim);
    for (w, a) in &p.terms {
        out += kron(a, &word_unitary(w, us));
    }
    Ok(out)
}

pub fn evaluated_norm(p: &PolynomialOperator, us: &[CMat]) -> Result<f64, LinearizationError> {
    if us.len() != p.d {
        return Err(LinearizationError::Unitaries { expected: p.d, got: us.len() });
    }
    let big = us.first().map(|u| u.nrows()).unwrap_or(1);
    if p.n * big <= DENSE_NORM_LIMIT {
        let m = evaluate(p, us)?;
        return Ok(if p.is_selfadjoint(1e-12) { hermitian_norm(&m) } else { op_norm(&m) });
    }
    let ev = KronEvaluation::new(p, us);
    let opts = LanczosOptions { max_iter: 600, rel_tol: 1e-14, ..Default::default() };
    let dim = ev.dim();
    Ok(if p.is_selfadjoint(1e-12) {
        lanczos_extremes(dim, |x, y| ev.apply(x, y, false), &[], &opts).norm()
    } else {
        let mut tmp = vec![C64::new(0.0, 0.0); dim];
        let tmp = std::cell::RefCell::new(&mut tmp);
        let r = lanczos_extremes(
            dim,
            |x, y| {
                let mut t = tmp.borrow_mut();
                ev.apply(x, &mut t, false);
                ev.apply(&t, y, true);
            },
            &[],
            &opts,
        );
        r.highest.max(0.0).sqrt()
    })
}

/// `P(U)` as an action on `ℂ^n ⊗ ℂ^N` without forming the Kronecker products.
struct KronEvaluation {
    n: usize,
    big: usize,
    // (a_g, U(g)^T)
    terms: Vec<(CMat, CMat)>,
}

impl KronEvaluation {
    fn new(p: &PolynomialOperator, us: &[CMat]) -> Self {
        let big = us.first().map(|u| u.nrows()).unwrap_or(1);
        let terms = p.terms.iter().map(|(w, a)| (a.clone(), word_unitary(w, us).transpose())).collect();
        KronEvaluation { n: p.n, big, terms }
    }

    fn dim(&self) -> usize {
        self.n * self.big
    }

    /// `y = P x` or `y = P* x`; index `c·N + x` is row `c`, column `x`.
    fn apply(&self, x: &[C64], y: &mut [C64], adjoint: bool) {
        let xm = CMat::from_row_slice(self.n, self.big, x);
        let mut out = CMat::zeros(self.n, self.big);
        for (a, ut) in &self.terms {
            if adjoint {
                out += a.adjoint() * &xm * ut.adjoint();
            } else {
                out += a * &xm * ut;
            }
        }
        for c in 0..self.n {
            for j in 0..self.big {
                y[c * self.big + j] = out[(c, j)];
            }
        }
    }
}

/// Upper bound on `‖P_Γ‖`: the smaller of the triangle inequality and the
/// sphere-resolved Haagerup bound of `P` and of `P²`.
pub fn free_norm_upper(p: &PolynomialOperator) -> f64 {
    let tri: f64 = p.terms.values().map(op_norm).sum();
    tri.min(p.haagerup_upper(1)).min(p.haagerup_upper(2))
}

/// Smallest even degree `≥ deg P`.
fn pad_degree(p: &PolynomialOperator) -> usize {
    let l = p.degree();
    if l % 2 == 1 {
        l + 1
    } else {
        l
    }
}

#[derive(Debug, Clone)]
pub struct HalvingResult {
    pub degree: usize,
    pub input: PolynomialOperator,
    pub q: PolynomialOperator,
    pub theta: f64,
    pub a_tilde_norm: f64,
    pub ball_size: usize,
    pub psd_min: f64,
}

impl HalvingResult {
    /// `‖Q(U)‖² − θ` against `‖P(U)‖` for finite unitaries.
    pub fn identity_residual(&self, us: &[CMat]) -> Result<(f64, f64), LinearizationError> {
        let lhs = evaluated_norm(&self.input, us)?;
        let q = evaluated_norm(&self.q, us)?;
        Ok((lhs, q * q - self.theta))
    }
}

/// One halving step. `p` must be selfadjoint with its norm at the right end
/// of the spectrum; use [`halve`] to selfadjointize first.
pub fn halve_degree(p: &PolynomialOperator) -> Result<HalvingResult, LinearizationError> {
    if !p.is_selfadjoint(1e-12) {
        return Err(LinearizationError::NotSelfadjoint);
    }
    let l = p.degree();
    if l % 2 == 1 {
        return Err(LinearizationError::OddDegree(l));
    }
    let h = l / 2;
    let ball = Ball::new(p.d, h)?;
    let words: Vec<ReducedWord> = ball.words().collect();
    let mm = words.len();
    let n = p.n;
    let dim = mm * n;
    if dim > DENSE_CAP {
        return Err(LinearizationError::Capacity(dim, DENSE_CAP));
    }
    let mut diffs = vec![vec![None; mm]; mm];
    let mut counts: std::collections::HashMap<ReducedWord, usize> = Default::default();
    for (a, g) in words.iter().enumerate() {
        let gi = g.inverse();
        for (b, hh) in words.iter().enumerate() {
            let w = gi.concat_reduce(hh)?;
            *counts.entry(w.clone()).or_insert(0) += 1;
            diffs[a][b] = Some(w);
        }
    }
    let mut at = CMat::zeros(dim, dim);
    for a in 0..mm {
        for b in 0..mm {
            let w = diffs[a][b].as_ref().unwrap();
            if let Some(c) = p.terms.get(w) {
                let s = C64::new(1.0 / counts[w] as f64, 0.0);
                at.view_mut((a * n, b * n), (n, n)).copy_from(&(c * s));
            }
        }
    }
    let (vals, vecs) = linalg::hermitian_eigh(&at);
    let an = vals.first().map(|v| v.abs()).unwrap_or(0.0).max(vals.last().map(|v| v.abs()).unwrap_or(0.0));
    let shifted: Vec<f64> = vals.iter().map(|v| v + an).collect();
    let psd_min = shifted.first().copied().unwrap_or(0.0);
    if psd_min < -PSD_CLIP * an.max(1.0) {
        return Err(LinearizationError::NotPsd(psd_min));
    }
    let mut root = CMat::zeros(dim, dim);
    for (i, s) in shifted.iter().enumerate() {
        root[(i, i)] = C64::new(s.max(0.0).sqrt(), 0.0);
    }
    let bt = &vecs * root * vecs.adjoint();
    let unit = ball.index_of(&ReducedWord::unit(p.d)).expect("unit in ball");
    let mut terms = Vec::with_capacity(mm);
    for (a, g) in words.iter().enumerate() {
        // b̃ · (e_{g,𝔬} ⊗ 1): block column g of b̃ moved to block column 𝔬
        let mut bg = CMat::zeros(dim, dim);
        bg.view_mut((0, unit * n), (dim, n)).copy_from(&bt.view((0, a * n), (dim, n)));
        terms.push((g.clone(), bg));
    }
    Ok(HalvingResult {
        degree: l,
        input: p.clone(),
        q: GroupOperator::new(p.d, dim, terms),
        theta: an * mm as f64,
        a_tilde_norm: an,
        ball_size: mm,
        psd_min,
    })
}

/// Selfadjointize, pad odd degrees, then halve.
pub fn halve(p: &PolynomialOperator) -> Result<HalvingResult, LinearizationError> {
    let s = p.selfadjointize();
    let l = pad_degree(&s);
    let s = if l != s.degree() {
        // a zero coefficient on one word of length l marks the padded degree
        let letters = vec![1usize; l];
        let mut t = s.clone();
        t.terms.insert(ReducedWord::new(s.d, &letters)?, CMat::zeros(s.n, s.n));
        t
    } else {
        s
    };
    halve_degree(&s)
}

#[derive(Debug, Clone)]
pub struct LinearizationChain {
    pub degree: usize,
    pub steps: Vec<HalvingResult>,
}

impl LinearizationChain {
    pub fn final_operator(&self) -> Option<&PolynomialOperator> {
        self.steps.last().map(|s| &s.q)
    }

    pub fn dimensions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.q.n).collect()
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.theta).collect()
    }

    /// Recovers `‖P‖` from the norm of the last operator.
    pub fn compose_norm(&self, last: f64) -> f64 {
        self.steps.iter().rev().fold(last, |acc, s| acc * acc - s.theta)
    }

    /// `n_m ≤ 2l(2d)^{2l}` times the input dimension.
    pub fn dimension_bound_holds(&self, n: usize, d: usize) -> bool {
        let l = self.degree as f64;
        let bound = n as f64 * 2.0 * l * (2.0 * d as f64).powf(2.0 * l);
        self.dimensions().last().map(|&m| m as f64 <= bound).unwrap_or(true)
    }

    /// `‖P(U)‖` against the chain evaluated through the degree-one operator.
    pub fn round_trip(&self, p: &PolynomialOperator, us: &[CMat]) -> Result<(f64, f64), LinearizationError> {
        let direct = evaluated_norm(p, us)?;
        match self.final_operator() {
            Some(q) => Ok((direct, self.compose_norm(evaluated_norm(q, us)?))),
            None => Ok((direct, direct)),
        }
    }
}

/// Iterated halving down to degree at most one.
pub fn linearize(p: &PolynomialOperator) -> Result<LinearizationChain, LinearizationError> {
    let degree = p.degree();
    let mut steps = Vec::new();
    let mut cur = p.clone();
    while cur.degree() > 1 {
        let step = halve(&cur)?;
        cur = step.q.clone();
        steps.push(step);
    }
    Ok(LinearizationChain { degree, steps })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferReport {
    pub steps: usize,
    pub recursion: f64,
    pub closed_form: f64,
    pub factor: f64,
}

/// Relative error at degree `l` from relative error `eps` at degree one:
/// `ε_{k−1} = 4 ε_k (2d)^{2^{m−k}}` and the closed form `4 l² (2d)^{2l} ε`.
pub fn transfer_bounds(l: usize, d: usize, eps: f64) -> Result<TransferReport, LinearizationError> {
    let l = l.max(1);
    let twod = 2.0 * d as f64;
    let limit = twod.powi(-(l as i32)) / (l * l) as f64;
    if eps < 0.0 || eps > limit {
        return Err(LinearizationError::Guard { eps, limit });
    }
    let m = if l <= 1 { 0 } else { (usize::BITS - (l - 1).leading_zeros()) as usize };
    let mut e = eps;
    for k in (1..=m).rev() {
        e = 4.0 * e * twod.powi(1 << (m - k));
    }
    let factor = 4.0 * (l * l) as f64 * twod.powi(2 * l as i32);
    Ok(TransferReport { steps: m, recursion: e, closed_form: factor * eps, factor })
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub x: f64,
    pub y: f64,
    pub c: f64,
    pub theta: f64,
    pub q_norm: f64,
    pub q_free_lower: f64,
    pub free_gap_consistent: bool,
    pub eps: f64,
    pub eta: f64,
    pub certified_gap: Option<(f64, f64)>,
    pub gap_verified: Option<bool>,
    pub distance_bound: Option<f64>,
}

/// `f(P)` for `f(λ) = θ + (y − λ)(λ − x)`.
pub fn quadratic(p: &PolynomialOperator, x: f64, y: f64, theta: f64) -> PolynomialOperator {
    let n = p.n;
    let unit = ReducedWord::unit(p.d);
    let mut terms = vec![(unit, linalg::eye(n) * C64::new(theta - x * y, 0.0))];
    for (w, a) in &p.terms {
        terms.push((w.clone(), a * C64::new(x + y, 0.0)));
    }
    let sq = p.compose(p);
    for (w, a) in &sq.terms {
        terms.push((w.clone(), -a));
    }
    GroupOperator::new(p.d, n, terms)
}

/// Spectral gap probe: with `c ≥ ‖P_Γ‖` and `θ = 2c²`, `‖f(P)‖ > θ` iff
/// `σ(P)` meets `(x, y)`. A relative excess `ε = ‖Q‖/θ − 1` leaves
/// `(x + η, y − η)` free of `σ(P)`, `η = 4εc²/(y − x)`; for `x = y`,
/// `dist(x, σ(P)) ≤ c√(2ε)` with `ε = 1 − ‖Q‖/θ`.
pub fn quadratic_spectrum_probe(
    p: &PolynomialOperator,
    x: f64,
    y: f64,
    us: &[CMat],
    radius: usize,
) -> Result<GapReport, LinearizationError> {
    if !p.is_selfadjoint(1e-12) {
        return Err(LinearizationError::NotSelfadjoint);
    }
    if !(x <= y) || !x.is_finite() || !y.is_finite() {
        return Err(LinearizationError::Interval { x, y });
    }
    let c = free_norm_upper(p);
    if x < -c || y > c {
        return Err(LinearizationError::Interval { x, y });
    }
    let theta = 2.0 * c * c;
    let q = quadratic(p, x, y, theta);
    let q_norm = evaluated_norm(&q, us)?;
    let q_free_lower = q.truncated_norm(radius)?;
    let free_gap_consistent = q_free_lower <= theta * (1.0 + 1e-9);
    let spectrum = hermitian_eigenvalues(&evaluate(p, us)?);
    if x == y {
        let eps = (1.0 - q_norm / theta).max(0.0);
        return Ok(GapReport {
            x,
            y,
            c,
            theta,
            q_norm,
            q_free_lower,
            free_gap_consistent,
            eps,
            eta: 0.0,
            certified_gap: None,
            gap_verified: None,
            distance_bound: Some(c * (2.0 * eps).sqrt()),
        });
    }
    let eps = (q_norm / theta - 1.0).max(0.0);
    let eta = 4.0 * eps * c * c / (y - x);
    let certified_gap = if free_gap_consistent && y > x + 2.0 * eta { Some((x + eta, y - eta)) } else { None };
    let gap_verified = certified_gap.map(|(a, b)| spectrum.iter().all(|&s| s <= a + 1e-9 || s >= b - 1e-9));
    Ok(GapReport {
        x,
        y,
        c,
        theta,
        q_norm,
        q_free_lower,
        free_gap_consistent,
        eps,
        eta,
        certified_gap,
        gap_verified,
        distance_bound: None,
    })
}
