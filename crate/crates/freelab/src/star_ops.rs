//! Exact computations with the free operator `A★ = a_0 ⊗ 1 + Σ_i a_i ⊗ λ(g_i)`
//! on `ℂ^n ⊗ ℓ²(F_d)`: entries of powers, the non-backtracking
//! decomposition, corner operators, moments and certified norm brackets.

use std::collections::BTreeMap;

use num_complex::Complex64;
use thiserror::Error;

use crate::coeffs::CoefficientFamily;
use crate::freegroup::{Ball, FreeGroupError, ReducedWord};
use crate::linalg::{self, lanczos_extremes, CMat, LanczosOptions, C64, ZERO};

/// Largest dimension for which truncations are diagonalized densely.
pub const DENSE_LIMIT: usize = 1200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StarError {
    #[error(transparent)]
    Group(#[from] FreeGroupError),
    #[error("exponent p = {0} must be even and positive")]
    OddExponent(usize),
    #[error("generator index {0} out of range")]
    Generator(usize),
    #[error("k must be at least 1")]
    ZeroLength,
    #[error("cut points {0:?} are not strictly increasing inside (0, |g|)")]
    Cuts(Vec<usize>),
    #[error("rank mismatch between word and coefficients")]
    Rank,
    #[error("operator is not selfadjoint")]
    NotSelfadjoint,
}

// ---------------------------------------------------------------------------
// flat n×n block arithmetic

pub(crate) fn flat(m: &CMat) -> Vec<C64> {
    let n = m.nrows();
    let mut v = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

pub(crate) fn unflat(n: usize, v: &[C64]) -> CMat {
    CMat::from_fn(n, n, |i, j| v[i * n + j])
}

/// `out += a * b` for row-major `n × n` blocks.
#[inline]
pub(crate) fn gemm_acc(out: &mut [C64], a: &[C64], b: &[C64], n: usize) {
    if n == 1 {
        out[0] += a[0] * b[0];
        return;
    }
    for i in 0..n {
        for k in 0..n {
            let x = a[i * n + k];
            if x == ZERO {
                continue;
            }
            let row = &b[k * n..k * n + n];
            let o = &mut out[i * n..i * n + n];
            for j in 0..n {
                o[j] += x * row[j];
            }
        }
    }
}

fn block_is_zero(b: &[C64]) -> bool {
    b.iter().all(|z| *z == ZERO)
}

/// Operator norm of a row-major `n × n` block.
pub(crate) fn block_norm(b: &[C64], n: usize) -> f64 {
    match n {
        1 => b[0].norm(),
        2 => {
            // singular values of a 2x2 matrix from the Gram matrix
            let (a, c, bb, d) = (b[0], b[1], b[2], b[3]);
            let p = a.norm_sqr() + c.norm_sqr();
            let q = bb.norm_sqr() + d.norm_sqr();
            let r = a * bb.conj() + c * d.conj();
            let half = 0.5 * (p + q);
            let disc = (0.25 * (p - q) * (p - q) + r.norm_sqr()).sqrt();
            (half + disc).max(0.0).sqrt()
        }
        _ => linalg::op_norm(&unflat(n, b)),
    }
}

fn family_blocks(fam: &CoefficientFamily) -> Vec<Vec<C64>> {
    fam.a.iter().map(flat).collect()
}

// ---------------------------------------------------------------------------
// entries of powers

/// `(A★^ℓ)_{g𝔬}` for every `g` in the ball of radius `ℓ`.
#[derive(Clone, Debug)]
pub struct PowerTable {
    pub ball: Ball,
    pub n: usize,
    pub power: usize,
    data: Vec<C64>,
}

impl PowerTable {
    pub fn block(&self, idx: usize) -> CMat {
        unflat(self.n, &self.data[idx * self.n * self.n..(idx + 1) * self.n * self.n])
    }

    pub fn raw(&self, idx: usize) -> &[C64] {
        &self.data[idx * self.n * self.n..(idx + 1) * self.n * self.n]
    }

    pub fn entry(&self, g: &ReducedWord) -> CMat {
        match self.ball.index_of(g) {
            Some(i) => self.block(i),
            None => linalg::zeros(self.n),
        }
    }
}

/// Runs the transfer recursion `E_k(h) = Σ_{i=0}^{2d} a_i E_{k-1}(g_i^{-1} h)`
/// for `k = 1..=ℓ` and returns `E_ℓ` on the radius-`ℓ` ball.
pub fn power_table(fam: &CoefficientFamily, l: usize) -> Result<PowerTable, StarError> {
    let ball = Ball::new(fam.d, l)?;
    let data = power_walk(fam, &ball, l, None, |_, _| {});
    Ok(PowerTable { ball, n: fam.n, power: l, data })
}

/// Generic DP on `ball`, starting from `start` (default `δ_𝔬 ⊗ 1`), with an
/// optional hook after each step.
fn power_walk<F>(fam: &CoefficientFamily, ball: &Ball, steps: usize, start: Option<Vec<C64>>, mut hook: F) -> Vec<C64>
where
    F: FnMut(usize, &[C64]),
{
    let n = fam.n;
    let nn = n * n;
    let a = family_blocks(fam);
    let size = ball.size();
    let mut cur = start.unwrap_or_else(|| {
        let mut v = vec![ZERO; size * nn];
        for i in 0..n {
            v[i * n + i] = linalg::ONE;
        }
        v
    });
    let mut next = vec![ZERO; size * nn];
    let two_d = 2 * fam.d;
    let a0_zero = block_is_zero(&a[0]);
    for step in 1..=steps {
        next.iter_mut().for_each(|z| *z = ZERO);
        let reach = ball.sphere_range((step - 1).min(ball.radius())).end;
        for x in 0..reach {
            let src = &cur[x * nn..(x + 1) * nn];
            if block_is_zero(src) {
                continue;
            }
            if !a0_zero {
                gemm_acc(&mut next[x * nn..(x + 1) * nn], &a[0], src, n);
            }
            for i in 1..=two_d {
                if let Some(y) = ball.left_mul(i, x) {
                    let (dst, src) = split_two(&mut next, &cur, y, x, nn);
                    gemm_acc(dst, &a[i], src, n);
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
        hook(step, &cur);
    }
    cur
}

fn split_two<'a>(next: &'a mut [C64], cur: &'a [C64], y: usize, x: usize, nn: usize) -> (&'a mut [C64], &'a [C64]) {
    (&mut next[y * nn..(y + 1) * nn], &cur[x * nn..(x + 1) * nn])
}

/// `(A★^ℓ)_{g𝔬}`; zero when `|g| > ℓ`.
pub fn power_entry(fam: &CoefficientFamily, l: usize, g: &ReducedWord) -> Result<CMat, StarError> {
    if g.rank() != fam.d {
        return Err(StarError::Rank);
    }
    if g.len() > l {
        return Ok(linalg::zeros(fam.n));
    }
    Ok(power_table(fam, l)?.entry(g))
}

/// `τ(A★^ℓ) = tr_n((A★^ℓ)_{𝔬𝔬}) / n`.
pub fn free_moment(fam: &CoefficientFamily, l: usize) -> Result<C64, StarError> {
    if fam.is_radial() {
        let m = radial_moments(fam, l, 1.0);
        return Ok(m[l]);
    }
    let t = power_table(fam, l)?;
    Ok(linalg::ntrace(&t.block(0)))
}

/// The sphere component `{(A★^ℓ)_{g𝔬}}_{g ∈ S_m}` of the non-backtracking
/// decomposition `A★^ℓ = Σ_m B★^{(ℓ,m)}`.
pub fn nb_component(fam: &CoefficientFamily, l: usize, m: usize) -> Result<Vec<(ReducedWord, CMat)>, StarError> {
    let t = power_table(fam, l)?;
    Ok(t.ball.sphere_range(m).map(|i| (t.ball.word(i), t.block(i))).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct NbDecompositionReport {
    /// `max |Σ_m B★^{(ℓ,m)} − A★^ℓ|` against the convolution power.
    pub star_residual: f64,
    /// Same identity with `λ(g)` replaced by `U(g)` for the given unitaries.
    pub model_residual: Option<f64>,
}

/// Checks `A^ℓ = Σ_m B^{(ℓ,m)}` entrywise, on the free side against the
/// convolution power of `A★` and, when `us = (U_1, ..., U_d)` is given, on
/// `ℂ^n ⊗ ℂ^N` against the dense power of `A_N`.
pub fn nb_decomposition_check(fam: &CoefficientFamily, l: usize, us: Option<&[CMat]>) -> Result<NbDecompositionReport, StarError> {
    let table = power_table(fam, l)?;
    let base = GroupOperator::from_family(fam);
    let mut pow = GroupOperator::new(fam.d, fam.n, vec![(ReducedWord::unit(fam.d), linalg::eye(fam.n))]);
    for _ in 0..l {
        pow = pow.compose(&base);
    }
    let mut star_residual = 0.0f64;
    let mut summed = 0usize;
    for m in 0..=l {
        for (g, block) in nb_component(fam, l, m)? {
            star_residual = star_residual.max(linalg::max_abs_diff(&block, &pow.coefficient(&g)));
            summed += 1;
        }
    }
    for g in pow.terms.keys() {
        if g.len() > l || table.ball.index_of(g).is_none() {
            star_residual = star_residual.max(linalg::max_abs(&pow.coefficient(g)));
        }
    }
    debug_assert_eq!(summed, table.ball.size());
    let model_residual = match us {
        None => None,
        Some(us) => {
            if us.len() != fam.d {
                return Err(StarError::Rank);
            }
            let big = us[0].nrows();
            let gens: Vec<CMat> = (1..=2 * fam.d).map(|i| if i <= fam.d { us[i - 1].clone() } else { us[i - fam.d - 1].adjoint() }).collect();
            let mut a = linalg::kron(&fam.a[0], &linalg::eye(big));
            for i in 1..=2 * fam.d {
                a += linalg::kron(&fam.a[i], &gens[i - 1]);
            }
            let mut direct = linalg::eye(fam.n * big);
            for _ in 0..l {
                direct = &direct * &a;
            }
            let mut total = CMat::zeros(fam.n * big, fam.n * big);
            for idx in 0..table.ball.size() {
                let g = table.ball.word(idx);
                let mut ug = linalg::eye(big);
                for letter in g.letters() {
                    ug = &ug * &gens[letter - 1];
                }
                total += linalg::kron(&table.block(idx), &ug);
            }
            Some(linalg::max_abs_diff(&total, &direct))
        }
    };
    Ok(NbDecompositionReport { star_residual, model_residual })
}

// ---------------------------------------------------------------------------
// corner operators

/// `(C★^{(k,i)})_{g𝔬} = ((A★^𝔬)^{k-1})_{g g_i} a_i` for all `g` in the ball of
/// radius `k`, for every `k' = 1..=k` (index `k' - 1`).
#[derive(Clone, Debug)]
pub struct CornerTable {
    pub ball: Ball,
    pub n: usize,
    pub generator: usize,
    layers: Vec<Vec<C64>>,
}

impl CornerTable {
    pub fn entry(&self, k: usize, g: &ReducedWord) -> CMat {
        match (k, self.ball.index_of(g)) {
            (1..=usize::MAX, Some(idx)) if k <= self.layers.len() => self.block(k, idx),
            _ => linalg::zeros(self.n),
        }
    }

    pub fn block(&self, k: usize, idx: usize) -> CMat {
        let nn = self.n * self.n;
        unflat(self.n, &self.layers[k - 1][idx * nn..(idx + 1) * nn])
    }

    pub fn max_k(&self) -> usize {
        self.layers.len()
    }
}

/// Corner entries for `k' = 1..=k` via walks of the `𝔬`-avoiding operator.
pub fn corner_table(fam: &CoefficientFamily, k: usize, i: usize) -> Result<CornerTable, StarError> {
    if k == 0 {
        return Err(StarError::ZeroLength);
    }
    if i == 0 || i > 2 * fam.d {
        return Err(StarError::Generator(i));
    }
    let ball = Ball::new(fam.d, k)?;
    let n = fam.n;
    let nn = n * n;
    let a = family_blocks(fam);
    let mut cur = vec![ZERO; ball.size() * nn];
    let gi = ball.left_mul(i, 0).expect("radius >= 1");
    cur[gi * nn..(gi + 1) * nn].copy_from_slice(&a[i]);
    let mut layers = vec![cur.clone()];
    for _ in 1..k {
        let mut next = vec![ZERO; ball.size() * nn];
        for x in 1..ball.size() {
            let src = &cur[x * nn..(x + 1) * nn];
            if block_is_zero(src) {
                continue;
            }
            gemm_acc(&mut next[x * nn..(x + 1) * nn], &a[0], src, n);
            for j in 1..=2 * fam.d {
                if let Some(y) = ball.left_mul(j, x) {
                    if y != 0 {
                        gemm_acc(&mut next[y * nn..(y + 1) * nn], &a[j], src, n);
                    }
                }
            }
        }
        cur = next;
        layers.push(cur.clone());
    }
    Ok(CornerTable { ball, n, generator: i, layers })
}

/// `(C★^{(k,i)})_{g𝔬}`; zero unless `g` is in `V_i`.
pub fn c_entry(fam: &CoefficientFamily, k: usize, i: usize, g: &ReducedWord) -> Result<CMat, StarError> {
    if g.rank() != fam.d {
        return Err(StarError::Rank);
    }
    if g.first_applied() != Some(i) || g.len() > k {
        if i == 0 || i > 2 * fam.d {
            return Err(StarError::Generator(i));
        }
        return Ok(linalg::zeros(fam.n));
    }
    Ok(corner_table(fam, k, i)?.entry(k, g))
}

/// Max-entry residual of the last-passage decomposition
/// `(A★^k)_{g𝔬} = Σ C^{(k_r,i_r)}_{h_r𝔬} ··· C^{(k_1,i_1)}_{h_1𝔬} (A★^{k_0})_{h_0𝔬}`
/// where `g = h_r ··· h_0` is cut at the given positions, counted in letters
/// from the right (`0 < c_1 < ... < c_r < |g|`).
pub fn path_decomposition_check(
    fam: &CoefficientFamily,
    k: usize,
    g: &ReducedWord,
    cuts: &[usize],
) -> Result<f64, StarError> {
    if g.rank() != fam.d {
        return Err(StarError::Rank);
    }
    let m = g.len();
    if cuts.windows(2).any(|w| w[0] >= w[1]) || cuts.iter().any(|&c| c == 0 || c >= m.max(1)) {
        return Err(StarError::Cuts(cuts.to_vec()));
    }
    let lhs = power_entry(fam, k, g)?;
    let n = fam.n;
    // parts h_0, h_1, ..., h_r from the right
    let mut bounds = vec![0usize];
    bounds.extend_from_slice(cuts);
    bounds.push(m);
    let parts: Vec<ReducedWord> = bounds
        .windows(2)
        .map(|w| {
            let (_, right) = g.split_right(w[1]);
            let (piece, _) = right.split_right(w[0]);
            piece
        })
        .collect();
    // s[t] = partial product for total length t
    let mut s: Vec<CMat> = Vec::with_capacity(k + 1);
    {
        let ball = Ball::new(fam.d, k.max(parts[0].len()))?;
        let h0 = ball.index_of(&parts[0]);
        let nn = n * n;
        let mut e0 = vec![linalg::zeros(n); k + 1];
        let pick = |data: &[C64]| match h0 {
            Some(idx) => unflat(n, &data[idx * nn..(idx + 1) * nn]),
            None => linalg::zeros(n),
        };
        let mut start = vec![ZERO; ball.size() * nn];
        for i in 0..n {
            start[i * n + i] = linalg::ONE;
        }
        e0[0] = pick(&start);
        power_walk(fam, &ball, k, Some(start), |step, data| e0[step] = pick(data));
        s.extend(e0);
    }
    for part in &parts[1..] {
        let i = part.first_applied().expect("nonempty part");
        let table = corner_table(fam, k.max(1), i)?;
        let c: Vec<CMat> = (1..=k).map(|kk| table.entry(kk, part)).collect();
        let mut next = vec![linalg::zeros(n); k + 1];
        for t in 0..=k {
            for kk in 1..=t {
                next[t] += &c[kk - 1] * &s[t - kk];
            }
        }
        s = next;
    }
    Ok(linalg::max_abs_diff(&lhs, &s[k]))
}

// ---------------------------------------------------------------------------
// Schatten norms and Haagerup bounds

/// `‖A★‖_p = τ(|A★|^p)^{1/p}` for even `p`, computed from the moments of the
/// self-adjointization.
pub fn schatten_norm_star(fam: &CoefficientFamily, p: usize) -> Result<f64, StarError> {
    if p == 0 || p % 2 == 1 {
        return Err(StarError::OddExponent(p));
    }
    let h = fam.hermitian_form();
    let m = free_moment(&h, p)?.re;
    Ok(m.max(0.0).powf(1.0 / p as f64))
}

/// Haagerup upper bound from the power `k = p/2`: with
/// `a(k,g) = (A★^k)_{g𝔬}`, `‖A★‖^k ≤ Σ_l (l+1) (Σ_{g∈S_l} ‖a(k,g)‖²)^{1/2}`.
pub fn haagerup_upper(fam: &CoefficientFamily, p: usize) -> Result<f64, StarError> {
    if p == 0 || p % 2 == 1 {
        return Err(StarError::OddExponent(p));
    }
    let h = fam.hermitian_form();
    let k = p / 2;
    if h.is_radial() {
        return Ok(radial_haagerup_upper(&h, k));
    }
    let t = power_table(&h, k)?;
    let n = h.n;
    let mut log_terms = Vec::new();
    for l in 0..=k {
        let sq: f64 = t.ball.sphere_range(l).map(|idx| block_norm(t.raw(idx), n).powi(2)).sum();
        log_terms.push(((l + 1) as f64).ln() + 0.5 * sq.ln());
    }
    Ok((log_sum_exp(&log_terms) / k as f64).exp())
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

// ---------------------------------------------------------------------------
// radial families: a_1 = ... = a_{2d}

/// Runs the radial recursion `f_k(r) = a_0 f(r) + a f(r-1) + (2d-1) a f(r+1)`,
/// `f_k(0) = a_0 f(0) + 2d a f(1)`, rescaling each step; calls `hook(k, f, log_scale)`.
fn radial_walk<F>(fam: &CoefficientFamily, steps: usize, rescale: bool, mut hook: F)
where
    F: FnMut(usize, &[C64], f64),
{
    let n = fam.n;
    let nn = n * n;
    let a0 = flat(&fam.a[0]);
    let a = flat(&fam.a[1]);
    let q = (2 * fam.d - 1) as f64;
    let root = (2 * fam.d) as f64;
    let mut cur = vec![ZERO; (steps + 2) * nn];
    for i in 0..n {
        cur[i * n + i] = linalg::ONE;
    }
    let mut next = cur.clone();
    let mut log_scale = 0.0;
    for k in 1..=steps {
        next.iter_mut().for_each(|z| *z = ZERO);
        for r in 0..=k.min(steps) {
            let dst = &mut next[r * nn..(r + 1) * nn];
            gemm_acc(dst, &a0, &cur[r * nn..(r + 1) * nn], n);
            let mut tmp = vec![ZERO; nn];
            if r >= 1 {
                gemm_acc(&mut tmp, &a, &cur[(r - 1) * nn..r * nn], n);
            }
            let mut up = vec![ZERO; nn];
            gemm_acc(&mut up, &a, &cur[(r + 1) * nn..(r + 2) * nn], n);
            let w = if r == 0 { root } else { q };
            for t in 0..nn {
                dst[t] += tmp[t] + up[t] * w;
            }
        }
        std::mem::swap(&mut cur, &mut next);
        if rescale {
            let mx = cur.iter().fold(0.0f64, |acc, z| acc.max(z.norm()));
            if mx > 0.0 && (mx > 1e100 || mx < 1e-100) {
                cur.iter_mut().for_each(|z| *z /= mx);
                log_scale += mx.ln();
            }
        }
        hook(k, &cur[..(k + 1) * nn], log_scale);
    }
}

/// Moments `τ(A★^m)` for `m = 0..=p` of a radial family scaled by `1/scale`.
pub fn radial_moments(fam: &CoefficientFamily, p: usize, scale: f64) -> Vec<C64> {
    let mut f = fam.clone();
    let s = Complex64::new(1.0 / scale, 0.0);
    f.a.iter_mut().for_each(|m| *m *= s);
    let n = fam.n;
    let mut out = vec![linalg::ONE];
    radial_walk(&f, p, false, |_, cur, _| {
        let tr: C64 = (0..n).map(|i| cur[i * n + i]).sum();
        out.push(tr / n as f64);
    });
    out
}

fn radial_haagerup_upper(fam: &CoefficientFamily, k: usize) -> f64 {
    let n = fam.n;
    let nn = n * n;
    let d = fam.d;
    let mut result = 0.0;
    radial_walk(fam, k, true, |step, cur, log_scale| {
        if step == k {
            let mut log_terms = Vec::new();
            for r in 0..=k {
                let b = block_norm(&cur[r * nn..(r + 1) * nn], n);
                if b > 0.0 {
                    let sphere = if r == 0 { 0.0 } else { ((2 * d) as f64).ln() + (r - 1) as f64 * ((2 * d - 1) as f64).ln() };
                    log_terms.push(((r + 1) as f64).ln() + 0.5 * sphere + b.ln() + log_scale);
                }
            }
            result = (log_sum_exp(&log_terms) / k as f64).exp();
        }
    });
    result
}

/// Extreme eigenvalues of the compression of a selfadjoint radial `A★` to
/// radial functions on `B_L`: a block tridiagonal operator with blocks `a_0`
/// on the diagonal and `√(2d)·a` (first) then `√(2d-1)·a` off the diagonal.
pub fn radial_compression_extremes(fam: &CoefficientFamily, radius: usize) -> (f64, f64) {
    let n = fam.n;
    let dim = n * (radius + 1);
    let a0 = &fam.a[0];
    let a = &fam.a[1];
    let w0 = ((2 * fam.d) as f64).sqrt();
    let w = ((2 * fam.d - 1) as f64).sqrt();
    let scalar_real = n == 1 && a0[(0, 0)].im == 0.0 && a[(0, 0)].im == 0.0;
    if scalar_real {
        let diag = vec![a0[(0, 0)].re; radius + 1];
        let off: Vec<f64> = (0..radius).map(|r| a[(0, 0)].re * if r == 0 { w0 } else { w }).collect();
        return tridiagonal_extremes_bisect(&diag, &off);
    }
    let mut m = linalg::zeros(dim);
    for r in 0..=radius {
        m.view_mut((r * n, r * n), (n, n)).copy_from(a0);
        if r < radius {
            let c = C64::new(if r == 0 { w0 } else { w }, 0.0);
            m.view_mut(((r + 1) * n, r * n), (n, n)).copy_from(&(a * c));
            m.view_mut((r * n, (r + 1) * n), (n, n)).copy_from(&(a.adjoint() * c));
        }
    }
    hermitian_extremes(dim, &m, None)
}

/// Extreme eigenvalues of a real symmetric tridiagonal matrix by Sturm
/// bisection (accurate to a few ulps of the spectral radius).
pub fn tridiagonal_extremes_bisect(diag: &[f64], off: &[f64]) -> (f64, f64) {
    let radius_bound = diag
        .iter()
        .enumerate()
        .map(|(i, d)| {
            d.abs() + if i > 0 { off[i - 1].abs() } else { 0.0 } + if i < off.len() { off[i].abs() } else { 0.0 }
        })
        .fold(0.0, f64::max);
    let count_below = |x: f64| -> usize {
        let mut count = 0;
        let mut q = diag[0] - x;
        if q < 0.0 {
            count += 1;
        }
        for i in 1..diag.len() {
            let denom = if q == 0.0 { 1e-300 } else { q };
            q = diag[i] - x - off[i - 1] * off[i - 1] / denom;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };
    let len = diag.len();
    if radius_bound == 0.0 {
        return (0.0, 0.0);
    }
    let find = |target: usize| -> f64 {
        // smallest x with count_below(x) >= target
        let (mut lo, mut hi) = (-radius_bound - 1.0, radius_bound + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if count_below(mid) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 4.0 * f64::EPSILON * radius_bound.max(1e-300) {
                break;
            }
        }
        0.5 * (lo + hi)
    };
    (find(1), find(len))
}

fn hermitian_extremes(dim: usize, dense: &CMat, _hint: Option<usize>) -> (f64, f64) {
    if dim <= DENSE_LIMIT {
        let v = linalg::hermitian_eigenvalues(dense);
        (v[0], v[dim - 1])
    } else {
        let r = lanczos_extremes(dim, linalg::dense_matvec(dense), &[], &LanczosOptions::default());
        (r.lowest, r.highest)
    }
}

// ---------------------------------------------------------------------------
// truncations

/// `A★` compressed to `ℂ^n ⊗ ℓ²(B_L)`.
#[derive(Clone, Debug)]
pub struct BallOperator {
    pub fam: CoefficientFamily,
    pub ball: Ball,
}

impl BallOperator {
    pub fn new(fam: &CoefficientFamily, radius: usize) -> Result<Self, StarError> {
        Ok(BallOperator { fam: fam.clone(), ball: Ball::new(fam.d, radius)? })
    }

    pub fn dim(&self) -> usize {
        self.fam.n * self.ball.size()
    }

    /// Block at `(g, h)`, if nonzero by structure.
    pub fn block(&self, g: usize, h: usize) -> Option<CMat> {
        if g == h {
            return Some(self.fam.a[0].clone());
        }
        (1..=2 * self.fam.d).find(|&i| self.ball.left_mul(i, h) == Some(g)).map(|i| self.fam.a[i].clone())
    }

    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        let n = self.fam.n;
        let blocks = family_blocks(&self.fam);
        y.iter_mut().for_each(|z| *z = ZERO);
        for h in 0..self.ball.size() {
            let src = &x[h * n..(h + 1) * n];
            mat_vec_acc(&mut y[h * n..(h + 1) * n], &blocks[0], src, n);
            for i in 1..=2 * self.fam.d {
                if let Some(g) = self.ball.left_mul(i, h) {
                    let (dst, src) = (&mut y[g * n..(g + 1) * n], &x[h * n..(h + 1) * n]);
                    mat_vec_acc(dst, &blocks[i], src, n);
                }
            }
        }
    }

    pub fn to_dense(&self) -> CMat {
        let n = self.fam.n;
        let mut m = linalg::zeros(self.dim());
        for h in 0..self.ball.size() {
            m.view_mut((h * n, h * n), (n, n)).copy_from(&self.fam.a[0]);
            for i in 1..=2 * self.fam.d {
                if let Some(g) = self.ball.left_mul(i, h) {
                    m.view_mut((g * n, h * n), (n, n)).copy_from(&self.fam.a[i]);
                }
            }
        }
        m
    }

    /// Extreme eigenvalues (Hermitian families) and whether they came from a
    /// dense solve.
    pub fn extremes(&self) -> (f64, f64, bool) {
        let dim = self.dim();
        if dim <= DENSE_LIMIT {
            let v = linalg::hermitian_eigenvalues(&self.to_dense());
            (v[0], v[dim - 1], true)
        } else {
            let opts = LanczosOptions { rel_tol: 1e-11, ..LanczosOptions::default() };
            let r = lanczos_extremes(dim, |x, y| self.matvec(x, y), &[], &opts);
            (r.lowest, r.highest, false)
        }
    }
}

#[inline]
fn mat_vec_acc(y: &mut [C64], a: &[C64], x: &[C64], n: usize) {
    for i in 0..n {
        let mut s = ZERO;
        for j in 0..n {
            s += a[i * n + j] * x[j];
        }
        y[i] += s;
    }
}

/// Norm of the truncation of `A★` to `B_L`: a lower bound on `‖A★‖`, and at
/// radius `l - 1` at least `(1 - 2/l)‖A★‖`.
pub fn truncated_norm_lower(fam: &CoefficientFamily, radius: usize) -> Result<f64, StarError> {
    Ok(truncated_norm(fam, radius)?.0)
}

/// Truncated norm together with a flag telling whether it is exact up to
/// roundoff (dense or radial solve) rather than a Lanczos estimate.
fn truncated_norm(fam: &CoefficientFamily, radius: usize) -> Result<(f64, bool), StarError> {
    let h = fam.hermitian_form();
    if h.n == 1 && h.is_radial() && h.a[0][(0, 0)].im == 0.0 && h.a[1][(0, 0)].im == 0.0 {
        // the extreme eigenvectors of a scalar radial truncation are radial
        let (lo, hi) = radial_compression_extremes(&h, radius);
        return Ok((lo.abs().max(hi.abs()), true));
    }
    let op = BallOperator::new(&h, radius)?;
    let (lo, hi, exact) = op.extremes();
    Ok((lo.abs().max(hi.abs()), exact))
}

// ---------------------------------------------------------------------------
// brackets

#[derive(Clone, Debug)]
pub struct BracketBudget {
    /// cap on `n·|B_L|` for truncations and `n²·|B_{p/2}|` for power tables
    pub max_states: usize,
    /// cap on `p` and `L` for radial families
    pub max_radial: usize,
}

impl Default for BracketBudget {
    fn default() -> Self {
        BracketBudget { max_states: 400_000, max_radial: 4096 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bracket {
    pub lower: f64,
    pub upper: f64,
    pub radius: usize,
    pub p: usize,
    pub achieved: bool,
    /// "haagerup" or "exactness"
    pub upper_source: &'static str,
}

impl Bracket {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.upper + self.lower)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Certified bracket `lower ≤ ‖A★‖ ≤ upper`, refined until the width is at
/// most `tol` or the budget runs out (then `achieved` is false).
///
/// Lower bounds are truncated norms; upper bounds are the Haagerup bound and
/// `trunc(l-1)/(1 - 2/l)` when the truncated norm was computed exactly.
pub fn norm_bracket(fam: &CoefficientFamily, tol: f64, budget: &BracketBudget) -> Result<Bracket, StarError> {
    let h = fam.hermitian_form();
    if h.a.iter().all(|m| linalg::max_abs(m) == 0.0) {
        return Ok(Bracket { lower: 0.0, upper: 0.0, radius: 0, p: 2, achieved: true, upper_source: "exactness" });
    }
    let radial = h.is_radial();
    let mut best = Bracket { lower: 0.0, upper: f64::INFINITY, radius: 0, p: 0, achieved: false, upper_source: "haagerup" };
    let mut radius = 1usize;
    let mut p = 2usize;
    loop {
        let lower_ok = if radial {
            radius <= budget.max_radial
        } else {
            (h.n as u128) * crate::freegroup::ball_size(h.d, radius) <= budget.max_states as u128
        };
        let upper_ok = if radial {
            p <= budget.max_radial
        } else {
            (h.n * h.n) as u128 * crate::freegroup::ball_size(h.d, p / 2) <= budget.max_states as u128
        };
        if !lower_ok && !upper_ok {
            break;
        }
        if lower_ok {
            let (t, exact) = if radial && h.n > 1 {
                let (lo, hi) = radial_compression_extremes(&h, radius);
                (lo.abs().max(hi.abs()), false)
            } else {
                truncated_norm(&h, radius)?
            };
            if t > best.lower {
                best.lower = t;
                best.radius = radius;
            }
            if exact {
                let l = (radius + 1) as f64;
                if l > 2.0 {
                    let u = t / (1.0 - 2.0 / l) * (1.0 + 1e-12);
                    if u < best.upper {
                        best.upper = u;
                        best.upper_source = "exactness";
                    }
                }
            }
        }
        if upper_ok {
            let u = haagerup_upper(&h, p)?;
            if u < best.upper {
                best.upper = u;
                best.p = p;
                best.upper_source = "haagerup";
            }
        }
        if best.upper - best.lower <= tol {
            best.achieved = true;
            break;
        }
        if radial {
            radius *= 2;
            p *= 2;
        } else {
            radius += 1;
            p += 2;
        }
    }
    Ok(best)
}

/// Checks `‖(C★^{(k,i)})_{g𝔬}‖ ≤ U^k` for all `|g| ≤ k` and that the truncated
/// norm of `C★^{(k,i)}` stays below `k U^k`, with `U` the bracket upper bound.
pub fn c_norm_bound_check(fam: &CoefficientFamily, k: usize, i: usize, budget: &BracketBudget) -> Result<bool, StarError> {
    if !fam.flags.selfadjoint {
        return Err(StarError::NotSelfadjoint);
    }
    let upper = norm_bracket(fam, 0.0, budget)?.upper;
    let slack = 1e-10;
    let table = corner_table(fam, k, i)?;
    let bound = upper.powi(k as i32);
    for idx in 0..table.ball.size() {
        if linalg::op_norm(&table.block(k, idx)) > bound * (1.0 + slack) + slack {
            return Ok(false);
        }
    }
    let terms: Vec<(ReducedWord, CMat)> = (0..table.ball.size())
        .map(|idx| (table.ball.word(idx), table.block(k, idx)))
        .filter(|(_, m)| linalg::max_abs(m) > 0.0)
        .collect();
    let op = GroupOperator::new(fam.d, fam.n, terms);
    let t = op.truncated_norm(k + 1)?;
    Ok(t <= k as f64 * bound * (1.0 + slack) + slack)
}

// ---------------------------------------------------------------------------
// finitely supported operators

/// `T = Σ_g c_g ⊗ λ(g)` with finitely many nonzero `c_g`.
#[derive(Clone, Debug)]
pub struct GroupOperator {
    pub d: usize,
    pub n: usize,
    pub terms: BTreeMap<ReducedWord, CMat>,
}

impl GroupOperator {
    pub fn new(d: usize, n: usize, terms: Vec<(ReducedWord, CMat)>) -> Self {
        let mut map: BTreeMap<ReducedWord, CMat> = BTreeMap::new();
        for (w, m) in terms {
            match map.get_mut(&w) {
                Some(acc) => *acc += m,
                None => {
                    map.insert(w, m);
                }
            }
        }
        GroupOperator { d, n, terms: map }
    }

    pub fn from_family(fam: &CoefficientFamily) -> Self {
        let mut terms = vec![(ReducedWord::unit(fam.d), fam.a[0].clone())];
        for i in 1..=2 * fam.d {
            terms.push((ReducedWord::generator(fam.d, i).expect("valid"), fam.a[i].clone()));
        }
        Self::new(fam.d, fam.n, terms)
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(|w| w.len()).max().unwrap_or(0)
    }

    pub fn coefficient(&self, g: &ReducedWord) -> CMat {
        self.terms.get(g).cloned().unwrap_or_else(|| linalg::zeros(self.n))
    }

    pub fn adjoint(&self) -> Self {
        Self::new(self.d, self.n, self.terms.iter().map(|(w, m)| (w.inverse(), m.adjoint())).collect())
    }

    pub fn is_selfadjoint(&self, tol: f64) -> bool {
        let adj = self.adjoint();
        self.terms
            .keys()
            .chain(adj.terms.keys())
            .all(|w| linalg::max_abs_diff(&self.coefficient(w), &adj.coefficient(w)) <= tol)
    }

    /// Convolution product `self · other`.
    pub fn compose(&self, other: &GroupOperator) -> Self {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (u, a) in &self.terms {
            for (v, b) in &other.terms {
                terms.push((u.concat_reduce(v).expect("same rank"), a * b));
            }
        }
        Self::new(self.d, self.n, terms)
    }

    /// `[[0, T], [T^*, 0]]`, selfadjoint with the same norm.
    pub fn selfadjointize(&self) -> Self {
        let n = self.n;
        let adj = self.adjoint();
        let keys: std::collections::BTreeSet<ReducedWord> = self.terms.keys().chain(adj.terms.keys()).cloned().collect();
        let terms = keys
            .into_iter()
            .map(|w| {
                let mut m = linalg::zeros(2 * n);
                m.view_mut((0, n), (n, n)).copy_from(&self.coefficient(&w));
                m.view_mut((n, 0), (n, n)).copy_from(&adj.coefficient(&w));
                (w, m)
            })
            .collect();
        Self::new(self.d, 2 * n, terms)
    }

    pub fn hermitian_form(&self) -> Self {
        if self.is_selfadjoint(1e-12) {
            self.clone()
        } else {
            self.selfadjointize()
        }
    }

    /// Matrix-free action of the truncation to `B_R`.
    fn truncation_maps(&self, ball: &Ball) -> Vec<(Vec<C64>, Vec<u32>)> {
        self.terms
            .iter()
            .map(|(w, m)| {
                let letters = w.letters();
                let map = (0..ball.size())
                    .map(|h| {
                        let mut idx = Some(h);
                        for &l in letters.iter().rev() {
                            idx = idx.and_then(|x| ball.left_mul(l, x));
                        }
                        idx.map(|v| v as u32).unwrap_or(u32::MAX)
                    })
                    .collect();
                (flat(m), map)
            })
            .collect()
    }

    /// Extreme eigenvalues of the truncation of a selfadjoint operator to `B_R`.
    pub fn truncated_extremes(&self, radius: usize) -> Result<(f64, f64), StarError> {
        if !self.is_selfadjoint(1e-12) {
            return Err(StarError::NotSelfadjoint);
        }
        let ball = Ball::new(self.d, radius)?;
        let maps = self.truncation_maps(&ball);
        let n = self.n;
        let dim = n * ball.size();
        let apply = |x: &[C64], y: &mut [C64]| {
            y.iter_mut().for_each(|z| *z = ZERO);
            for (block, map) in &maps {
                for (h, &g) in map.iter().enumerate() {
                    if g != u32::MAX {
                        let g = g as usize;
                        mat_vec_acc(&mut y[g * n..(g + 1) * n], block, &x[h * n..(h + 1) * n], n);
                    }
                }
            }
        };
        if dim <= DENSE_LIMIT {
            let mut m = linalg::zeros(dim);
            let mut e = vec![ZERO; dim];
            let mut col = vec![ZERO; dim];
            for j in 0..dim {
                e[j] = linalg::ONE;
                apply(&e, &mut col);
                e[j] = ZERO;
                for i in 0..dim {
                    m[(i, j)] = col[i];
                }
            }
            let v = linalg::hermitian_eigenvalues(&m);
            Ok((v[0], v[dim - 1]))
        } else {
            let r = lanczos_extremes(dim, apply, &[], &LanczosOptions::default());
            Ok((r.lowest, r.highest))
        }
    }

    /// Norm of the truncation to `B_R` (a lower bound on `‖T‖`).
    pub fn truncated_norm(&self, radius: usize) -> Result<f64, StarError> {
        let h = self.hermitian_form();
        let (lo, hi) = h.truncated_extremes(radius)?;
        Ok(lo.abs().max(hi.abs()))
    }

    /// Haagerup bound from `T^k` (selfadjoint form):
    /// `‖T‖^k ≤ Σ_l (l+1) (Σ_{g∈S_l} ‖(T^k)_g‖²)^{1/2}`.
    pub fn haagerup_upper(&self, k: usize) -> f64 {
        let h = self.hermitian_form();
        let mut pow = h.clone();
        for _ in 1..k.max(1) {
            pow = pow.compose(&h);
        }
        let mut by_len: BTreeMap<usize, f64> = BTreeMap::new();
        for (w, m) in &pow.terms {
            *by_len.entry(w.len()).or_insert(0.0) += linalg::op_norm(m).powi(2);
        }
        let total: f64 = by_len.iter().map(|(l, s)| (*l + 1) as f64 * s.sqrt()).sum();
        total.powf(1.0 / k.max(1) as f64)
    }

    /// `τ(T^p)` by repeated convolution.
    pub fn moment(&self, p: usize) -> C64 {
        if p == 0 {
            return linalg::ONE;
        }
        let mut pow = self.clone();
        for _ in 1..p {
            pow = pow.compose(self);
        }
        linalg::ntrace(&pow.coefficient(&ReducedWord::unit(self.d)))
    }
}

// ---------------------------------------------------------------------------
// tensor legs: operators on ℓ²(F_d)^{⊗k}

/// `a_0 ⊗ 1 + Σ_{j} Σ_{i} a_{i,j} ⊗ λ(g_{i,j})` on `ℂ^n ⊗ ℓ²(F_d^k)`.
#[derive(Clone, Debug)]
pub struct TensorFamily {
    pub d: usize,
    pub n: usize,
    pub a0: CMat,
    /// `legs[j][i-1] = a_{i,j}` for `i = 1..=2d`
    pub legs: Vec<Vec<CMat>>,
}

impl TensorFamily {
    pub fn unit(d: usize, k: usize) -> Self {
        TensorFamily { d, n: 1, a0: linalg::zeros(1), legs: vec![vec![linalg::eye(1); 2 * d]; k] }
    }

    pub fn k(&self) -> usize {
        self.legs.len()
    }

    /// The single-leg family `(0, a_{1,j}, ..., a_{2d,j})`.
    pub fn leg_family(&self, j: usize) -> CoefficientFamily {
        let mut a = vec![linalg::zeros(self.n)];
        a.extend(self.legs[j].iter().cloned());
        CoefficientFamily::new(self.d, a).expect("valid shape")
    }

    pub fn is_selfadjoint(&self) -> bool {
        linalg::is_hermitian(&self.a0, 1e-12) && (0..self.k()).all(|j| self.leg_family(j).flags.selfadjoint)
    }

    fn scalar(&self) -> bool {
        self.n == 1
    }
}

/// Moments of a scalar tensor family as `(v, S)` with `τ(A^m) = v[m]·S^m`.
/// The legs commute, so moments are binomial convolutions of leg moments;
/// each leg is normalized by an upper bound on its own norm so that every
/// stored value has modulus at most 1.
fn tensor_scalar_moments(t: &TensorFamily, p: usize) -> Result<(Vec<C64>, f64), StarError> {
    let ln_fact: Vec<f64> = std::iter::once(0.0)
        .chain((1..=p).scan(0.0, |acc, k| {
            *acc += (k as f64).ln();
            Some(*acc)
        }))
        .collect();
    let a0 = t.a0[(0, 0)];
    let mut total = a0.norm();
    let mut acc: Vec<C64> = if total > 0.0 {
        (0..=p).map(|m| (a0 / total).powu(m as u32)).collect()
    } else {
        let mut v = vec![ZERO; p + 1];
        v[0] = linalg::ONE;
        v
    };
    let budget = BracketBudget { max_states: 200_000, max_radial: 4096 };
    for j in 0..t.k() {
        let leg = t.leg_family(j);
        let s = norm_bracket(&leg, 1e-4, &budget)?.upper;
        if s == 0.0 {
            continue;
        }
        let moments = if leg.is_radial() {
            radial_moments(&leg, p, s)
        } else {
            let mut scaled = leg.clone();
            scaled.a.iter_mut().for_each(|m| *m /= Complex64::new(s, 0.0));
            let g = GroupOperator::from_family(&scaled);
            let mut out = vec![linalg::ONE];
            let mut pow = g.clone();
            for m in 1..=p {
                if m > 1 {
                    pow = pow.compose(&g);
                }
                out.push(linalg::ntrace(&pow.coefficient(&ReducedWord::unit(t.d))));
            }
            out
        };
        let merged = total + s;
        let (lq_old, lq_new) = ((total / merged).ln(), (s / merged).ln());
        let mut next = vec![ZERO; p + 1];
        for m in 0..=p {
            for r in 0..=m {
                // binomial probability C(m, r) q^r (1-q)^{m-r}
                let old_part = if m - r == 0 { 0.0 } else { (m - r) as f64 * lq_old };
                let new_part = if r == 0 { 0.0 } else { r as f64 * lq_new };
                let w = (ln_fact[m] - ln_fact[r] - ln_fact[m - r] + old_part + new_part).exp();
                if w > 0.0 {
                    next[m] += acc[m - r] * moments[r] * w;
                }
            }
        }
        acc = next;
        total = merged;
    }
    Ok((acc, total))
}

/// `‖A_{⋆^k}‖ ≤ (2 n p^{3k} τ(A^p))^{1/p}` for selfadjoint tensor families and
/// even `p`, with `τ(A^p)` computed exactly.
pub fn tensor_haagerup_upper(t: &TensorFamily, p: usize) -> Result<f64, StarError> {
    if p == 0 || p % 2 == 1 {
        return Err(StarError::OddExponent(p));
    }
    if !t.is_selfadjoint() {
        return Err(StarError::NotSelfadjoint);
    }
    let (moment, scale) = if t.scalar() {
        let (v, s) = tensor_scalar_moments(t, p)?;
        (v[p].re, s)
    } else {
        let s = linalg::op_norm(&t.a0)
            + t.legs.iter().map(|leg| leg.iter().map(linalg::op_norm).sum::<f64>()).sum::<f64>();
        (if s == 0.0 { 0.0 } else { tensor_product_ball_moment(t, p, s)? }, s)
    };
    if scale == 0.0 || moment <= 0.0 {
        return Ok(0.0);
    }
    let k = t.k() as f64;
    let pf = p as f64;
    let log = ((2 * t.n) as f64).ln() + 3.0 * k * pf.ln() + moment.max(0.0).ln();
    Ok(scale * (log / pf).exp())
}

/// Exact `τ(A^p)/scale^p` by dynamic programming over products of balls.
fn tensor_product_ball_moment(t: &TensorFamily, p: usize, scale: f64) -> Result<f64, StarError> {
    let k = t.k();
    let n = t.n;
    let nn = n * n;
    let radius = p / 2;
    let ball = Ball::new(t.d, radius)?;
    let size = ball.size();
    let states = size.checked_pow(k as u32).unwrap_or(usize::MAX);
    if states.saturating_mul(nn) > 50_000_000 {
        return Err(StarError::Group(FreeGroupError::Capacity {
            d: t.d,
            radius,
            size: states as u128,
            cap: 50_000_000 / nn,
        }));
    }
    let s = Complex64::new(1.0 / scale, 0.0);
    let a0 = flat(&(&t.a0 * s));
    let legs: Vec<Vec<Vec<C64>>> = t.legs.iter().map(|leg| leg.iter().map(|m| flat(&(m * s))).collect()).collect();
    let mut cur = vec![ZERO; states * nn];
    for i in 0..n {
        cur[i * n + i] = linalg::ONE;
    }
    let stride: Vec<usize> = (0..k).map(|j| size.pow(j as u32)).collect();
    for step in 1..=p {
        let mut next = vec![ZERO; states * nn];
        for state in 0..states {
            let src = &cur[state * nn..(state + 1) * nn];
            if block_is_zero(src) {
                continue;
            }
            gemm_acc(&mut next[state * nn..(state + 1) * nn], &a0, src, n);
            for j in 0..k {
                let coord = (state / stride[j]) % size;
                for i in 1..=2 * t.d {
                    if let Some(c2) = ball.left_mul(i, coord) {
                        // only states that can still return to the unit
                        if ball.length(c2) > p - step {
                            continue;
                        }
                        let target = state - coord * stride[j] + c2 * stride[j];
                        let (dst, srcb) = (&mut next[target * nn..(target + 1) * nn], &cur[state * nn..(state + 1) * nn]);
                        gemm_acc(dst, &legs[j][i - 1], srcb, n);
                    }
                }
            }
        }
        cur = next;
    }
    let tr: C64 = (0..n).map(|i| cur[i * n + i]).sum();
    Ok(tr.re / n as f64)
}

/// Lower bound on `‖A_{⋆^k}‖` from the truncation to the product ball `B_R^k`.
/// For scalar coefficients the legs commute and the truncation's extreme
/// eigenvalues are sums of the legs' extreme eigenvalues.
pub fn tensor_truncated_lower(t: &TensorFamily, radius: usize) -> Result<f64, StarError> {
    if !t.is_selfadjoint() {
        return Err(StarError::NotSelfadjoint);
    }
    if t.scalar() {
        let mut lo = t.a0[(0, 0)].re;
        let mut hi = lo;
        for j in 0..t.k() {
            let leg = t.leg_family(j);
            let (l, h) = if leg.is_radial() && leg.a[1][(0, 0)].im == 0.0 {
                radial_compression_extremes(&leg, radius)
            } else {
                GroupOperator::from_family(&leg).truncated_extremes(radius)?
            };
            lo += l;
            hi += h;
        }
        return Ok(lo.abs().max(hi.abs()));
    }
    let k = t.k();
    let n = t.n;
    let ball = Ball::new(t.d, radius)?;
    let size = ball.size();
    let states = size.pow(k as u32);
    let dim = states * n;
    let stride: Vec<usize> = (0..k).map(|j| size.pow(j as u32)).collect();
    let a0 = flat(&t.a0);
    let legs: Vec<Vec<Vec<C64>>> = t.legs.iter().map(|leg| leg.iter().map(flat).collect()).collect();
    let apply = |x: &[C64], y: &mut [C64]| {
        y.iter_mut().for_each(|z| *z = ZERO);
        for state in 0..states {
            let src = &x[state * n..(state + 1) * n];
            mat_vec_acc(&mut y[state * n..(state + 1) * n], &a0, src, n);
            for j in 0..k {
                let coord = (state / stride[j]) % size;
                for i in 1..=2 * t.d {
                    if let Some(c2) = ball.left_mul(i, coord) {
                        let target = state - coord * stride[j] + c2 * stride[j];
                        mat_vec_acc(&mut y[target * n..(target + 1) * n], &legs[j][i - 1], src, n);
                    }
                }
            }
        }
    };
    let r = lanczos_extremes(dim, apply, &[], &LanczosOptions::default());
    Ok(r.norm())
}

/// Bracket for `‖A_{⋆^k}‖` from the tensor Haagerup bound and product-ball
/// truncation.
pub fn tensor_norm_bracket(t: &TensorFamily, radius: usize, p: usize) -> Result<Bracket, StarError> {
    let lower = tensor_truncated_lower(t, radius)?;
    let upper = tensor_haagerup_upper(t, p)?;
    Ok(Bracket { lower, upper, radius, p, achieved: true, upper_source: "haagerup" })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freegroup::sphere;
    use crate::rng::seeded;

    /// Brute force over all letter sequences in {0..2d}^ℓ.
    fn brute_power_entry(fam: &CoefficientFamily, l: usize, g: &ReducedWord) -> CMat {
        let d = fam.d;
        let base = 2 * d + 1;
        let mut total = linalg::zeros(fam.n);
        for code in 0..base.pow(l as u32) {
            let mut c = code;
            let mut seq = Vec::new();
            for _ in 0..l {
                seq.push(c % base);
                c /= base;
            }
            // seq[0] = w_1 is applied first
            let letters: Vec<usize> = seq.iter().rev().filter(|&&x| x > 0).cloned().collect();
            let w = ReducedWord::reduce(d, &letters).unwrap();
            if &w == g {
                let mut prod = linalg::eye(fam.n);
                for &x in &seq {
                    prod = &fam.a[x] * prod;
                }
                total += prod;
            }
        }
        total
    }

    /// Brute force over sequences with the "never back at 𝔬" filter.
    fn brute_c_entry(fam: &CoefficientFamily, k: usize, i: usize, g: &ReducedWord) -> CMat {
        let d = fam.d;
        let base = 2 * d + 1;
        let mut total = linalg::zeros(fam.n);
        for code in 0..base.pow(k as u32) {
            let mut c = code;
            let mut seq = Vec::new();
            for _ in 0..k {
                seq.push(c % base);
                c /= base;
            }
            if seq[0] != i {
                continue;
            }
            let mut pos = ReducedWord::unit(d);
            let mut ok = true;
            for &x in &seq {
                if x > 0 {
                    pos = pos.left_mul(x);
                }
                if pos.is_unit() {
                    ok = false;
                    break;
                }
            }
            if ok && &pos == g {
                let mut prod = linalg::eye(fam.n);
                for &x in &seq {
                    prod = &fam.a[x] * prod;
                }
                total += prod;
            }
        }
        total
    }

    #[test]
    fn kesten_moments() {
        let k = CoefficientFamily::kesten(2);
        let e = ReducedWord::unit(2);
        assert_eq!(power_entry(&k, 2, &e).unwrap()[(0, 0)].re, 4.0);
        assert_eq!(power_entry(&k, 4, &e).unwrap()[(0, 0)].re, 28.0);
        assert_eq!(brute_power_entry(&k, 4, &e)[(0, 0)].re, 28.0);
        assert_eq!(free_moment(&k, 2).unwrap().re, 4.0);
        assert_eq!(free_moment(&k, 3).unwrap().re, 0.0);
        assert_eq!(free_moment(&k, 4).unwrap().re, 28.0);
        assert_eq!(power_entry(&k, 0, &e).unwrap(), linalg::eye(1));
        let g = ReducedWord::generator(2, 1).unwrap();
        assert_eq!(power_entry(&k, 0, &g).unwrap(), linalg::zeros(1));
    }

    #[test]
    fn radial_moments_match_ball_dp() {
        let mut fam = CoefficientFamily::kesten(2);
        fam.a[0] = linalg::eye(1) * C64::new(0.3, 0.0);
        let m = radial_moments(&fam, 8, 1.0);
        for l in 0..=8 {
            let t = power_table(&fam, l).unwrap();
            assert!((t.block(0)[(0, 0)] - m[l]).norm() < 1e-9 * (1.0 + m[l].norm()));
        }
    }

    #[test]
    fn power_entries_match_brute_force() {
        let mut rng = seeded(11);
        let fam = CoefficientFamily::random_selfadjoint(2, 2, &mut rng);
        for l in 0..=4 {
            let t = power_table(&fam, l).unwrap();
            for idx in 0..t.ball.size() {
                let g = t.ball.word(idx);
                let b = brute_power_entry(&fam, l, &g);
                assert!(linalg::max_abs_diff(&t.block(idx), &b) < 1e-10);
            }
        }
    }

    #[test]
    fn nb_components_sum_to_power() {
        let k = CoefficientFamily::kesten(2);
        let comp = nb_component(&k, 2, 2).unwrap();
        assert_eq!(comp.len(), 12);
        assert!(comp.iter().all(|(_, m)| m[(0, 0)].re == 1.0));
        let zero = nb_component(&k, 2, 0).unwrap();
        assert_eq!(zero[0].1[(0, 0)].re, 4.0);
        let fam = CoefficientFamily::random_selfadjoint(2, 2, &mut seeded(4));
        let t = power_table(&fam, 4).unwrap();
        for m in 0..=4 {
            for (g, v) in nb_component(&fam, 4, m).unwrap() {
                assert!(linalg::max_abs_diff(&v, &t.entry(&g)) <= 1e-12);
            }
        }
    }

    #[test]
    fn corner_entries() {
        let k = CoefficientFamily::kesten(2);
        for i in 1..=4 {
            let g = ReducedWord::generator(2, i).unwrap();
            assert_eq!(c_entry(&k, 1, i, &g).unwrap(), k.a[i]);
        }
        let g1 = ReducedWord::generator(2, 1).unwrap();
        let v = c_entry(&k, 3, 1, &g1).unwrap();
        assert_eq!(v, brute_c_entry(&k, 3, 1, &g1));
        assert_eq!(v[(0, 0)].re, 3.0);
        assert_eq!(c_entry(&k, 3, 2, &g1).unwrap(), linalg::zeros(1));
        let fam = CoefficientFamily::random_selfadjoint(2, 2, &mut seeded(8));
        let table = corner_table(&fam, 4, 3).unwrap();
        for kk in 1..=4 {
            for idx in 0..table.ball.size() {
                let g = table.ball.word(idx);
                let b = brute_c_entry(&fam, kk, 3, &g);
                assert!(linalg::max_abs_diff(&table.block(kk, idx), &b) < 1e-10);
            }
        }
    }

    #[test]
    fn path_decomposition() {
        let k = CoefficientFamily::kesten(2);
        let e = ReducedWord::unit(2);
        assert_eq!(path_decomposition_check(&k, 4, &e, &[]).unwrap(), 0.0);
        let g1 = ReducedWord::generator(2, 1).unwrap();
        assert_eq!(path_decomposition_check(&k, 3, &g1, &[]).unwrap(), 0.0);
        let fam = CoefficientFamily::random_selfadjoint(3, 2, &mut seeded(5));
        let g = ReducedWord::new(3, &[2, 3, 1, 1]).unwrap();
        for cuts in [vec![], vec![1], vec![2], vec![1, 2], vec![1, 3], vec![1, 2, 3]] {
            for kk in 0..=6 {
                let r = path_decomposition_check(&fam, kk, &g, &cuts).unwrap();
                assert!(r <= 1e-10, "cuts {:?} k {} residual {}", cuts, kk, r);
            }
        }
        assert!(path_decomposition_check(&fam, 3, &g, &[2, 2]).is_err());
    }

    #[test]
    fn schatten_examples() {
        let k = CoefficientFamily::kesten(2);
        assert!((schatten_norm_star(&k, 4).unwrap() - 28f64.powf(0.25)).abs() < 1e-12);
        let fam = CoefficientFamily::random_selfadjoint(2, 2, &mut seeded(1));
        let direct: f64 = fam.a.iter().map(|m| linalg::ntrace(&(m * m.adjoint())).re).sum::<f64>().sqrt();
        assert!((schatten_norm_star(&fam, 2).unwrap() - direct).abs() < 1e-12);
        assert_eq!(schatten_norm_star(&CoefficientFamily::zero(2, 2), 4).unwrap(), 0.0);
        assert!(schatten_norm_star(&k, 3).is_err());
    }

    #[test]
    fn haagerup_examples() {
        let k = CoefficientFamily::kesten(2);
        // p = 2: ‖A‖ ≤ 1·|a_0| + 2·√(Σ_{|g|=1}) = 2·2 = 4
        assert!((haagerup_upper(&k, 2).unwrap() - 4.0).abs() < 1e-12);
        let bound = haagerup_upper(&k, 64).unwrap();
        assert!(bound >= 2.0 * 3f64.sqrt());
        assert!(bound < 3.8);
        assert_eq!(haagerup_upper(&CoefficientFamily::zero(2, 1), 4).unwrap(), 0.0);
        // radial shortcut agrees with the general computation
        let general = {
            let t = power_table(&k, 5).unwrap();
            let total: f64 = (0..=5)
                .map(|l| (l + 1) as f64 * t.ball.sphere_range(l).map(|i| t.raw(i)[0].norm_sqr()).sum::<f64>().sqrt())
                .sum();
            total.powf(1.0 / 5.0)
        };
        assert!((haagerup_upper(&k, 10).unwrap() - general).abs() < 1e-10);
    }

    #[test]
    fn truncation_examples() {
        let k = CoefficientFamily::kesten(2);
        assert!((truncated_norm_lower(&k, 1).unwrap() - 2.0).abs() < 1e-12);
        let t10 = truncated_norm_lower(&k, 10).unwrap();
        assert!((3.30..=3.4642).contains(&t10));
        assert_eq!(truncated_norm_lower(&CoefficientFamily::zero(2, 1), 3).unwrap(), 0.0);
        // radial shortcut agrees with the dense truncation
        let dense = BallOperator::new(&k, 4).unwrap();
        let v = linalg::hermitian_eigenvalues(&dense.to_dense());
        assert!((truncated_norm_lower(&k, 4).unwrap() - v.last().unwrap()).abs() < 1e-10);
    }

    #[test]
    fn ball_operator_structure() {
        let fam = CoefficientFamily::random_selfadjoint(2, 2, &mut seeded(2));
        let op = BallOperator::new(&fam, 2).unwrap();
        let m = op.to_dense();
        assert!(linalg::is_hermitian(&m, 1e-12));
        let g = ReducedWord::new(2, &[1, 2]).unwrap();
        let h = ReducedWord::new(2, &[2]).unwrap();
        let (gi, hi) = (op.ball.index_of(&g).unwrap(), op.ball.index_of(&h).unwrap());
        assert_eq!(op.block(gi, hi).unwrap(), fam.a[1]);
        assert!(op.block(gi, 0).is_none());
    }

    #[test]
    fn kesten_bracket() {
        let b = norm_bracket(&CoefficientFamily::kesten(2), 0.05, &BracketBudget::default()).unwrap();
        assert!(b.achieved && b.width() <= 0.05);
        assert!(b.contains(2.0 * 3f64.sqrt()));
    }

    #[test]
    fn shifted_bracket() {
        let mut fam = CoefficientFamily::zero(2, 1);
        fam.a[0] = linalg::eye(1) * C64::new(1.5, 0.0);
        let fam = CoefficientFamily::new(2, fam.a).unwrap();
        let b = norm_bracket(&fam, 1e-9, &BracketBudget::default()).unwrap();
        assert!((b.lower - 1.5).abs() < 1e-9 && b.upper >= 1.5);
    }

    #[test]
    fn random_bracket_is_valid() {
        let fam = CoefficientFamily::random_selfadjoint(2, 2, &mut seeded(3));
        let budget = BracketBudget { max_states: 20_000, max_radial: 64 };
        let b = norm_bracket(&fam, 1e-3, &budget).unwrap();
        assert!(b.lower <= b.upper);
        assert!(schatten_norm_star(&fam, 6).unwrap() <= b.upper);
    }

    #[test]
    fn c_norm_bounds() {
        let budget = BracketBudget { max_states: 20_000, max_radial: 64 };
        for seed in 0..3 {
            let mut rng = seeded(100 + seed);
            let d = 2 + (seed as usize % 2);
            let fam = CoefficientFamily::random_selfadjoint(d, 1 + seed as usize % 2, &mut rng);
            assert!(c_norm_bound_check(&fam, 3 + seed as usize, 1, &budget).unwrap());
        }
        assert!(c_norm_bound_check(&CoefficientFamily::zero(2, 1), 2, 1, &budget).unwrap());
    }

    #[test]
    fn tensor_examples() {
        let t = TensorFamily::unit(2, 2);
        // τ(A²) = 8 → with p = 2 the bound is (2·2^6·8)^{1/2}
        let u = tensor_haagerup_upper(&t, 2).unwrap();
        assert!((u - (2.0 * 64.0 * 8.0f64).sqrt()).abs() < 1e-9);
        let (moments, s) = tensor_scalar_moments(&t, 4).unwrap();
        assert!((moments[2].re * s * s - 8.0).abs() < 1e-9);
        // τ((X+Y)^4) = 28 + 6·4·4 + 28
        assert!((moments[4].re * s.powi(4) - (56.0 + 96.0)).abs() < 1e-8);
        // product-ball DP agrees with the convolution of leg moments
        let dp = tensor_product_ball_moment(&t, 4, 1.0).unwrap();
        assert!((dp - 152.0).abs() < 1e-9);
        // k = 1 is the single-leg bound 2 n p³ ‖A‖_p^p
        let one = TensorFamily::unit(2, 1);
        let v = tensor_haagerup_upper(&one, 4).unwrap();
        assert!((v - (2.0 * 64.0 * 28.0f64).powf(0.25)).abs() < 1e-9);
        let zero = TensorFamily { d: 2, n: 1, a0: linalg::zeros(1), legs: vec![vec![linalg::zeros(1); 4]; 2] };
        assert_eq!(tensor_haagerup_upper(&zero, 4).unwrap(), 0.0);
    }

    #[test]
    fn tensor_bracket_unit() {
        let t = TensorFamily::unit(2, 2);
        let b = tensor_norm_bracket(&t, 400, 2000).unwrap();
        let target = 4.0 * 3f64.sqrt();
        assert!(b.lower <= target && target <= b.upper, "{:?}", b);
        assert!(b.width() < 0.5);
    }

    #[test]
    fn group_operator_matches_family() {
        let fam = CoefficientFamily::random_selfadjoint(2, 1, &mut seeded(9));
        let g = GroupOperator::from_family(&fam);
        assert!(g.is_selfadjoint(1e-12));
        assert!((g.moment(4) - free_moment(&fam, 4).unwrap()).norm() < 1e-10);
        let a = g.truncated_norm(3).unwrap();
        let b = truncated_norm_lower(&fam, 3).unwrap();
        assert!((a - b).abs() < 1e-9);
        assert!(sphere(2, 1).unwrap().len() == 4);
    }

    #[test]
    fn nb_decomposition_on_unitaries() {
        let mut rng = crate::rng::seeded(21);
        let fam = CoefficientFamily::random_selfadjoint(2, 2, &mut rng);
        let us: Vec<CMat> = (0..2).map(|_| crate::matrix_models::haar_unitary(12, &mut rng)).collect();
        let r = nb_decomposition_check(&fam, 4, Some(&us)).unwrap();
        assert!(r.star_residual < 1e-12, "{r:?}");
        assert!(r.model_residual.unwrap() < 1e-10, "{r:?}");
    }
}
