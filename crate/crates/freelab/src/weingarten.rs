//! Exact Haar expectations of products of matrix entries: Weingarten
//! functions of `U(N)`, uniform permutation expectations, balancedness and
//! path weights.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use num::{BigInt, BigRational, One, Signed, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::C64;
use crate::matrix_models::{mean_stderr, ModelKind, ModelSample};
use crate::paths::{path_stats, ColoredPath};
use crate::rng::derive_seed;

/// Largest order for which Weingarten tables are built by default.
pub const DEFAULT_K_MAX: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeingartenError {
    #[error("order k = {k} exceeds the cap {cap}")]
    OrderTooLarge { k: usize, cap: usize },
    #[error("N = {n} < k = {k}: the Gram matrix is singular")]
    Singular { n: u64, k: usize },
    #[error("permutation has the wrong length or is not a bijection")]
    BadPermutation,
    #[error("exact expectations are only available for unitary and permutation models")]
    NoExactFormula,
    #[error("index out of range")]
    Index,
}

pub type Perm = Vec<usize>;

/// All permutations of `0..k` in lexicographic order.
pub fn all_perms(k: usize) -> Vec<Perm> {
    let mut out = Vec::new();
    let mut p: Perm = (0..k).collect();
    loop {
        out.push(p.clone());
        // next lexicographic permutation
        let Some(i) = (1..k).rev().find(|&i| p[i - 1] < p[i]) else { break };
        let j = (i..k).rev().find(|&j| p[j] > p[i - 1]).expect("exists");
        p.swap(i - 1, j);
        p[i..].reverse();
    }
    out
}

/// `(a ∘ b)(x) = a(b(x))`.
pub fn compose(a: &[usize], b: &[usize]) -> Perm {
    b.iter().map(|&x| a[x]).collect()
}

pub fn inverse(a: &[usize]) -> Perm {
    let mut inv = vec![0; a.len()];
    for (x, &y) in a.iter().enumerate() {
        inv[y] = x;
    }
    inv
}

pub fn is_perm(a: &[usize]) -> bool {
    let mut seen = vec![false; a.len()];
    a.iter().all(|&y| y < a.len() && !std::mem::replace(&mut seen[y], true))
}

/// Cycle lengths in decreasing order.
pub fn cycle_type(a: &[usize]) -> Vec<usize> {
    let mut seen = vec![false; a.len()];
    let mut out = Vec::new();
    for s in 0..a.len() {
        if seen[s] {
            continue;
        }
        let mut len = 0;
        let mut x = s;
        while !seen[x] {
            seen[x] = true;
            x = a[x];
            len += 1;
        }
        out.push(len);
    }
    out.sort_unstable_by(|x, y| y.cmp(x));
    out
}

pub fn cycle_count(a: &[usize]) -> usize {
    cycle_type(a).len()
}

/// Integer partitions of `k` in decreasing parts.
pub fn partitions(k: usize) -> Vec<Vec<usize>> {
    fn rec(rest: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest == 0 {
            out.push(cur.clone());
            return;
        }
        for part in (1..=rest.min(max)).rev() {
            cur.push(part);
            rec(rest - part, part, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, k, &mut Vec::new(), &mut out);
    out
}

fn representative(parts: &[usize]) -> Perm {
    let k: usize = parts.iter().sum();
    let mut p = vec![0; k];
    let mut start = 0;
    for &len in parts {
        for t in 0..len {
            p[start + t] = start + (t + 1) % len;
        }
        start += len;
    }
    p
}

/// `Wg(·, N)` on `S_k`, stored per cycle type.
#[derive(Clone, Debug)]
pub struct WeingartenTable {
    pub k: usize,
    pub n: u64,
    pub by_type: BTreeMap<Vec<usize>, BigRational>,
}

impl WeingartenTable {
    pub fn new(k: usize, n: u64) -> Result<Self, WeingartenError> {
        Self::with_cap(k, n, DEFAULT_K_MAX)
    }

    /// Solves `Σ_τ N^{#cycles(σ^{-1}τ)} Wg(τ) = [σ = id]` restricted to class
    /// functions (one equation per cycle type).
    pub fn with_cap(k: usize, n: u64, k_max: usize) -> Result<Self, WeingartenError> {
        if k > k_max {
            return Err(WeingartenError::OrderTooLarge { k, cap: k_max });
        }
        if (n as u128) < k as u128 {
            return Err(WeingartenError::Singular { n, k });
        }
        let types = partitions(k);
        let index: HashMap<Vec<usize>, usize> = types.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        let perms = all_perms(k);
        let perm_types: Vec<usize> = perms.iter().map(|p| index[&cycle_type(p)]).collect();
        let powers: Vec<BigInt> = (0..=k).map(|c| num::pow(BigInt::from(n), c)).collect();
        let size = types.len();
        let mut m = vec![vec![BigRational::zero(); size + 1]; size];
        for (row, parts) in types.iter().enumerate() {
            let sigma_inv = inverse(&representative(parts));
            for (tau, &col) in perms.iter().zip(&perm_types) {
                let c = cycle_count(&compose(&sigma_inv, tau));
                m[row][col] += BigRational::from_integer(powers[c].clone());
            }
            if parts.iter().all(|&p| p == 1) {
                m[row][size] = BigRational::one();
            }
        }
        let sol = solve_rational(m).ok_or(WeingartenError::Singular { n, k })?;
        Ok(WeingartenTable { k, n, by_type: types.into_iter().zip(sol).collect() })
    }

    /// Cached table for `(k, N)`.
    pub fn cached(k: usize, n: u64) -> Result<Arc<Self>, WeingartenError> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, u64), Arc<WeingartenTable>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(t) = cache.lock().expect("cache lock").get(&(k, n)) {
            return Ok(t.clone());
        }
        let t = Arc::new(Self::new(k, n)?);
        cache.lock().expect("cache lock").insert((k, n), t.clone());
        Ok(t)
    }

    pub fn value(&self, sigma: &[usize]) -> Result<BigRational, WeingartenError> {
        if sigma.len() != self.k || !is_perm(sigma) {
            return Err(WeingartenError::BadPermutation);
        }
        Ok(self.by_type[&cycle_type(sigma)].clone())
    }

    /// Maximum over `σ` of `|Σ_τ N^{#cycles(σ^{-1}τ)} Wg(τ) - [σ = id]|`,
    /// over all of `S_k` when `full`, else over one `σ` per cycle type.
    pub fn defining_residual(&self, full: bool) -> BigRational {
        let perms = all_perms(self.k);
        let values: Vec<BigRational> = perms.iter().map(|p| self.by_type[&cycle_type(p)].clone()).collect();
        let rows: Vec<Perm> = if full { perms.clone() } else { partitions(self.k).iter().map(|t| representative(t)).collect() };
        let mut worst = BigRational::zero();
        for sigma in rows {
            let sigma_inv = inverse(&sigma);
            let mut total = BigRational::zero();
            for (tau, w) in perms.iter().zip(&values) {
                let c = cycle_count(&compose(&sigma_inv, tau));
                total += w * BigRational::from_integer(num::pow(BigInt::from(self.n), c));
            }
            if sigma.iter().enumerate().all(|(i, &x)| i == x) {
                total -= BigRational::one();
            }
            if total.abs() > worst {
                worst = total.abs();
            }
        }
        worst
    }

    pub fn to_json(&self) -> WeingartenJson {
        let values = all_perms(self.k)
            .into_iter()
            .map(|p| {
                let v = &self.by_type[&cycle_type(&p)];
                let key = p.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
                (key, [v.numer().to_string(), v.denom().to_string()])
            })
            .collect();
        WeingartenJson { k: self.k, n: self.n, values }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct WeingartenJson {
    pub k: usize,
    #[serde(rename = "N")]
    pub n: u64,
    pub values: BTreeMap<String, [String; 2]>,
}

/// Gaussian elimination on an augmented rational system.
fn solve_rational(mut m: Vec<Vec<BigRational>>) -> Option<Vec<BigRational>> {
    let size = m.len();
    for col in 0..size {
        let pivot = (col..size).find(|&r| !m[r][col].is_zero())?;
        m.swap(col, pivot);
        let inv = m[col][col].recip();
        for x in m[col].iter_mut() {
            *x *= &inv;
        }
        for r in 0..size {
            if r != col && !m[r][col].is_zero() {
                let f = m[r][col].clone();
                for c in col..=size {
                    let sub = &f * &m[col][c];
                    m[r][c] -= sub;
                }
            }
        }
    }
    Some(m.into_iter().map(|row| row[size].clone()).collect())
}

/// `Wg(σ, N)`.
pub fn wg(sigma: &[usize], n: u64) -> Result<BigRational, WeingartenError> {
    WeingartenTable::cached(sigma.len(), n)?.value(sigma)
}

// ---------------------------------------------------------------------------
// entry products

/// One factor `U^{(matrix)}_{row,col}` or its conjugate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Factor {
    pub matrix: usize,
    pub row: usize,
    pub col: usize,
    pub conj: bool,
}

/// A product of entries of independent Haar matrices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct EntrySpec {
    pub factors: Vec<Factor>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Unitary,
    Orthogonal,
}

impl EntrySpec {
    pub fn new(factors: Vec<Factor>) -> Self {
        EntrySpec { factors }
    }

    fn groups(&self) -> BTreeMap<usize, Vec<Factor>> {
        let mut g: BTreeMap<usize, Vec<Factor>> = BTreeMap::new();
        for f in &self.factors {
            g.entry(f.matrix).or_default().push(*f);
        }
        g
    }

    /// Value of the product for concrete matrices `us[matrix]`.
    pub fn evaluate(&self, us: &[crate::linalg::CMat]) -> C64 {
        self.factors
            .iter()
            .map(|f| {
                let z = us[f.matrix][(f.row, f.col)];
                if f.conj {
                    z.conj()
                } else {
                    z
                }
            })
            .product()
    }
}

/// Random balanced product of `k` entries and `k` conjugate entries of
/// `matrices` independent matrices, indices below `range`.
pub fn random_balanced_spec<R: Rng>(rng: &mut R, k: usize, matrices: usize, range: usize) -> EntrySpec {
    let plain: Vec<Factor> = (0..k)
        .map(|_| Factor { matrix: rng.random_range(0..matrices), row: rng.random_range(0..range), col: rng.random_range(0..range), conj: false })
        .collect();
    let mut factors = plain.clone();
    for m in 0..matrices {
        let mut rows: Vec<usize> = plain.iter().filter(|f| f.matrix == m).map(|f| f.row).collect();
        let mut cols: Vec<usize> = plain.iter().filter(|f| f.matrix == m).map(|f| f.col).collect();
        rows.shuffle(rng);
        cols.shuffle(rng);
        factors.extend(rows.into_iter().zip(cols).map(|(row, col)| Factor { matrix: m, row, col, conj: true }));
    }
    EntrySpec::new(factors)
}

/// A balanced spec with one factor dropped or one index shifted, retried
/// until it is unbalanced.
pub fn random_unbalanced_spec<R: Rng>(rng: &mut R, k: usize, matrices: usize, range: usize) -> EntrySpec {
    loop {
        let mut s = random_balanced_spec(rng, k, matrices, range);
        let i = rng.random_range(0..s.factors.len());
        match rng.random_range(0..3) {
            0 => {
                s.factors.remove(i);
            }
            1 => s.factors[i].row = (s.factors[i].row + 1) % range.max(2),
            _ => s.factors[i].col = (s.factors[i].col + 1) % range.max(2),
        }
        if !is_balanced(&s, Group::Unitary) {
            return s;
        }
    }
}

/// Unitary: for each matrix, every row (column) index occurs equally often in
/// plain and conjugated factors. Orthogonal: every index occurs an even
/// number of times.
pub fn is_balanced(spec: &EntrySpec, group: Group) -> bool {
    spec.groups().values().all(|fs| {
        let mut rows: HashMap<usize, i64> = HashMap::new();
        let mut cols: HashMap<usize, i64> = HashMap::new();
        for f in fs {
            let s = match group {
                Group::Unitary if f.conj => -1,
                _ => 1,
            };
            *rows.entry(f.row).or_insert(0) += s;
            *cols.entry(f.col).or_insert(0) += s;
        }
        match group {
            Group::Unitary => rows.values().chain(cols.values()).all(|&c| c == 0),
            Group::Orthogonal => rows.values().chain(cols.values()).all(|&c| c % 2 == 0),
        }
    })
}

/// Permutations `σ` of `0..k` with `left[a] = right[σ(a)]` for all `a`.
fn matchings(left: &[usize], right: &[usize]) -> Vec<Perm> {
    fn rec(a: usize, left: &[usize], right: &[usize], used: &mut Vec<bool>, cur: &mut Perm, out: &mut Vec<Perm>) {
        if a == left.len() {
            out.push(cur.clone());
            return;
        }
        for b in 0..right.len() {
            if !used[b] && right[b] == left[a] {
                used[b] = true;
                cur.push(b);
                rec(a + 1, left, right, used, cur, out);
                cur.pop();
                used[b] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(0, left, right, &mut vec![false; right.len()], &mut Vec::new(), &mut out);
    out
}

/// Exact `E Π U^{ε_t}_{x_t y_t}` for independent Haar unitaries of size `N`.
pub fn unitary_entry_expectation(spec: &EntrySpec, n: u64) -> Result<BigRational, WeingartenError> {
    if spec.factors.iter().any(|f| f.row as u64 >= n || f.col as u64 >= n) {
        return Err(WeingartenError::Index);
    }
    if !is_balanced(spec, Group::Unitary) {
        return Ok(BigRational::zero());
    }
    let mut total = BigRational::one();
    for fs in spec.groups().values() {
        let plain: Vec<&Factor> = fs.iter().filter(|f| !f.conj).collect();
        let conj: Vec<&Factor> = fs.iter().filter(|f| f.conj).collect();
        let k = plain.len();
        let table = WeingartenTable::cached(k, n)?;
        let rows_p: Vec<usize> = plain.iter().map(|f| f.row).collect();
        let rows_c: Vec<usize> = conj.iter().map(|f| f.row).collect();
        let cols_p: Vec<usize> = plain.iter().map(|f| f.col).collect();
        let cols_c: Vec<usize> = conj.iter().map(|f| f.col).collect();
        let sigmas = matchings(&rows_p, &rows_c);
        let taus = matchings(&cols_p, &cols_c);
        let mut sum = BigRational::zero();
        for s in &sigmas {
            for t in &taus {
                sum += table.value(&compose(t, &inverse(s)))?;
            }
        }
        total *= sum;
        if total.is_zero() {
            break;
        }
    }
    Ok(total)
}

/// Falling factorial `(N)_r`.
pub fn falling(n: u64, r: usize) -> BigInt {
    let mut acc = BigInt::one();
    for t in 0..r as u64 {
        if t >= n {
            return BigInt::zero();
        }
        acc *= BigInt::from(n - t);
    }
    acc
}

/// `E Π 1(σ_{m}(x) = y)` over independent uniform permutations of `⟦N⟧`,
/// with each factor replaced by `1(σ(x) = y) - 1/N` when `centered`.
pub fn permutation_entry_expectation(
    constraints: &[(usize, usize, usize)],
    n: u64,
    centered: bool,
) -> Result<BigRational, WeingartenError> {
    if constraints.iter().any(|&(_, x, y)| x as u64 >= n || y as u64 >= n) {
        return Err(WeingartenError::Index);
    }
    if !centered {
        return Ok(uncentered_permutation(constraints, n));
    }
    let k = constraints.len();
    let mean = BigRational::new(BigInt::from(-1), BigInt::from(n));
    let mut total = BigRational::zero();
    for mask in 0u64..(1u64 << k) {
        let kept: Vec<(usize, usize, usize)> =
            (0..k).filter(|&t| mask >> t & 1 == 1).map(|t| constraints[t]).collect();
        let dropped = (k - kept.len()) as i32;
        let base = uncentered_permutation(&kept, n);
        if !base.is_zero() {
            total += base * num::pow(mean.clone(), dropped as usize);
        }
    }
    Ok(total)
}

fn uncentered_permutation(constraints: &[(usize, usize, usize)], n: u64) -> BigRational {
    let mut by_matrix: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    let mut inverse_maps: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for &(m, x, y) in constraints {
        let fwd = by_matrix.entry(m).or_default();
        match fwd.get(&x) {
            Some(&yy) if yy != y => return BigRational::zero(),
            _ => {
                fwd.insert(x, y);
            }
        }
        let back = inverse_maps.entry(m).or_default();
        match back.get(&y) {
            Some(&xx) if xx != x => return BigRational::zero(),
            _ => {
                back.insert(y, x);
            }
        }
    }
    let mut den = BigInt::one();
    for fwd in by_matrix.values() {
        den *= falling(n, fwd.len());
    }
    if den.is_zero() {
        return BigRational::zero();
    }
    BigRational::new(BigInt::one(), den)
}

// ---------------------------------------------------------------------------
// path weights

#[derive(Clone, Debug, PartialEq)]
pub enum PathWeight {
    Exact(BigRational),
    Estimate { mean: C64, stderr: f64 },
}

impl PathWeight {
    pub fn as_f64(&self) -> f64 {
        match self {
            PathWeight::Exact(r) => r.to_f64().unwrap_or(f64::NAN),
            PathWeight::Estimate { mean, .. } => mean.re,
        }
    }
}

/// Entry product `Π_t (U_{i_t})_{x_{t-1} x_t}` with `(U_{i*})_{ab} = conj((U_i)_{ba})`.
pub fn path_entry_spec(path: &ColoredPath) -> EntrySpec {
    let d = path.d;
    let factors = (0..path.len())
        .map(|t| {
            let (a, b, i) = (path.vertices[t], path.vertices[t + 1], path.colors[t]);
            if i <= d {
                Factor { matrix: i - 1, row: a, col: b, conj: false }
            } else {
                Factor { matrix: i - d - 1, row: b, col: a, conj: true }
            }
        })
        .collect();
    EntrySpec { factors }
}

/// Constraints `σ_m(x) = y` of a path for the permutation model.
pub fn path_constraints(path: &ColoredPath) -> Vec<(usize, usize, usize)> {
    let d = path.d;
    (0..path.len())
        .map(|t| {
            let (a, b, i) = (path.vertices[t], path.vertices[t + 1], path.colors[t]);
            if i <= d {
                (i - 1, a, b)
            } else {
                (i - d - 1, b, a)
            }
        })
        .collect()
}

/// `w(γ) = E Π_t (U_{i_t})_{x_{t-1} x_t}`: exact for unitary and permutation
/// models, Monte Carlo (`samples`, `seed`) for the orthogonal model.
pub fn path_weight(path: &ColoredPath, n: u64, model: ModelKind, mc: Option<(usize, u64)>) -> Result<PathWeight, WeingartenError> {
    match model {
        ModelKind::Unitary => Ok(PathWeight::Exact(unitary_entry_expectation(&path_entry_spec(path), n)?)),
        ModelKind::Permutation => Ok(PathWeight::Exact(permutation_entry_expectation(&path_constraints(path), n, false)?)),
        ModelKind::Orthogonal => {
            let (samples, seed) = mc.ok_or(WeingartenError::NoExactFormula)?;
            let spec = path_entry_spec(path);
            let est = mc_expectations(&[spec], n as usize, path.d, ModelKind::Orthogonal, samples, seed);
            Ok(PathWeight::Estimate { mean: est[0].mean, stderr: est[0].stderr })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: C64,
    /// `√(var(Re) + var(Im)) / √samples`
    pub stderr: f64,
}

/// Monte Carlo estimates of several entry products on shared samples.
pub fn mc_expectations(specs: &[EntrySpec], n: usize, d: usize, model: ModelKind, samples: usize, seed: u64) -> Vec<McEstimate> {
    let mut re = vec![Vec::with_capacity(samples); specs.len()];
    let mut im = vec![Vec::with_capacity(samples); specs.len()];
    for s in 0..samples {
        let sample = ModelSample::draw(model, n, d, derive_seed(seed, s as u64)).expect("n >= 1");
        let us: Vec<crate::linalg::CMat> = (1..=d).map(|i| sample.generator(i)).collect();
        for (j, spec) in specs.iter().enumerate() {
            let v = spec.evaluate(&us);
            re[j].push(v.re);
            im[j].push(v.im);
        }
    }
    re.iter()
        .zip(&im)
        .map(|(r, i)| {
            let (mr, sr) = mean_stderr(r);
            let (mi, si) = mean_stderr(i);
            McEstimate { mean: C64::new(mr, mi), stderr: (sr * sr + si * si).sqrt() }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightBoundReport {
    pub pass: bool,
    /// `|w| / (c e^{mη} N^{-m/2} η^{e₁} m^{2χ})`
    pub ratio: f64,
    /// whether `2 m^{7/2} ≤ N²` holds
    pub in_range: bool,
    pub forced_zero: bool,
}

/// Checks `w(γ) = 0` when `v > m/2`, and `|w(γ)| ≤ c e^{mη} N^{-m/2} η^{e₁} m^{2χ}`
/// with `η = m N^{-1/4}`.
pub fn weight_bound_check(path: &ColoredPath, n: u64, c: f64) -> Result<WeightBoundReport, WeingartenError> {
    let stats = path_stats(path);
    let w = unitary_entry_expectation(&path_entry_spec(path), n)?;
    let wf = w.to_f64().unwrap_or(f64::NAN).abs();
    let m = stats.m as f64;
    let nf = n as f64;
    let forced_zero = 2 * stats.v > stats.m;
    if forced_zero {
        return Ok(WeightBoundReport { pass: w.is_zero(), ratio: wf, in_range: 2.0 * m.powf(3.5) <= nf * nf, forced_zero });
    }
    let eta = m * nf.powf(-0.25);
    let shape = c * (m * eta).exp() * nf.powf(-m / 2.0) * eta.powi(stats.e1 as i32) * m.powf(2.0 * stats.chi());
    let ratio = wf / shape;
    Ok(WeightBoundReport { pass: ratio <= 1.0 + 1e-12, ratio, in_range: 2.0 * m.powf(3.5) <= nf * nf, forced_zero })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(a: i64, b: i64) -> BigRational {
        BigRational::new(BigInt::from(a), BigInt::from(b))
    }

    #[test]
    fn small_weingarten_values() {
        assert_eq!(wg(&[0], 5).unwrap(), r(1, 5));
        for n in 2..6i64 {
            assert_eq!(wg(&[0, 1], n as u64).unwrap(), r(1, n * n - 1));
            assert_eq!(wg(&[1, 0], n as u64).unwrap(), r(-1, n * (n * n - 1)));
        }
        assert_eq!(wg(&[0, 1], 2).unwrap(), r(1, 3));
        assert!(matches!(wg(&[0, 1, 2], 2), Err(WeingartenError::Singular { .. })));
        // k = 3: Wg(id) = (N²-2)/(N(N²-1)(N²-4))
        let n = 5i64;
        assert_eq!(wg(&[0, 1, 2], 5).unwrap(), r(n * n - 2, n * (n * n - 1) * (n * n - 4)));
    }

    #[test]
    fn defining_system_is_exact() {
        for k in 1..=5 {
            let t = WeingartenTable::new(k, k as u64 + 2).unwrap();
            assert!(t.defining_residual(true).is_zero());
        }
        let t = WeingartenTable::new(4, 4).unwrap();
        assert!(t.defining_residual(true).is_zero());
        assert!(WeingartenTable::with_cap(9, 20, 8).is_err());
    }

    #[test]
    fn entry_expectations() {
        let f = |row, col, conj| Factor { matrix: 0, row, col, conj };
        let n = 7;
        let e = unitary_entry_expectation(&EntrySpec::new(vec![f(0, 0, false), f(0, 0, true)]), n).unwrap();
        assert_eq!(e, r(1, 7));
        let e = unitary_entry_expectation(&EntrySpec::new(vec![f(0, 0, false), f(0, 1, true)]), n).unwrap();
        assert!(e.is_zero());
        let spec = EntrySpec::new(vec![f(0, 0, false), f(0, 0, true), f(1, 1, false), f(1, 1, true)]);
        assert_eq!(unitary_entry_expectation(&spec, n).unwrap(), r(1, 48));
        // E|U11|⁴ = 2/(N(N+1))
        let spec = EntrySpec::new(vec![f(0, 0, false), f(0, 0, false), f(0, 0, true), f(0, 0, true)]);
        assert_eq!(unitary_entry_expectation(&spec, n).unwrap(), r(2, 56));
    }

    #[test]
    fn balancedness() {
        let f = |row, col, conj| Factor { matrix: 0, row, col, conj };
        assert!(is_balanced(&EntrySpec::new(vec![f(0, 0, false), f(0, 0, true)]), Group::Unitary));
        assert!(!is_balanced(&EntrySpec::new(vec![f(0, 0, false), f(1, 1, false)]), Group::Unitary));
        assert!(is_balanced(&EntrySpec::new(vec![f(0, 0, false), f(0, 0, false)]), Group::Orthogonal));
        assert!(!is_balanced(&EntrySpec::new(vec![f(0, 0, false), f(0, 0, false)]), Group::Unitary));
    }

    #[test]
    fn permutation_expectations() {
        assert_eq!(permutation_entry_expectation(&[(0, 1, 2)], 5, false).unwrap(), r(1, 5));
        assert!(permutation_entry_expectation(&[(0, 1, 2), (0, 1, 3)], 5, false).unwrap().is_zero());
        assert!(permutation_entry_expectation(&[(0, 1, 2), (0, 3, 2)], 5, false).unwrap().is_zero());
        assert_eq!(permutation_entry_expectation(&[(0, 1, 2), (0, 3, 4)], 5, false).unwrap(), r(1, 20));
        assert_eq!(permutation_entry_expectation(&[(0, 1, 2), (1, 3, 4)], 5, false).unwrap(), r(1, 25));
        assert!(permutation_entry_expectation(&[(0, 1, 2)], 5, true).unwrap().is_zero());
    }

    #[test]
    fn perms_and_types() {
        assert_eq!(all_perms(4).len(), 24);
        assert_eq!(partitions(5).len(), 7);
        assert_eq!(partitions(8).len(), 22);
        assert_eq!(cycle_type(&[1, 2, 0, 3]), vec![3, 1]);
        assert_eq!(cycle_type(&representative(&[3, 2, 2])), vec![3, 2, 2]);
    }

    #[test]
    fn table_json() {
        let t = WeingartenTable::new(2, 3).unwrap();
        let j = t.to_json();
        assert_eq!(j.values["0,1"], ["1".to_string(), "8".to_string()]);
        assert_eq!(j.values["1,0"], ["-1".to_string(), "24".to_string()]);
    }
}
