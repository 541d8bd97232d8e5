//! Non-commutative Cauchy–Schwarz: sums over pair partitions of products of
//! indexed matrix families, the tensor-lifted corner identity, the `Q`
//! factors bounding `‖X_π‖`, θ-control certificates and a Gaussian
//! Khintchine check.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::{complex_gaussian, eye, kron, max_abs, max_abs_diff, ntrace, op_norm, psd_sqrt, CMat, C64, ONE};
use crate::rng::{derive_seed, seeded};

pub const PSD_FAIL: f64 = 1e-8;
pub const OPEN_TOL: f64 = 1e-12;
pub const BOUND_SLACK: f64 = 1e-10;
const EXHAUSTIVE_DEP_CHECK: usize = 100_000;
const LIFT_DIM_CAP: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NccsError {
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error("invalid family: {0}")]
    Family(String),
    #[error("family is not open for the partition: position {position}")]
    NotOpen { position: usize },
    #[error("matrix not positive semidefinite: eigenvalue {0}")]
    NotPsd(f64),
    #[error("lifted dimension {0} exceeds cap")]
    TooLarge(usize),
    #[error("structure hypothesis fails: {0}")]
    Structure(String),
}

/// Partition of `S ⊆ {0..r}` into singleton and pair blocks (0-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairPartition {
    pub r: usize,
    pub blocks: Vec<Vec<usize>>,
    block_of: Vec<Option<usize>>,
}

impl PairPartition {
    pub fn new(r: usize, blocks: Vec<Vec<usize>>) -> Result<Self, NccsError> {
        let mut block_of = vec![None; r];
        let mut sorted = Vec::with_capacity(blocks.len());
        for (l, b) in blocks.into_iter().enumerate() {
            if b.is_empty() || b.len() > 2 {
                return Err(NccsError::Partition(format!("block {l} has size {}", b.len())));
            }
            let mut b = b;
            b.sort_unstable();
            for &i in &b {
                if i >= r {
                    return Err(NccsError::Partition(format!("position {i} out of range")));
                }
                if block_of[i].is_some() {
                    return Err(NccsError::Partition(format!("position {i} in two blocks")));
                }
                block_of[i] = Some(l);
            }
            sorted.push(b);
        }
        Ok(Self { r, blocks: sorted, block_of })
    }

    /// Build from 1-based blocks.
    pub fn one_based(r: usize, blocks: &[&[usize]]) -> Result<Self, NccsError> {
        let b = blocks.iter().map(|b| b.iter().map(|&i| i.wrapping_sub(1)).collect()).collect();
        Self::new(r, b)
    }

    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_of(&self, i: usize) -> Option<usize> {
        self.block_of[i]
    }

    pub fn in_s(&self, i: usize) -> bool {
        self.block_of[i].is_some()
    }

    pub fn t_positions(&self) -> Vec<usize> {
        (0..self.r).filter(|&i| !self.in_s(i)).collect()
    }

    pub fn is_singleton(&self, l: usize) -> bool {
        self.blocks[l].len() == 1
    }

    /// Blocks `B` with `min B < i < max B`.
    pub fn open_at(&self, i: usize) -> Vec<usize> {
        (0..self.k())
            .filter(|&l| {
                let b = &self.blocks[l];
                b.len() == 2 && b[0] < i && i < b[1]
            })
            .collect()
    }

    /// Coordinates the value at position `i` may depend on.
    pub fn declared(&self, i: usize) -> Vec<usize> {
        match self.block_of[i] {
            Some(l) => vec![l],
            None => self.open_at(i),
        }
    }

    /// All pair partitions of `{0..2k}`.
    pub fn all_pairings(r: usize) -> Vec<PairPartition> {
        fn rec(rest: &[usize], acc: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
            if rest.is_empty() {
                out.push(acc.clone());
                return;
            }
            let a = rest[0];
            for t in 1..rest.len() {
                let b = rest[t];
                let left: Vec<usize> = rest[1..].iter().copied().filter(|&x| x != b).collect();
                acc.push(vec![a, b]);
                rec(&left, acc, out);
                acc.pop();
            }
        }
        if r % 2 == 1 {
            return Vec::new();
        }
        let all: Vec<usize> = (0..r).collect();
        let mut out = Vec::new();
        rec(&all, &mut Vec::new(), &mut out);
        out.into_iter().map(|b| PairPartition::new(r, b).unwrap()).collect()
    }
}

/// Matrices `X_{i,j⃗}` for positions `i < r` and `j⃗ ∈ J_1×…×J_k`, stored as
/// full tables in row-major index order.
#[derive(Debug, Clone)]
pub struct IndexedFamily {
    pub dim: usize,
    pub sizes: Vec<usize>,
    pub values: Vec<Vec<CMat>>,
}

impl IndexedFamily {
    pub fn from_fn<F>(dim: usize, sizes: Vec<usize>, r: usize, mut f: F) -> Self
    where
        F: FnMut(usize, &[usize]) -> CMat,
    {
        let total: usize = sizes.iter().product();
        let mut values = Vec::with_capacity(r);
        for i in 0..r {
            let mut row = Vec::with_capacity(total);
            for idx in 0..total {
                let j = unravel(idx, &sizes);
                let m = f(i, &j);
                assert_eq!(m.shape(), (dim, dim));
                row.push(m);
            }
            values.push(row);
        }
        Self { dim, sizes, values }
    }

    pub fn r(&self) -> usize {
        self.values.len()
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn index_count(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn get(&self, i: usize, j: &[usize]) -> &CMat {
        &self.values[i][ravel(j, &self.sizes)]
    }

    /// `X_{i,j}` for `i ∈ S`, reading coordinate `j` of block `l_i`.
    pub fn s_value(&self, pi: &PairPartition, i: usize, j: usize) -> &CMat {
        let l = pi.block_of(i).expect("position in S");
        let mut v = vec![0; self.k()];
        v[l] = j;
        self.get(i, &v)
    }

    /// Zero-pad every index set to size `m`.
    pub fn padded(&self, m: usize) -> Self {
        let sizes = vec![m; self.k()];
        let zero = CMat::zeros(self.dim, self.dim);
        Self::from_fn(self.dim, sizes, self.r(), |i, j| {
            if j.iter().zip(&self.sizes).all(|(a, b)| a < b) {
                self.get(i, j).clone()
            } else {
                zero.clone()
            }
        })
    }

    fn check_shape(&self, pi: &PairPartition) -> Result<(), NccsError> {
        if self.r() != pi.r {
            return Err(NccsError::Family(format!("{} positions, partition has r = {}", self.r(), pi.r)));
        }
        if self.k() != pi.k() {
            return Err(NccsError::Family(format!("{} index sets, partition has k = {}", self.k(), pi.k())));
        }
        Ok(())
    }

    /// Whether position `i` depends only on coordinates `coords`.
    pub fn depends_only_on(&self, i: usize, coords: &[usize], tol: f64, seed: u64) -> bool {
        let total = self.index_count();
        if total == 0 {
            return true;
        }
        let project = |j: &[usize]| -> Vec<usize> {
            let mut p = vec![0; j.len()];
            for &c in coords {
                p[c] = j[c];
            }
            p
        };
        if total <= EXHAUSTIVE_DEP_CHECK {
            return (0..total).all(|idx| {
                let j = unravel(idx, &self.sizes);
                max_abs_diff(&self.values[i][idx], self.get(i, &project(&j))) <= tol
            });
        }
        let mut rng = seeded(seed);
        (0..1000).all(|_| {
            let j: Vec<usize> = self.sizes.iter().map(|&s| rng.random_range(0..s)).collect();
            max_abs_diff(self.get(i, &j), self.get(i, &project(&j))) <= tol
        })
    }

    /// Verifies that every position depends only on its declared coordinates.
    pub fn check_open(&self, pi: &PairPartition) -> Result<(), NccsError> {
        self.check_shape(pi)?;
        for i in 0..pi.r {
            if !self.depends_only_on(i, &pi.declared(i), OPEN_TOL, i as u64) {
                return Err(NccsError::NotOpen { position: i });
            }
        }
        Ok(())
    }

    pub fn is_open_for(&self, pi: &PairPartition) -> bool {
        self.check_open(pi).is_ok()
    }
}

fn unravel(mut idx: usize, sizes: &[usize]) -> Vec<usize> {
    let mut j = vec![0; sizes.len()];
    for t in (0..sizes.len()).rev() {
        j[t] = idx % sizes[t];
        idx /= sizes[t];
    }
    j
}

fn ravel(j: &[usize], sizes: &[usize]) -> usize {
    j.iter().zip(sizes).fold(0, |acc, (&a, &s)| acc * s + a)
}

/// `Σ_{j⃗∈J} X_{1,j⃗}⋯X_{r,j⃗}` by direct summation.
pub fn x_pi_sum(x: &IndexedFamily, pi: &PairPartition) -> Result<CMat, NccsError> {
    x.check_shape(pi)?;
    Ok(signed_sum(x, |_| 1.0))
}

fn signed_sum<F: Fn(usize) -> f64>(x: &IndexedFamily, delta: F) -> CMat {
    let mut acc = CMat::zeros(x.dim, x.dim);
    for idx in 0..x.index_count() {
        let w = delta(idx);
        if w == 0.0 {
            continue;
        }
        let mut p = eye(x.dim);
        for i in 0..x.r() {
            p = p * &x.values[i][idx];
        }
        acc += p * C64::new(w, 0.0);
    }
    acc
}

fn unit_matrix(m: usize, a: usize, b: usize) -> CMat {
    let mut e = CMat::zeros(m, m);
    e[(a, b)] = ONE;
    e
}

fn tensor_chain(factors: &[CMat], x: &CMat) -> CMat {
    let mut out = factors[0].clone();
    for f in &factors[1..] {
        out = kron(&out, f);
    }
    kron(&out, x)
}

/// Splits a singleton factor `X = √H · (√H U)` with `X = HU` its polar
/// decomposition, so that `AA* = √(XX*)` and `B*B = √(X*X)`.
pub fn polar_split(x: &CMat) -> (CMat, CMat) {
    let n = x.nrows();
    let svd = x.clone().svd(true, true);
    let w = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut s = CMat::zeros(n, n);
    for i in 0..n {
        s[(i, i)] = C64::new(svd.singular_values[i].max(0.0).sqrt(), 0.0);
    }
    let a = &w * &s * w.adjoint();
    let b = &w * s * vt;
    (a, b)
}

/// Replaces each singleton block `{i}` by the pair `{i, i+1}` carrying the
/// two polar factors.
pub fn double_singletons(x: &IndexedFamily, pi: &PairPartition) -> Result<(IndexedFamily, PairPartition), NccsError> {
    x.check_shape(pi)?;
    let mut new_pos = Vec::with_capacity(pi.r);
    let mut values = Vec::new();
    let mut shift = 0;
    for i in 0..pi.r {
        new_pos.push(i + shift);
        match pi.block_of(i) {
            Some(l) if pi.is_singleton(l) => {
                let (mut left, mut right) = (Vec::new(), Vec::new());
                for m in &x.values[i] {
                    let (a, b) = polar_split(m);
                    left.push(a);
                    right.push(b);
                }
                values.push(left);
                values.push(right);
                shift += 1;
            }
            _ => values.push(x.values[i].clone()),
        }
    }
    let blocks = pi
        .blocks
        .iter()
        .map(|b| if b.len() == 1 { vec![new_pos[b[0]], new_pos[b[0]] + 1] } else { b.iter().map(|&i| new_pos[i]).collect() })
        .collect();
    let fam = IndexedFamily { dim: x.dim, sizes: x.sizes.clone(), values };
    let part = PairPartition::new(pi.r + shift, blocks)?;
    Ok((fam, part))
}

/// Lifted operators `X̃_i` on `(ℂ^m)^{⊗k} ⊗ ℂ^dim`, singletons doubled first.
pub fn lifted_operators(x: &IndexedFamily, pi: &PairPartition) -> Result<Vec<CMat>, NccsError> {
    x.check_open(pi)?;
    let (x, pi) = double_singletons(x, pi)?;
    let m = x.sizes.iter().copied().max().unwrap_or(0);
    let k = pi.k();
    let total = m.pow(k as u32) * x.dim;
    if total > LIFT_DIM_CAP {
        return Err(NccsError::TooLarge(total));
    }
    let x = if x.sizes.iter().all(|&s| s == m) { x } else { x.padded(m) };
    let id = eye(m);
    let mut out = Vec::with_capacity(pi.r);
    for i in 0..pi.r {
        let mut acc = CMat::zeros(total, total);
        match pi.block_of(i) {
            Some(l) => {
                let leftmost = pi.blocks[l][0] == i;
                for j in 0..m {
                    let mut f = vec![id.clone(); k];
                    f[l] = if leftmost { unit_matrix(m, 0, j) } else { unit_matrix(m, j, 0) };
                    acc += tensor_chain(&f, x.s_value(&pi, i, j));
                }
            }
            None => {
                let open = pi.open_at(i);
                let sub = vec![m; open.len()];
                let count: usize = sub.iter().product();
                for idx in 0..count {
                    let jj = unravel(idx, &sub);
                    let mut full = vec![0; k];
                    let mut f = vec![id.clone(); k];
                    for (t, &l) in open.iter().enumerate() {
                        full[l] = jj[t];
                        f[l] = unit_matrix(m, jj[t], jj[t]);
                    }
                    acc += tensor_chain(&f, x.get(i, &full));
                }
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// Corner block `(1,…,1)` of `∏ X̃_i`.
pub fn lifted_corner(x: &IndexedFamily, pi: &PairPartition) -> Result<CMat, NccsError> {
    let ops = lifted_operators(x, pi)?;
    let dim = x.dim;
    let total = ops.first().map(|o| o.nrows()).unwrap_or(dim);
    let mut p = eye(total);
    for o in &ops {
        p = p * o;
    }
    Ok(p.view((0, 0), (dim, dim)).into_owned())
}

#[derive(Debug, Clone)]
pub struct QReport {
    pub q: Vec<f64>,
    pub product: f64,
    pub norm: f64,
    pub pass: bool,
}

fn psd_root(m: &CMat) -> Result<CMat, NccsError> {
    match psd_sqrt(m, PSD_FAIL) {
        Ok(s) => Ok(s),
        Err(lo) => Err(NccsError::NotPsd(lo)),
    }
}

/// The factors `Q_{π,i}` and the check `‖X_π‖ ≤ ∏ Q_{π,i}`.
pub fn q_factors(x: &IndexedFamily, pi: &PairPartition) -> Result<QReport, NccsError> {
    x.check_shape(pi)?;
    let mut q = Vec::with_capacity(pi.r);
    for i in 0..pi.r {
        let v = match pi.block_of(i) {
            None => x.values[i].iter().map(op_norm).fold(0.0, f64::max),
            Some(l) => {
                let m = x.sizes[l];
                let mut left = CMat::zeros(x.dim, x.dim);
                let mut right = CMat::zeros(x.dim, x.dim);
                for j in 0..m {
                    let a = x.s_value(pi, i, j);
                    let aa = a * a.adjoint();
                    let ata = a.adjoint() * a;
                    if pi.is_singleton(l) {
                        left += psd_root(&aa)?;
                        right += psd_root(&ata)?;
                    } else {
                        left += aa;
                        right += ata;
                    }
                }
                if pi.is_singleton(l) {
                    op_norm(&left).sqrt() * op_norm(&right).sqrt()
                } else if pi.blocks[l][0] == i {
                    op_norm(&left).sqrt()
                } else {
                    op_norm(&right).sqrt()
                }
            }
        };
        q.push(v);
    }
    let product: f64 = q.iter().product();
    let norm = op_norm(&x_pi_sum(x, pi)?);
    let pass = norm <= product * (1.0 + BOUND_SLACK) + BOUND_SLACK;
    Ok(QReport { q, product, norm, pass })
}

/// Random partition of a random subset of `{0..r}`, `r ≤ r_max`, into at
/// most `k_max` blocks of size one or two.
pub fn random_partition<R: Rng>(rng: &mut R, r_max: usize, k_max: usize) -> PairPartition {
    let r = rng.random_range(1..=r_max.max(1));
    let k = rng.random_range(1..=k_max.max(1).min(r));
    let mut positions: Vec<usize> = (0..r).collect();
    positions.shuffle(rng);
    let mut blocks = Vec::new();
    let mut next = 0;
    for _ in 0..k {
        let size = if next + 1 < r && rng.random_bool(0.7) { 2 } else { 1 };
        if next + size > r {
            break;
        }
        let mut b = positions[next..next + size].to_vec();
        b.sort();
        blocks.push(b);
        next += size;
    }
    PairPartition::new(r, blocks).expect("disjoint blocks of size one or two")
}

/// Random family open for `pi`: positions in `S` depend on their block
/// coordinate, positions in `T` on the open blocks.
pub fn random_open_family<R: Rng>(rng: &mut R, pi: &PairPartition, sizes: &[usize], dim: usize) -> IndexedFamily {
    let mut tables: Vec<std::collections::HashMap<Vec<usize>, CMat>> = vec![Default::default(); pi.r];
    IndexedFamily::from_fn(dim, sizes.to_vec(), pi.r, |i, j| {
        let key: Vec<usize> = pi.declared(i).iter().map(|&l| j[l]).collect();
        tables[i].entry(key).or_insert_with(|| complex_gaussian(rng, dim, dim)).clone()
    })
}

#[derive(Debug, Clone)]
pub enum ControlStructure {
    /// `X_{i,j} = x_{i,j} ⊗ u_{i,j}` with `x ∈ M_n`, `u` unitary.
    UnitaryTensor { n: usize },
    /// `X f = X* f = ‖X‖ f` for every `X_{i,j}`, `i ∈ S`.
    SharedFixedVector { f: Vec<C64> },
}

#[derive(Debug, Clone)]
pub struct ThetaCertificate {
    pub theta: f64,
    pub structure_ok: bool,
    pub bound: f64,
    pub max_signed_norm: f64,
    pub strong_left: f64,
    pub strong_right: f64,
    pub samples: usize,
    pub pass: bool,
}

fn check_unitary_tensor(m: &CMat, n: usize, tol: f64) -> Result<(), String> {
    let dim = m.nrows();
    if n == 0 || dim % n != 0 {
        return Err(format!("dimension {dim} not divisible by {n}"));
    }
    let n0 = dim / n;
    // realignment: rows (a,b) ∈ n×n, columns (c,e) ∈ n0×n0
    let mut r = CMat::zeros(n * n, n0 * n0);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n0 {
                for e in 0..n0 {
                    r[(a * n + b, c * n0 + e)] = m[(a * n0 + c, b * n0 + e)];
                }
            }
        }
    }
    let scale = max_abs(m).max(1e-300);
    let svd = r.svd(true, true);
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).unwrap());
    if sv[order[0]] <= tol * scale {
        return Ok(());
    }
    if order.len() > 1 && sv[order[1]] > tol * scale * (n * n0) as f64 {
        return Err("not a simple tensor".into());
    }
    let vt = svd.v_t.unwrap();
    let row = vt.row(order[0]);
    let u = CMat::from_fn(n0, n0, |c, e| row[c * n0 + e]);
    let g = u.adjoint() * &u;
    let s = ntrace(&g).re;
    if max_abs_diff(&g, &(eye(n0) * C64::new(s, 0.0))) > 1e-8 * s.max(1.0) {
        return Err("second factor is not a multiple of a unitary".into());
    }
    Ok(())
}

fn check_fixed_vector(m: &CMat, f: &[C64], tol: f64) -> Result<(), String> {
    let fv = nalgebra::DVector::from_column_slice(f);
    let nf = fv.norm();
    if (nf - 1.0).abs() > 1e-10 {
        return Err("fixed vector is not a unit vector".into());
    }
    let nm = op_norm(m);
    let target = &fv * C64::new(nm, 0.0);
    let d1 = (m * &fv - &target).norm();
    let d2 = (m.adjoint() * &fv - &target).norm();
    if d1 > tol * nm.max(1.0) || d2 > tol * nm.max(1.0) {
        return Err("vector is not a shared top eigenvector".into());
    }
    Ok(())
}

fn abs_left(p: &CMat) -> Result<CMat, NccsError> {
    psd_root(&(p * p.adjoint()))
}

fn abs_right(p: &CMat) -> Result<CMat, NccsError> {
    psd_root(&(p.adjoint() * p))
}

/// θ-control certificate: validates the structure, then samples weight
/// patterns `δ ∈ [−1,1]^J` and checks `‖Σ δ_j X_{1,j}⋯X_{r,j}‖ ≤ θ^k ∏Q`.
pub fn theta_control_certificate(
    x: &IndexedFamily,
    pi: &PairPartition,
    structure: &ControlStructure,
    samples: usize,
    seed: u64,
) -> Result<ThetaCertificate, NccsError> {
    x.check_shape(pi)?;
    let mut structure_ok = true;
    for i in (0..pi.r).filter(|&i| pi.in_s(i)) {
        for m in &x.values[i] {
            let r = match structure {
                ControlStructure::UnitaryTensor { n } => check_unitary_tensor(m, *n, 1e-10),
                ControlStructure::SharedFixedVector { f } => check_fixed_vector(m, f, 1e-10),
            };
            if r.is_err() {
                structure_ok = false;
            }
        }
    }
    let theta = match structure {
        ControlStructure::UnitaryTensor { n } => *n as f64,
        ControlStructure::SharedFixedVector { .. } => 1.0,
    };
    let q = q_factors(x, pi)?;
    let bound = theta.powi(pi.k() as i32) * q.product;
    let total = x.index_count();
    let mut products = Vec::with_capacity(total);
    for idx in 0..total {
        let mut p = eye(x.dim);
        for i in 0..x.r() {
            p = p * &x.values[i][idx];
        }
        products.push(p);
    }
    let mut sl = CMat::zeros(x.dim, x.dim);
    let mut sr = CMat::zeros(x.dim, x.dim);
    for p in &products {
        sl += abs_left(p)?;
        sr += abs_right(p)?;
    }
    let strong_left = op_norm(&sl);
    let strong_right = op_norm(&sr);
    let mut rng = seeded(seed);
    let mut max_signed = q.norm;
    for s in 0..samples {
        let delta: Vec<f64> = (0..total)
            .map(|_| if s % 2 == 0 { if rng.random::<bool>() { 1.0 } else { -1.0 } } else { rng.random_range(-1.0..=1.0) })
            .collect();
        let mut acc = CMat::zeros(x.dim, x.dim);
        for (p, &w) in products.iter().zip(&delta) {
            acc += p * C64::new(w, 0.0);
        }
        max_signed = max_signed.max(op_norm(&acc));
    }
    let tol = bound * BOUND_SLACK + BOUND_SLACK;
    let pass = structure_ok && max_signed <= bound + tol;
    Ok(ThetaCertificate {
        theta,
        structure_ok,
        bound,
        max_signed_norm: max_signed,
        strong_left,
        strong_right,
        samples,
        pass,
    })
}

#[derive(Debug, Clone)]
pub struct KhintchineReport {
    pub lhs: f64,
    pub stderr: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Double factorial `(2k−1)!! = (2k)!/(2^k k!)`.
pub fn pairing_count(k: u32) -> f64 {
    (1..=k).map(|t| (2 * t - 1) as f64).product()
}

/// Monte Carlo estimate of `E τ|Σ γ_j X_j|^{2k}` against
/// `(2k−1)!! max(τ((Σ XX*)^k), τ((Σ X*X)^k))`.
pub fn khintchine_check(xs: &[CMat], k: u32, samples: usize, seed: u64) -> Result<KhintchineReport, NccsError> {
    let dim = xs.first().map(|x| x.nrows()).ok_or_else(|| NccsError::Family("empty family".into()))?;
    if xs.iter().any(|x| x.shape() != (dim, dim)) {
        return Err(NccsError::Family("matrices of different shapes".into()));
    }
    let mut l = CMat::zeros(dim, dim);
    let mut r = CMat::zeros(dim, dim);
    for x in xs {
        l += x * x.adjoint();
        r += x.adjoint() * x;
    }
    let rhs = pairing_count(k) * ntrace(&l.pow(k)).re.max(ntrace(&r.pow(k)).re);
    let mut rng = seeded(derive_seed(seed, 0));
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..samples {
        let mut s = CMat::zeros(dim, dim);
        for x in xs {
            let g: f64 = rng.sample(StandardNormal);
            s += x * C64::new(g, 0.0);
        }
        let v = ntrace(&(&s * s.adjoint()).pow(k)).re;
        sum += v;
        sq += v * v;
    }
    let n = samples.max(1) as f64;
    let lhs = sum / n;
    let var = if samples > 1 { (sq / n - lhs * lhs).max(0.0) * n / (n - 1.0) } else { 0.0 };
    let stderr = (var / n).sqrt();
    let pass = lhs <= rhs + 4.0 * stderr + 1e-12 * rhs;
    Ok(KhintchineReport { lhs, stderr, rhs, pass })
}

/// Largest ratio `‖X_π‖ / ∏Q` over random families that are not required to
/// be open (only `S` positions respect their block). Exploratory.
pub fn explore_non_open(pi: &PairPartition, m: usize, dim: usize, trials: usize, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let sizes = vec![m; pi.k()];
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let mut tables: Vec<std::collections::HashMap<Vec<usize>, CMat>> = vec![Default::default(); pi.r];
        let fam = IndexedFamily::from_fn(dim, sizes.clone(), pi.r, |i, j| {
            let key: Vec<usize> = match pi.block_of(i) {
                Some(l) => vec![j[l]],
                None => j.to_vec(),
            };
            tables[i].entry(key).or_insert_with(|| complex_gaussian(&mut rng, dim, dim)).clone()
        });
        if let Ok(q) = q_factors(&fam, pi) {
            if q.product > 0.0 {
                worst = worst.max(q.norm / q.product);
            }
        }
    }
    worst
}

pub use crate::matrix_models::permutation_matrix;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;

    fn scalar(v: f64) -> CMat {
        CMat::from_element(1, 1, C64::new(v, 0.0))
    }

    #[test]
    fn scalar_pair_is_inner_product() {
        let xs = [1.0, -2.0, 0.5];
        let ys = [3.0, 1.0, 4.0];
        let pi = PairPartition::one_based(2, &[&[1, 2]]).unwrap();
        let fam = IndexedFamily::from_fn(1, vec![3], 2, |i, j| scalar(if i == 0 { xs[j[0]] } else { ys[j[0]] }));
        let s = x_pi_sum(&fam, &pi).unwrap();
        assert!((s[(0, 0)].re - 3.0).abs() < 1e-15);
        let c = lifted_corner(&fam, &pi).unwrap();
        assert!((c[(0, 0)].re - 3.0).abs() < 1e-14);
        let q = q_factors(&fam, &pi).unwrap();
        let nx: f64 = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny: f64 = ys.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((q.product - nx * ny).abs() < 1e-12);
        assert!(q.pass);
    }

    #[test]
    fn empty_index_set_gives_zero() {
        let pi = PairPartition::one_based(2, &[&[1, 2]]).unwrap();
        let fam = IndexedFamily::from_fn(2, vec![0], 2, |_, _| eye(2));
        assert_eq!(max_abs(&x_pi_sum(&fam, &pi).unwrap()), 0.0);
    }

    #[test]
    fn eight_position_pattern_corner() {
        let pi = PairPartition::one_based(8, &[&[1, 5], &[2, 7], &[4, 8]]).unwrap();
        assert_eq!(pi.open_at(2), vec![0, 1]);
        assert_eq!(pi.open_at(5), vec![1, 2]);
        let mut rng = seeded(5);
        let fam = random_open_family(&mut rng, &pi, &[2, 2, 2], 2);
        let a = x_pi_sum(&fam, &pi).unwrap();
        let b = lifted_corner(&fam, &pi).unwrap();
        assert!(max_abs_diff(&a, &b) <= 1e-12 * max_abs(&a).max(1.0));
        assert!(q_factors(&fam, &pi).unwrap().pass);
    }

    #[test]
    fn lifted_norms_equal_q() {
        let pi = PairPartition::one_based(5, &[&[1, 4], &[2, 5]]).unwrap();
        let mut rng = seeded(9);
        let fam = random_open_family(&mut rng, &pi, &[3, 2], 2);
        let ops = lifted_operators(&fam, &pi).unwrap();
        let q = q_factors(&fam, &pi).unwrap();
        for (o, v) in ops.iter().zip(&q.q) {
            assert!((op_norm(o) - v).abs() < 1e-10 * v.max(1.0));
        }
    }

    #[test]
    fn singletons_are_doubled() {
        let pi = PairPartition::one_based(4, &[&[1, 3], &[2], &[4]]).unwrap();
        let mut rng = seeded(3);
        let fam = random_open_family(&mut rng, &pi, &[2, 3, 2], 3);
        let a = x_pi_sum(&fam, &pi).unwrap();
        let b = lifted_corner(&fam, &pi).unwrap();
        assert!(max_abs_diff(&a, &b) <= 1e-12 * max_abs(&a).max(1.0));
        assert!(q_factors(&fam, &pi).unwrap().pass);
    }

    #[test]
    fn polar_split_factors() {
        let mut rng = seeded(1);
        let x = complex_gaussian(&mut rng, 3, 3);
        let (a, b) = polar_split(&x);
        assert!(max_abs_diff(&(&a * &b), &x) < 1e-12);
        let aa = &a * a.adjoint();
        assert!(max_abs_diff(&aa, &psd_sqrt(&(&x * x.adjoint()), 0.0).unwrap()) < 1e-10);
        let bb = b.adjoint() * &b;
        assert!(max_abs_diff(&bb, &psd_sqrt(&(x.adjoint() * &x), 0.0).unwrap()) < 1e-10);
    }

    #[test]
    fn not_open_is_refused() {
        let pi = PairPartition::one_based(3, &[&[1, 3]]).unwrap();
        let mut rng = seeded(2);
        let fam = random_open_family(&mut rng, &pi, &[2], 2);
        assert!(fam.is_open_for(&pi));
        // the last position lies after both members of {1,2}, so it may not depend on that block
        let pi2 = PairPartition::one_based(3, &[&[1, 2]]).unwrap();
        let fam2 = IndexedFamily::from_fn(2, vec![2], 3, |i, j| if i == 2 { eye(2) * C64::new(j[0] as f64 + 1.0, 0.0) } else { eye(2) });
        assert!(matches!(lifted_corner(&fam2, &pi2), Err(NccsError::NotOpen { position: 2 })));
    }

    #[test]
    fn identity_pair_gives_sqrt_m() {
        let pi = PairPartition::one_based(2, &[&[1, 2]]).unwrap();
        let fam = IndexedFamily::from_fn(2, vec![5], 2, |_, _| eye(2));
        let q = q_factors(&fam, &pi).unwrap();
        assert!((q.q[0] - 5f64.sqrt()).abs() < 1e-12);
        assert!((q.q[1] - 5f64.sqrt()).abs() < 1e-12);
        assert!((q.norm - 5.0).abs() < 1e-12);
    }

    #[test]
    fn padding_invariance() {
        let pi = PairPartition::one_based(4, &[&[1, 3], &[2, 4]]).unwrap();
        let mut rng = seeded(8);
        let fam = random_open_family(&mut rng, &pi, &[2, 3], 2);
        let pad = fam.padded(4);
        assert!(max_abs_diff(&x_pi_sum(&fam, &pi).unwrap(), &x_pi_sum(&pad, &pi).unwrap()) < 1e-13);
        let (a, b) = (q_factors(&fam, &pi).unwrap(), q_factors(&pad, &pi).unwrap());
        assert!((a.product - b.product).abs() < 1e-12 * a.product);
        let c = lifted_corner(&fam, &pi).unwrap();
        assert!(max_abs_diff(&c, &x_pi_sum(&fam, &pi).unwrap()) < 1e-12);
    }

    #[test]
    fn bistochastic_is_one_controlled() {
        let pi = PairPartition::one_based(3, &[&[1, 3], &[2]]).unwrap();
        let perms = [vec![1, 2, 0, 3], vec![3, 0, 1, 2], vec![0, 1, 3, 2]];
        let fam = IndexedFamily::from_fn(4, vec![3, 3], 3, |_, j| {
            (permutation_matrix(&perms[j[0]]) + permutation_matrix(&perms[j[1]])) * C64::new(0.5, 0.0)
        });
        let f = vec![C64::new(0.5, 0.0); 4];
        let c = theta_control_certificate(&fam, &pi, &ControlStructure::SharedFixedVector { f }, 50, 1).unwrap();
        assert!(c.structure_ok);
        assert_eq!(c.theta, 1.0);
        assert!(c.pass, "{c:?}");
    }

    #[test]
    fn unitary_tensor_is_n_controlled() {
        let n = 2;
        let pi = PairPartition::one_based(4, &[&[1, 3], &[2], &[4]]).unwrap();
        let mut rng = seeded(4);
        let fam = IndexedFamily::from_fn(n * 3, vec![3, 2, 2], 4, |_, _| {
            let b = complex_gaussian(&mut rng, n, n);
            let u = crate::matrix_models::haar_unitary(3, &mut rng);
            kron(&b, &u)
        });
        let c = theta_control_certificate(&fam, &pi, &ControlStructure::UnitaryTensor { n }, 100, 2).unwrap();
        assert!(c.structure_ok);
        assert!(c.pass, "{c:?}");
        assert!(c.strong_left <= c.bound * (1.0 + 1e-10));
        assert!(c.strong_right <= c.bound * (1.0 + 1e-10));
    }

    #[test]
    fn structure_violation_detected() {
        let pi = PairPartition::one_based(2, &[&[1, 2]]).unwrap();
        let mut rng = seeded(6);
        let fam = IndexedFamily::from_fn(4, vec![2], 2, |_, _| complex_gaussian(&mut rng, 4, 4));
        let c = theta_control_certificate(&fam, &pi, &ControlStructure::UnitaryTensor { n: 2 }, 4, 0).unwrap();
        assert!(!c.structure_ok && !c.pass);
    }

    #[test]
    fn khintchine_scalar_moments() {
        let r = khintchine_check(&[scalar(1.0)], 2, 200_000, 3).unwrap();
        assert_eq!(r.rhs, 3.0);
        assert!((r.lhs - 3.0).abs() < 5.0 * r.stderr);
        assert!(r.pass);
    }

    #[test]
    fn khintchine_random_family() {
        let mut rng = seeded(12);
        let xs: Vec<CMat> = (0..3).map(|_| complex_gaussian(&mut rng, 3, 3)).collect();
        let r = khintchine_check(&xs, 2, 20_000, 4).unwrap();
        assert!(r.pass, "{r:?}");
        // k = 1 is an equality for the left sum
        let r1 = khintchine_check(&xs, 1, 20_000, 5).unwrap();
        let mut l = CMat::zeros(3, 3);
        for x in &xs {
            l += x * x.adjoint();
        }
        assert!((r1.lhs - ntrace(&l).re).abs() < 5.0 * r1.stderr);
    }

    #[test]
    fn pairings_enumerated() {
        assert_eq!(PairPartition::all_pairings(6).len(), 15);
        assert_eq!(pairing_count(3), 15.0);
    }
}
