//! Schreier graphs of permutation tuples: balls and tangles, disjoint tree
//! balls, lower-bound certificates, and the centered non-backtracking
//! operators of the permutation model at tiny scale.

use std::collections::{HashMap, HashSet};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffs::CoefficientFamily;
use crate::freegroup::ReducedWord;
use crate::linalg::{self, C64, CMat};
use crate::matrix_models::{self, assemble, inverse_permutation, operator_norm, projector, ModelError, ModelKind, ModelSample};
use crate::paths::{nb_color_words, restricted_growth, Multigraph};
use crate::rng::seeded;
use crate::star_ops::{free_moment, power_table, schatten_norm_star, StarError};

/// Largest `N` for [`centered_nb_operators`].
pub const CENTERED_MAX_N: usize = 30;
/// Largest `m` for [`centered_nb_operators`].
pub const CENTERED_MAX_M: usize = 4;

#[derive(Debug, Error)]
pub enum SchreierError {
    #[error("permutation tuple is empty, ragged or not bijective")]
    BadPermutations,
    #[error("scale cap exceeded: {0}")]
    Scale(String),
    #[error("rank mismatch: coefficients have d = {coeffs}, graph has d = {graph}")]
    Rank { coeffs: usize, graph: usize },
    #[error("joint moments are not non-negative: {0}")]
    NegativeMoment(String),
    #[error(transparent)]
    Star(#[from] StarError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The colored graph on `⟦N⟧` with edges `[x, i, σ_i(x)]`.
#[derive(Clone, Debug)]
pub struct SchreierGraph {
    pub n: usize,
    pub d: usize,
    pub perms: Vec<Vec<usize>>,
    inverses: Vec<Vec<usize>>,
    graph: Multigraph,
}

pub fn build(perms: &[Vec<usize>]) -> Result<SchreierGraph, SchreierError> {
    let n = perms.first().map_or(0, |p| p.len());
    if n == 0 || perms.iter().any(|p| p.len() != n || !crate::weingarten::is_perm(p)) {
        return Err(SchreierError::BadPermutations);
    }
    let edges = perms.iter().flat_map(|p| p.iter().enumerate().map(|(x, &y)| (x, y))).collect();
    Ok(SchreierGraph {
        n,
        d: perms.len(),
        perms: perms.to_vec(),
        inverses: perms.iter().map(|p| inverse_permutation(p)).collect(),
        graph: Multigraph::new(n, edges),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BallReport {
    pub center: usize,
    pub radius: usize,
    /// vertices of the ball with their distances, ordered by BFS layer
    pub layers: Vec<Vec<usize>>,
    pub edges: usize,
    pub cycle_rank: usize,
}

impl SchreierGraph {
    pub fn from_sample(sample: &ModelSample) -> Result<Self, SchreierError> {
        build(&sample.perms)
    }

    /// `σ_i(x)` for `i ∈ 1..=2d`, with `σ_{i*} = σ_i^{-1}`.
    pub fn step(&self, i: usize, x: usize) -> usize {
        if i <= self.d {
            self.perms[i - 1][x]
        } else {
            self.inverses[i - self.d - 1][x]
        }
    }

    pub fn multigraph(&self) -> &Multigraph {
        &self.graph
    }

    /// Colored edges `(x, i, σ_i(x))` for `i ∈ 1..=d`.
    pub fn colored_edges(&self) -> Vec<(usize, usize, usize)> {
        (1..=self.d).flat_map(|i| (0..self.n).map(move |x| (x, i, self.perms[i - 1][x]))).collect()
    }

    /// Degree of every vertex, loops counted twice.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(x, y) in &self.graph.edges {
            deg[x] += 1;
            deg[y] += 1;
        }
        deg
    }

    pub fn ball(&self, x: usize, h: usize) -> BallReport {
        let dist = self.graph.distances(x, h);
        let mut layers = vec![Vec::new(); h + 1];
        for (&v, &k) in &dist {
            layers[k].push(v);
        }
        layers.iter_mut().for_each(|l| l.sort_unstable());
        while layers.last().is_some_and(|l| l.is_empty()) {
            layers.pop();
        }
        let edges = self.graph.edges.iter().filter(|(a, b)| dist.contains_key(a) && dist.contains_key(b)).count();
        BallReport { center: x, radius: h, layers, edges, cycle_rank: edges + 1 - dist.len() }
    }

    pub fn is_tangle_free(&self, h: usize) -> bool {
        self.graph.is_tangle_free(h)
    }

    /// Every non-backtracking walk of length at most `m` traces a graph with
    /// at most one cycle.
    pub fn walks_tangle_free(&self, m: usize) -> bool {
        if m == 0 {
            return true;
        }
        let words = nb_color_words(self.d, m);
        (0..self.n).all(|x| {
            words.iter().all(|w| {
                let mut verts = vec![x];
                for &c in w {
                    verts.push(self.step(c, *verts.last().expect("nonempty")));
                }
                cycle_rank(self.d, &verts, w) <= 1
            })
        })
    }

    /// Centers from which the walks of length at most `p` trace a tree.
    pub fn tree_centers(&self, p: usize) -> Vec<usize> {
        (0..self.n).filter(|&x| self.graph.walk_ball_cycle_rank(x, p) == 0).collect()
    }

    /// A pair `x ≠ y` with disjoint radius-`p` vertex balls from each of
    /// which the walks of length at most `p` trace a tree: random centers
    /// first, then an exhaustive scan.
    pub fn find_disjoint_tree_balls(&self, p: usize, seed: u64) -> Option<(usize, usize)> {
        self.find_disjoint_balls(p, seed, true)
    }

    fn find_disjoint_balls(&self, p: usize, seed: u64, acyclic: bool) -> Option<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut seeded(seed));
        let mut balls: HashMap<usize, HashSet<usize>> = HashMap::new();
        let mut ball_of = |x: usize| -> Option<HashSet<usize>> {
            if let Some(b) = balls.get(&x) {
                return Some(b.clone());
            }
            if acyclic && self.graph.walk_ball_cycle_rank(x, p) != 0 {
                return None;
            }
            let b: HashSet<usize> = self.graph.distances(x, p).into_keys().collect();
            balls.insert(x, b.clone());
            Some(b)
        };
        // random phase
        let probes = order.len().min(64);
        let mut found: Vec<(usize, HashSet<usize>)> = Vec::new();
        for &x in order.iter().take(probes) {
            if let Some(bx) = ball_of(x) {
                if let Some((y, _)) = found.iter().find(|(_, by)| by.is_disjoint(&bx)) {
                    return Some((*y, x));
                }
                found.push((x, bx));
            }
        }
        // exhaustive phase
        let mut candidates: Vec<(usize, HashSet<usize>)> = Vec::new();
        for &x in &order {
            if let Some(bx) = ball_of(x) {
                candidates.push((x, bx));
            }
        }
        for (a, (x, bx)) in candidates.iter().enumerate() {
            for (y, by) in &candidates[a + 1..] {
                if bx.is_disjoint(by) {
                    return Some((*x, *y));
                }
            }
        }
        None
    }

    /// Edge list `x,color,y` with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,color,y\n");
        for (x, i, y) in self.colored_edges() {
            s.push_str(&format!("{x},{i},{y}\n"));
        }
        s
    }

    /// Parses [`SchreierGraph::to_csv`] output.
    pub fn from_csv(text: &str) -> Result<Self, SchreierError> {
        let mut rows = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let f: Vec<usize> = line.split(',').map(|t| t.trim().parse().map_err(|_| SchreierError::BadPermutations)).collect::<Result<_, _>>()?;
            if f.len() != 3 || f[1] == 0 {
                return Err(SchreierError::BadPermutations);
            }
            rows.push((f[0], f[1], f[2]));
        }
        let d = rows.iter().map(|r| r.1).max().ok_or(SchreierError::BadPermutations)?;
        let n = rows.iter().map(|r| r.0.max(r.2) + 1).max().unwrap_or(0);
        let mut perms = vec![vec![usize::MAX; n]; d];
        for (x, i, y) in rows {
            perms[i - 1][x] = y;
        }
        build(&perms)
    }
}

/// `e - v + 1` for the colored graph traced by a walk.
fn cycle_rank(d: usize, verts: &[usize], colors: &[usize]) -> usize {
    let mut vs: Vec<usize> = verts.to_vec();
    vs.sort_unstable();
    vs.dedup();
    let mut es: Vec<(usize, usize, usize)> = (0..colors.len())
        .map(|t| {
            let (x, i, y) = (verts[t], colors[t], verts[t + 1]);
            if i <= d {
                (x, i, y)
            } else {
                (y, i - d, x)
            }
        })
        .collect();
    es.sort_unstable();
    es.dedup();
    es.len() + 1 - vs.len()
}

// ---------------------------------------------------------------------------
// lower bounds

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub p: usize,
    pub witness: Option<(usize, usize)>,
    /// `‖A★‖_p`, or 0 without a witness
    pub certificate: f64,
    /// `‖A_N Π_N‖` computed directly
    pub measured: f64,
    /// `measured ≥ certificate (1 - 1e-6)`
    pub holds: bool,
    /// how non-negativity of joint moments was established
    pub moments: Option<MomentCheck>,
}

/// `‖A_N Π_N‖ ≥ ‖A★‖_p` when two radius-`p` balls are disjoint trees.
pub fn lower_bound_certificate(fam: &CoefficientFamily, g: &SchreierGraph, p: usize, seed: u64) -> Result<Certificate, SchreierError> {
    if fam.d != g.d {
        return Err(SchreierError::Rank { coeffs: fam.d, graph: g.d });
    }
    if p < 2 || p % 2 == 1 {
        return Err(StarError::OddExponent(p).into());
    }
    let measured = measured_projected_norm(fam, g)?;
    let witness = g.find_disjoint_tree_balls(p, seed);
    let certificate = if witness.is_some() { schatten_norm_star(fam, p)? } else { 0.0 };
    Ok(Certificate { p, witness, certificate, measured, holds: measured >= certificate * (1.0 - 1e-6), moments: None })
}

fn measured_projected_norm(fam: &CoefficientFamily, g: &SchreierGraph) -> Result<f64, SchreierError> {
    let sample = ModelSample::from_permutations(g.perms.clone())?;
    Ok(operator_norm(&assemble(fam, &sample)?, true)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MomentCheck {
    /// entrywise non-negative real coefficients
    Structural,
    /// all words up to `length` checked; screened, not proven
    Screened { length: usize, words: u64 },
}

/// Default cap on the number of words in moment screening.
pub const MOMENT_SCREEN_BUDGET: u64 = 2_000_000;

/// Non-negativity of `τ₁(a^{ε_1}_{i_1} ··· a^{ε_k}_{i_k})`: structural when
/// all coefficients are entrywise non-negative reals, otherwise screened on
/// words up to `cutoff` (shortened to fit `budget`).
pub fn check_joint_moments(fam: &CoefficientFamily, cutoff: usize, budget: u64) -> Result<MomentCheck, SchreierError> {
    let structural = fam.a.iter().all(|m| m.iter().all(|z| z.im == 0.0 && z.re >= 0.0));
    if structural {
        return Ok(MomentCheck::Structural);
    }
    let mut letters: Vec<CMat> = Vec::new();
    for a in &fam.a {
        letters.push(a.clone());
        letters.push(a.adjoint());
    }
    let k = letters.len() as u64;
    let mut length = 0;
    let mut words = 0u64;
    let mut level: Vec<CMat> = vec![linalg::eye(fam.n)];
    while length < cutoff {
        let next_count = level.len() as u64 * k;
        if words + next_count > budget {
            break;
        }
        let mut next = Vec::with_capacity(next_count as usize);
        for w in &level {
            for l in &letters {
                let prod = w * l;
                let t = linalg::ntrace(&prod);
                if t.re < -1e-12 || t.im.abs() > 1e-12 {
                    return Err(SchreierError::NegativeMoment(format!("word of length {} has τ₁ = {t}", length + 1)));
                }
                next.push(prod);
            }
        }
        words += next_count;
        level = next;
        length += 1;
    }
    Ok(MomentCheck::Screened { length, words })
}

/// `p = ¼ log N / log 2d` rounded down to an even integer, at least 2.
pub fn alon_boppana_p(n: usize, d: usize) -> usize {
    let p = 0.25 * (n as f64).ln() / ((2 * d) as f64).ln();
    let even = 2 * (p / 2.0).floor() as usize;
    even.max(2)
}

/// `‖A_N Π_N‖ ≥ ‖A★‖_p` for any permutations, given non-negative joint
/// moments, with `h = 2⌈p/2⌉` and two disjoint radius-`h` balls.
pub fn alon_boppana(fam: &CoefficientFamily, g: &SchreierGraph, seed: u64) -> Result<Certificate, SchreierError> {
    if fam.d != g.d {
        return Err(SchreierError::Rank { coeffs: fam.d, graph: g.d });
    }
    let p = alon_boppana_p(g.n, g.d);
    let h = 2 * p.div_ceil(2);
    let moments = check_joint_moments(fam, 2 * h, MOMENT_SCREEN_BUDGET)?;
    let measured = measured_projected_norm(fam, g)?;
    let witness = g.find_disjoint_balls(h, seed, false);
    let certificate = if witness.is_some() { schatten_norm_star(fam, p)? } else { 0.0 };
    Ok(Certificate { p, witness, certificate, measured, holds: measured >= certificate * (1.0 - 1e-6), moments: Some(moments) })
}

// ---------------------------------------------------------------------------
// centered non-backtracking operators

/// `B^{(ℓ,m)}`, its tangle-free restriction `B̃`, the centered `B̲` and the
/// remainders `R_1, ..., R_m`, all on `ℂ^n ⊗ ℂ^N` (index `c·N + x`).
#[derive(Clone, Debug)]
pub struct CenteredOperators {
    pub n: usize,
    pub size: usize,
    pub b: CMat,
    pub b_tilde: CMat,
    pub b_centered: CMat,
    pub remainders: Vec<CMat>,
}

impl CenteredOperators {
    /// `max |B̃ - B|`.
    pub fn tilde_residual(&self) -> f64 {
        linalg::max_abs_diff(&self.b_tilde, &self.b)
    }

    /// `max |BΠ - B̲Π + (1/N) Σ_k R_k Π|`.
    pub fn decomposition_residual(&self) -> f64 {
        let pi = projector(self.n, self.size);
        let mut rhs = &self.b_centered * &pi;
        for r in &self.remainders {
            rhs -= r * &pi * C64::new(1.0 / self.size as f64, 0.0);
        }
        linalg::max_abs_diff(&(&self.b * &pi), &rhs)
    }
}

fn word_rank(d: usize, pattern: &[usize], colors: &[usize]) -> usize {
    cycle_rank(d, pattern, colors)
}

/// Tiny-scale explicit path sums. Colors of a path are ordered as the
/// matrix product `U_{c_1} ··· U_{c_m}`, paired with `(A★^ℓ)_{g𝔬}` for
/// `g = g_{c_1} ··· g_{c_m}`, so that `Σ_m B^{(ℓ,m)} = A_N^ℓ`.
pub fn centered_nb_operators(fam: &CoefficientFamily, g: &SchreierGraph, l: usize, m: usize) -> Result<CenteredOperators, SchreierError> {
    if fam.d != g.d {
        return Err(SchreierError::Rank { coeffs: fam.d, graph: g.d });
    }
    if g.n > CENTERED_MAX_N || m > CENTERED_MAX_M {
        return Err(SchreierError::Scale(format!("N = {} (max {CENTERED_MAX_N}), m = {m} (max {CENTERED_MAX_M})", g.n)));
    }
    let (n, big_n, d) = (fam.n, g.n, g.d);
    let table = power_table(fam, l)?;
    if m == 0 {
        let b = linalg::kron(&table.entry(&ReducedWord::unit(d)), &linalg::eye(big_n));
        return Ok(CenteredOperators { n, size: big_n, b: b.clone(), b_tilde: b.clone(), b_centered: b, remainders: vec![] });
    }
    let inv_n = 1.0 / big_n as f64;
    let u: Vec<DMatrix<f64>> = (1..=2 * d)
        .map(|i| DMatrix::from_fn(big_n, big_n, |x, y| if g.step(i, x) == y { 1.0 } else { 0.0 }))
        .collect();
    let uc: Vec<DMatrix<f64>> = u.iter().map(|m| m.map(|v| v - inv_n)).collect();

    // vertex patterns of tangled paths have at most m - 1 distinct vertices
    let patterns: Vec<Vec<usize>> = restricted_growth(m + 1, (m - 1).min(big_n)).into_iter().filter(|p| !p.is_empty()).collect();
    let mut labelings: HashMap<usize, Vec<Vec<usize>>> = HashMap::new();

    let zero = CMat::zeros(n * big_n, n * big_n);
    let (mut b, mut bt, mut bc) = (zero.clone(), zero.clone(), zero.clone());
    let mut rs = vec![zero.clone(); m];
    for w in nb_color_words(d, m) {
        let a = table.entry(&ReducedWord::new(d, &w).expect("reduced"));
        if linalg::max_abs(&a) == 0.0 {
            continue;
        }
        let mut prod = u[w[0] - 1].clone();
        let mut prod_c = uc[w[0] - 1].clone();
        for &c in &w[1..] {
            prod = &prod * &u[c - 1];
            prod_c = &prod_c * &uc[c - 1];
        }
        // tangle-free walks
        let mut walk_tf = DMatrix::<f64>::zeros(big_n, big_n);
        for x in 0..big_n {
            let mut verts = vec![x];
            for &c in &w {
                verts.push(g.step(c, *verts.last().expect("nonempty")));
            }
            if cycle_rank(d, &verts, &w) <= 1 {
                walk_tf[(x, verts[m])] += 1.0;
            }
        }
        let mut rk = vec![DMatrix::<f64>::zeros(big_n, big_n); m];
        for pat in &patterns {
            if word_rank(d, pat, &w) <= 1 {
                continue;
            }
            let blocks = pat.iter().max().map_or(0, |&x| x + 1);
            // k ↦ whether both halves around step k are tangle-free
            let split_ok: Vec<bool> = (1..=m)
                .map(|k| word_rank(d, &pat[..k], &w[..k - 1]) <= 1 && word_rank(d, &pat[k..], &w[k..]) <= 1)
                .collect();
            let labels = labelings.entry(blocks).or_insert_with(|| injective_labelings(blocks, big_n));
            for lab in labels.iter() {
                let verts: Vec<usize> = pat.iter().map(|&b| lab[b]).collect();
                let (x0, xm) = (verts[0], verts[m]);
                let mut centered = 1.0;
                for t in 0..m {
                    centered *= uc[w[t] - 1][(verts[t], verts[t + 1])];
                }
                prod_c[(x0, xm)] -= centered;
                for k in 1..=m {
                    if !split_ok[k - 1] {
                        continue;
                    }
                    let mut v = 1.0;
                    for t in 0..k - 1 {
                        v *= uc[w[t] - 1][(verts[t], verts[t + 1])];
                    }
                    for t in k..m {
                        v *= u[w[t] - 1][(verts[t], verts[t + 1])];
                    }
                    rk[k - 1][(x0, xm)] += v;
                }
            }
        }
        b += kron_real(&a, &prod);
        bt += kron_real(&a, &walk_tf);
        bc += kron_real(&a, &prod_c);
        for k in 0..m {
            rs[k] += kron_real(&a, &rk[k]);
        }
    }
    Ok(CenteredOperators { n, size: big_n, b, b_tilde: bt, b_centered: bc, remainders: rs })
}

fn kron_real(a: &CMat, m: &DMatrix<f64>) -> CMat {
    linalg::kron(a, &m.map(|v| C64::new(v, 0.0)))
}

fn injective_labelings(blocks: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    fn rec(blocks: usize, n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == blocks {
            out.push(cur.clone());
            return;
        }
        for x in 0..n {
            if !cur.contains(&x) {
                cur.push(x);
                rec(blocks, n, cur, out);
                cur.pop();
            }
        }
    }
    rec(blocks, n, &mut Vec::new(), &mut out);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormDecompositionReport {
    pub lhs: f64,
    pub centered: f64,
    pub remainder: f64,
    pub pass: bool,
}

/// `‖B^{(ℓ,m)}Π‖_p ≤ ‖B̲^{(ℓ,m)}‖_p + (1/N) Σ_k ‖R_k^{(ℓ,m)}‖_p`.
pub fn norm_decomposition_check(fam: &CoefficientFamily, g: &SchreierGraph, l: usize, m: usize, p: f64) -> Result<NormDecompositionReport, SchreierError> {
    let ops = centered_nb_operators(fam, g, l, m)?;
    let pi = projector(ops.n, ops.size);
    let sp = |x: &CMat| matrix_models::schatten_norm(x, Some(p));
    let lhs = sp(&(&ops.b * &pi))?;
    let centered = sp(&ops.b_centered)?;
    let mut remainder = 0.0;
    for r in &ops.remainders {
        remainder += sp(r)? / ops.size as f64;
    }
    let pass = lhs <= (centered + remainder) * (1.0 + 1e-10) + 1e-12;
    Ok(NormDecompositionReport { lhs, centered, remainder, pass })
}

/// Random permutation tuple on `⟦N⟧`.
pub fn random_graph(n: usize, d: usize, seed: u64) -> Result<SchreierGraph, SchreierError> {
    build(&ModelSample::draw(ModelKind::Permutation, n, d, seed)?.perms)
}

/// `τ(A★^p)^{1/p}` for unit scalar coefficients, handy for reports.
pub fn unit_schatten(d: usize, p: usize) -> Result<f64, SchreierError> {
    Ok(free_moment(&CoefficientFamily::kesten(d), p)?.re.powf(1.0 / p as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_seed;

    #[test]
    fn build_and_degrees() {
        let cyc: Vec<usize> = (0..7).map(|x| (x + 1) % 7).collect();
        let g = build(&[cyc]).unwrap();
        assert!(g.degrees().iter().all(|&k| k == 2));
        assert_eq!(g.ball(0, 10).cycle_rank, 1);
        let id = build(&[vec![0, 1, 2], vec![0, 1, 2]]).unwrap();
        assert_eq!(id.ball(1, 3).layers.len(), 1);
        let r = random_graph(1000, 2, 3).unwrap();
        assert!(r.degrees().iter().all(|&k| k == 4));
        assert_eq!(r.degrees().iter().sum::<usize>(), 2 * r.multigraph().edges.len());
        assert!(build(&[vec![0, 0]]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let g = random_graph(12, 2, 5).unwrap();
        let h = SchreierGraph::from_csv(&g.to_csv()).unwrap();
        assert_eq!(g.perms, h.perms);
    }

    #[test]
    fn tree_balls() {
        let g = random_graph(2000, 2, 11).unwrap();
        let (x, y) = g.find_disjoint_tree_balls(4, 1).unwrap();
        assert_eq!(g.multigraph().walk_ball_cycle_rank(x, 4), 0);
        assert_eq!(g.multigraph().walk_ball_cycle_rank(y, 4), 0);
        assert!(g.multigraph().distances(x, 8).get(&y).is_none());
        let small = random_graph(6, 2, 2).unwrap();
        assert!(small.find_disjoint_tree_balls(10, 0).is_none());
    }

    #[test]
    fn certificates() {
        let g = random_graph(2000, 2, 11).unwrap();
        let c = lower_bound_certificate(&CoefficientFamily::kesten(2), &g, 4, 0).unwrap();
        assert!((c.certificate - 28f64.powf(0.25)).abs() < 1e-12);
        assert!(c.holds);
        let c = lower_bound_certificate(&CoefficientFamily::kesten(2), &g, 2, 0).unwrap();
        assert!((c.certificate - 2.0).abs() < 1e-12);
        let z = lower_bound_certificate(&CoefficientFamily::zero(2, 1), &g, 4, 0).unwrap();
        assert_eq!(z.certificate, 0.0);
        assert!(z.holds);
    }

    #[test]
    fn alon_boppana_rounding_and_screen() {
        assert_eq!(alon_boppana_p(4096, 2), 2);
        let g = random_graph(4096, 2, 1).unwrap();
        let c = alon_boppana(&CoefficientFamily::kesten(2), &g, 0).unwrap();
        assert_eq!(c.moments, Some(MomentCheck::Structural));
        assert!((c.certificate - 2.0).abs() < 1e-12);
        assert!(c.holds);
        let mut fam = CoefficientFamily::kesten(2);
        fam.a[1] = CMat::from_element(1, 1, C64::new(-1.0, 0.0));
        fam.a[3] = fam.a[1].clone();
        assert!(matches!(check_joint_moments(&fam, 4, 1000), Err(SchreierError::NegativeMoment(_))));
    }

    #[test]
    fn centered_identity_on_tiny_instances() {
        let mut rng = seeded(9);
        let mut done = 0;
        for s in 0..400u64 {
            let g = random_graph(10, 2, derive_seed(17, s)).unwrap();
            if !g.walks_tangle_free(3) {
                continue;
            }
            let fam = CoefficientFamily::random_selfadjoint(2, 2, &mut rng);
            for m in 0..=3 {
                let ops = centered_nb_operators(&fam, &g, 3, m).unwrap();
                assert!(ops.tilde_residual() < 1e-12);
                assert!(ops.decomposition_residual() < 1e-10, "{}", ops.decomposition_residual());
            }
            assert!(norm_decomposition_check(&fam, &g, 3, 2, 4.0).unwrap().pass);
            done += 1;
            if done == 3 {
                break;
            }
        }
        assert_eq!(done, 3);
    }

    #[test]
    fn nb_components_sum_to_power() {
        let mut rng = seeded(4);
        let fam = CoefficientFamily::random_selfadjoint(2, 2, &mut rng);
        let g = random_graph(7, 2, 8).unwrap();
        let l = 3;
        let mut total = CMat::zeros(14, 14);
        for m in 0..=l {
            total += centered_nb_operators(&fam, &g, l, m).unwrap().b;
        }
        let sample = ModelSample::from_permutations(g.perms.clone()).unwrap();
        let a = assemble(&fam, &sample).unwrap().to_dense();
        assert!(linalg::max_abs_diff(&total, &(&a * &a * &a)) < 1e-12);
    }
}
