//! Closed non-backtracking colored paths: enumeration, colored and kernel
//! graphs, canonical class representatives, class census, the exact
//! expectation of `τ(B^{(ℓ,m)})`, and tangle detection.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use num::{BigRational, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coeffs::CoefficientFamily;
use crate::freegroup::{star, ReducedWord};
use crate::linalg::{self, C64, CMat};
use crate::matrix_models::{mean_stderr, ModelKind, ModelSample};
use crate::rng::derive_seed;
use crate::star_ops::{free_moment, power_table, PowerTable, StarError};
use crate::weingarten::{self, falling, WeingartenError};

/// Default cap on `(2d)^m N^m` for raw enumeration.
pub const DEFAULT_ENUM_BUDGET: u128 = 50_000_000;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("invalid path: {0}")]
    Invalid(String),
    #[error("enumeration of {0} candidates exceeds the budget")]
    Budget(u128),
    #[error(transparent)]
    Star(#[from] StarError),
    #[error(transparent)]
    Weingarten(#[from] WeingartenError),
}

/// `γ = (x_0, i_1, x_1, ..., i_m, x_m)` with `x_0 = x_m` and `i_{t+1} ≠ i_t*`.
/// Vertices are 0-based, colors range over `1..=2d`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColoredPath {
    pub d: usize,
    pub vertices: Vec<usize>,
    pub colors: Vec<usize>,
}

impl ColoredPath {
    pub fn new(d: usize, vertices: Vec<usize>, colors: Vec<usize>) -> Result<Self, PathError> {
        if vertices.len() != colors.len() + 1 {
            return Err(PathError::Invalid("needs m+1 vertices for m colors".into()));
        }
        if vertices.first() != vertices.last() {
            return Err(PathError::Invalid("not closed".into()));
        }
        if colors.iter().any(|&c| c == 0 || c > 2 * d) {
            return Err(PathError::Invalid("color out of range".into()));
        }
        if colors.windows(2).any(|w| w[1] == star(d, w[0])) {
            return Err(PathError::Invalid("backtracking step".into()));
        }
        Ok(ColoredPath { d, vertices, colors })
    }

    /// Path length `m`.
    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    /// `g(γ) = g_{i_m} ··· g_{i_1}`.
    pub fn group_element(&self) -> ReducedWord {
        let letters: Vec<usize> = self.colors.iter().rev().copied().collect();
        ReducedWord::new(self.d, &letters).expect("non-backtracking colors form a reduced word")
    }

    /// Vertices relabeled by order of first appearance.
    pub fn relabeled(&self) -> ColoredPath {
        let mut map: HashMap<usize, usize> = HashMap::new();
        let vertices = self
            .vertices
            .iter()
            .map(|&x| {
                let next = map.len();
                *map.entry(x).or_insert(next)
            })
            .collect();
        ColoredPath { d: self.d, vertices, colors: self.colors.clone() }
    }
}

/// All non-backtracking color words of length `m` over `1..=2d`.
pub fn nb_color_words(d: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..m {
        let mut next = Vec::with_capacity(out.len() * (2 * d));
        for w in &out {
            for c in 1..=2 * d {
                if w.last().is_none_or(|&p| c != star(d, p)) {
                    let mut v = w.clone();
                    v.push(c);
                    next.push(v);
                }
            }
        }
        out = next;
    }
    out
}

/// Restricted growth strings of length `len` with at most `max_blocks`
/// distinct values (set partitions of `0..len` labeled by first appearance).
pub fn restricted_growth(len: usize, max_blocks: usize) -> Vec<Vec<usize>> {
    fn rec(len: usize, max_blocks: usize, cur: &mut Vec<usize>, blocks: usize, out: &mut Vec<Vec<usize>>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        for x in 0..=blocks.min(max_blocks.saturating_sub(1)) {
            if x > blocks {
                break;
            }
            cur.push(x);
            rec(len, max_blocks, cur, blocks.max(x + 1), out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if len == 0 {
        out.push(Vec::new());
        return out;
    }
    if max_blocks == 0 {
        return out;
    }
    rec(len, max_blocks, &mut vec![0], 1, &mut out);
    out
}

/// Calls `f` on every `γ ∈ P_m` over `N` vertices.
pub fn for_each_path<F: FnMut(&ColoredPath)>(n: usize, d: usize, m: usize, budget: u128, mut f: F) -> Result<(), PathError> {
    let total = (n as u128).saturating_pow(m as u32).saturating_mul((2 * d as u128).saturating_pow(m as u32));
    if total > budget {
        return Err(PathError::Budget(total));
    }
    let words = nb_color_words(d, m);
    let mut verts = vec![0usize; m + 1];
    let inner = m.saturating_sub(1);
    let count = n.pow(inner as u32);
    for x0 in 0..n {
        for code in 0..count {
            let mut c = code;
            verts[0] = x0;
            for t in 1..m {
                verts[t] = c % n;
                c /= n;
            }
            verts[m] = x0;
            for w in &words {
                let p = ColoredPath { d, vertices: verts.clone(), colors: w.clone() };
                f(&p);
            }
        }
    }
    Ok(())
}

/// `P_m` over `N` vertices, collected.
pub fn enumerate_paths(n: usize, d: usize, m: usize) -> Result<Vec<ColoredPath>, PathError> {
    let mut out = Vec::new();
    for_each_path(n, d, m, DEFAULT_ENUM_BUDGET, |p| out.push(p.clone()))?;
    Ok(out)
}

/// Paths with vertices labeled by first appearance, at most `n_cap` vertices.
pub fn canonical_vertex_paths(d: usize, m: usize, n_cap: usize) -> Vec<ColoredPath> {
    let mut out = Vec::new();
    let words = nb_color_words(d, m);
    for rg in restricted_growth(m, n_cap) {
        let mut verts = rg.clone();
        verts.push(0);
        for w in &words {
            out.push(ColoredPath { d, vertices: verts.clone(), colors: w.clone() });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// colored graph

/// Edge `[x,i,y] ~ [y,i*,x]` stored with `i ≤ d`.
pub type ColoredEdge = (usize, usize, usize);

fn normalize_edge(d: usize, x: usize, i: usize, y: usize) -> ColoredEdge {
    if i <= d {
        (x, i, y)
    } else {
        (y, i - d, x)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColoredGraph {
    pub vertices: Vec<usize>,
    pub multiplicity: BTreeMap<ColoredEdge, usize>,
}

pub fn colored_graph(path: &ColoredPath) -> ColoredGraph {
    let mut vertices: Vec<usize> = Vec::new();
    for &x in &path.vertices {
        if !vertices.contains(&x) {
            vertices.push(x);
        }
    }
    let mut multiplicity = BTreeMap::new();
    for t in 0..path.len() {
        let e = normalize_edge(path.d, path.vertices[t], path.colors[t], path.vertices[t + 1]);
        *multiplicity.entry(e).or_insert(0) += 1;
    }
    ColoredGraph { vertices, multiplicity }
}

impl ColoredGraph {
    /// Degree counting loops twice.
    pub fn degrees(&self) -> HashMap<usize, usize> {
        let mut deg: HashMap<usize, usize> = self.vertices.iter().map(|&x| (x, 0)).collect();
        for &(x, _, y) in self.multiplicity.keys() {
            *deg.get_mut(&x).expect("vertex") += 1;
            *deg.get_mut(&y).expect("vertex") += 1;
        }
        deg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathStats {
    pub m: usize,
    pub v: usize,
    pub e: usize,
    pub e1: usize,
}

impl PathStats {
    /// `2χ = m + e₁ - 2v`.
    pub fn chi_twice(&self) -> i64 {
        self.m as i64 + self.e1 as i64 - 2 * self.v as i64
    }

    /// `χ = m/2 + e₁/2 - v`.
    pub fn chi(&self) -> f64 {
        self.chi_twice() as f64 / 2.0
    }

    /// `χ ≥ 0`, `v ≤ e`, `2e ≤ m + e₁`.
    pub fn invariants_hold(&self) -> bool {
        self.chi_twice() >= 0 && self.v <= self.e && 2 * self.e <= self.m + self.e1
    }
}

pub fn path_stats(path: &ColoredPath) -> PathStats {
    let g = colored_graph(path);
    PathStats {
        m: path.len(),
        v: g.vertices.len(),
        e: g.multiplicity.len(),
        e1: g.multiplicity.values().filter(|&&k| k == 1).count(),
    }
}

// ---------------------------------------------------------------------------
// kernel graph

/// `(j_1, j_k, (𝔭_i)_{i ∈ ⟦2d⟧})` of a kernel edge.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Profile {
    pub first: usize,
    pub last: usize,
    /// counts of colors `1..=2d` at index `color - 1`
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelEdge {
    pub from: usize,
    pub to: usize,
    /// `(y_0, j_1, y_1, ..., j_k, y_k)` as vertices and colors, oriented as
    /// first traversed
    pub vertices: Vec<usize>,
    pub colors: Vec<usize>,
    pub profile: Profile,
    /// number of traversals by the path
    pub traversals: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelGraph {
    /// `V_{≥3} ∪ {x_0}`
    pub vertices: Vec<usize>,
    /// kernel edges in order of first traversal
    pub edges: Vec<KernelEdge>,
    /// the path as a sequence of kernel edge indices with orientation
    /// (`true` when traversed in the stored direction)
    pub itinerary: Vec<(usize, bool)>,
}

impl KernelGraph {
    /// `ê - v̂ = e - v`.
    pub fn euler_check(&self, stats: &PathStats) -> bool {
        self.edges.len() as i64 - self.vertices.len() as i64 == stats.e as i64 - stats.v as i64
    }

    /// `ê ≤ 3χ + 2`.
    pub fn edge_bound_check(&self, stats: &PathStats) -> bool {
        2 * self.edges.len() as i64 <= 3 * stats.chi_twice() + 4
    }
}

pub fn kernel_graph(path: &ColoredPath) -> KernelGraph {
    let d = path.d;
    let g = colored_graph(path);
    let deg = g.degrees();
    let x0 = path.vertices[0];
    let mut kernel_vertices: Vec<usize> = g.vertices.iter().copied().filter(|x| *x == x0 || deg[x] >= 3).collect();
    kernel_vertices.sort_by_key(|x| path.vertices.iter().position(|y| y == x));
    let in_kernel: HashSet<usize> = kernel_vertices.iter().copied().collect();

    let mut edges: Vec<KernelEdge> = Vec::new();
    let mut lookup: HashMap<(Vec<usize>, Vec<usize>), (usize, bool)> = HashMap::new();
    let mut itinerary = Vec::new();
    let mut t = 0;
    let m = path.len();
    while t < m {
        let start = t;
        t += 1;
        while !in_kernel.contains(&path.vertices[t]) {
            t += 1;
        }
        let verts = path.vertices[start..=t].to_vec();
        let cols = path.colors[start..t].to_vec();
        let rev_verts: Vec<usize> = verts.iter().rev().copied().collect();
        let rev_cols: Vec<usize> = cols.iter().rev().map(|&c| star(d, c)).collect();
        if let Some(&(idx, dir)) = lookup.get(&(verts.clone(), cols.clone())) {
            edges[idx].traversals += 1;
            itinerary.push((idx, dir));
            continue;
        }
        let idx = edges.len();
        let mut counts = vec![0; 2 * d];
        for &c in &cols {
            counts[c - 1] += 1;
        }
        let profile = Profile { first: cols[0], last: *cols.last().expect("nonempty"), counts };
        lookup.insert((verts.clone(), cols.clone()), (idx, true));
        lookup.insert((rev_verts, rev_cols), (idx, false));
        edges.push(KernelEdge { from: verts[0], to: *verts.last().expect("nonempty"), vertices: verts, colors: cols, profile, traversals: 1 });
        itinerary.push((idx, true));
    }
    KernelGraph { vertices: kernel_vertices, edges, itinerary }
}

// ---------------------------------------------------------------------------
// canonical classes

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    /// vertex relabeling and per-vertex color permutations
    Coarse,
    /// coarse plus equal kernel-edge profiles
    Fine,
    /// coarse plus equal terminal colors of kernel edges
    Terminal,
}

/// Canonical representative of a path class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathClass {
    pub kind: ClassKind,
    /// lexicographically minimal coarse representative
    pub canonical: ColoredPath,
    pub key: Vec<usize>,
    pub stats: PathStats,
    pub kernel: KernelGraph,
}

struct PortSearch<'a> {
    d: usize,
    verts: &'a [usize],
    colors: &'a [usize],
    // beta[x][port - 1] = image port, 0 when unset
    beta: Vec<Vec<usize>>,
    used: Vec<Vec<bool>>,
    out: Vec<usize>,
}

impl PortSearch<'_> {
    fn assign(&mut self, x: usize, port: usize, image: usize, undo: &mut Vec<(usize, usize)>) -> bool {
        let cur = self.beta[x][port - 1];
        if cur != 0 {
            return cur == image;
        }
        if self.used[x][image - 1] {
            return false;
        }
        self.beta[x][port - 1] = image;
        self.used[x][image - 1] = true;
        undo.push((x, port));
        true
    }

    fn rollback(&mut self, undo: &[(usize, usize)]) {
        for &(x, port) in undo.iter().rev() {
            let image = self.beta[x][port - 1];
            self.used[x][image - 1] = false;
            self.beta[x][port - 1] = 0;
        }
    }

    fn dfs(&mut self, t: usize) -> bool {
        if t == self.colors.len() {
            return true;
        }
        let (x, y, i) = (self.verts[t], self.verts[t + 1], self.colors[t]);
        let fixed = self.beta[x][i - 1];
        let candidates: Vec<usize> = if fixed != 0 { vec![fixed] } else { (1..=2 * self.d).filter(|&j| !self.used[x][j - 1]).collect() };
        for j in candidates {
            let mut undo = Vec::new();
            if self.assign(x, i, j, &mut undo) && self.assign(y, star(self.d, i), star(self.d, j), &mut undo) {
                self.out.push(j);
                if self.dfs(t + 1) {
                    return true;
                }
                self.out.pop();
            }
            self.rollback(&undo);
        }
        false
    }
}

/// Lexicographically minimal image of `γ` under vertex relabelings and
/// consistent per-vertex color permutations.
pub fn coarse_canonical(path: &ColoredPath) -> ColoredPath {
    let rel = path.relabeled();
    let v = rel.vertices.iter().max().map_or(0, |&x| x + 1);
    let mut search = PortSearch {
        d: path.d,
        verts: &rel.vertices,
        colors: &rel.colors,
        beta: vec![vec![0; 2 * path.d]; v],
        used: vec![vec![false; 2 * path.d]; v],
        out: Vec::with_capacity(path.len()),
    };
    let found = search.dfs(0);
    debug_assert!(found, "the identity relabeling is always admissible");
    ColoredPath { d: path.d, vertices: rel.vertices.clone(), colors: search.out }
}

fn coarse_key(canon: &ColoredPath) -> Vec<usize> {
    let mut key = canon.vertices.clone();
    key.extend(&canon.colors);
    key
}

pub fn canonicalize(path: &ColoredPath, kind: ClassKind) -> PathClass {
    let canonical = coarse_canonical(path);
    let mut key = coarse_key(&canonical);
    let kernel = kernel_graph(path);
    match kind {
        ClassKind::Coarse => {}
        ClassKind::Fine => {
            for e in &kernel.edges {
                key.push(usize::MAX);
                key.push(e.profile.first);
                key.push(e.profile.last);
                key.extend(&e.profile.counts);
            }
        }
        ClassKind::Terminal => {
            for e in &kernel.edges {
                key.push(usize::MAX);
                key.push(e.profile.first);
                key.push(e.profile.last);
            }
        }
    }
    PathClass { kind, canonical, key, stats: path_stats(path), kernel }
}

/// Whether `γ ~ γ'`.
pub fn coarse_equivalent(a: &ColoredPath, b: &ColoredPath) -> bool {
    a.d == b.d && a.len() == b.len() && coarse_canonical(a) == coarse_canonical(b)
}

// ---------------------------------------------------------------------------
// census

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusRow {
    pub m: usize,
    pub v: usize,
    pub e1: usize,
    pub chi: f64,
    pub coarse_count: usize,
    pub fine_count: usize,
    /// `m^{6χ+4}`
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Census {
    pub d: usize,
    pub m: usize,
    pub rows: Vec<CensusRow>,
    pub paths: usize,
    /// every enumerated path had `χ ≥ 0`, `v ≤ e`, `2e ≤ m + e₁`
    pub stats_ok: bool,
    /// every path satisfied `ê - v̂ = e - v` and `ê ≤ 3χ + 2`
    pub kernel_ok: bool,
}

impl Census {
    pub fn pass(&self) -> bool {
        self.stats_ok && self.kernel_ok && self.rows.iter().all(|r| r.pass)
    }
}

/// Coarse and fine class counts by `(v, e₁)` over paths with at most `n_cap`
/// vertices, with the bounds `m^{6χ+4}` and `(2d m^d)^{6χ+4}`.
pub fn class_census(d: usize, m: usize, n_cap: usize) -> Census {
    let mut coarse: BTreeMap<(usize, usize), HashSet<Vec<usize>>> = BTreeMap::new();
    let mut fine: BTreeMap<(usize, usize), HashSet<Vec<usize>>> = BTreeMap::new();
    let mut stats_ok = true;
    let mut kernel_ok = true;
    let mut paths = 0;
    for p in canonical_vertex_paths(d, m, n_cap.max(1)) {
        paths += 1;
        let class = canonicalize(&p, ClassKind::Fine);
        let s = class.stats;
        stats_ok &= s.invariants_hold();
        kernel_ok &= class.kernel.euler_check(&s) && class.kernel.edge_bound_check(&s);
        let ckey = coarse_key(&class.canonical);
        coarse.entry((s.v, s.e1)).or_default().insert(ckey);
        fine.entry((s.v, s.e1)).or_default().insert(class.key);
    }
    let mf = m as f64;
    let rows = coarse
        .iter()
        .map(|(&(v, e1), set)| {
            let chi = (m as f64 + e1 as f64) / 2.0 - v as f64;
            let bound = mf.powf(6.0 * chi + 4.0);
            let coarse_count = set.len();
            let fine_count = fine[&(v, e1)].len();
            let inflation = (2.0 * d as f64 * mf.powi(d as i32)).powf(6.0 * chi + 4.0);
            let pass = chi >= 0.0 && coarse_count as f64 <= bound && fine_count as f64 <= inflation * coarse_count as f64;
            CensusRow { m, v, e1, chi, coarse_count, fine_count, bound, pass }
        })
        .collect();
    Census { d, m, rows, paths, stats_ok, kernel_ok }
}

// ---------------------------------------------------------------------------
// trace-method oracle

/// Exact `E τ(B^{(ℓ,m)}) = (1/N) Σ_{γ ∈ P_m} τ₁(a(ℓ,γ)) w(γ)`, grouping the
/// `N`-vertex paths by their vertex-equality pattern.
pub fn expected_nb_trace(fam: &CoefficientFamily, l: usize, m: usize, n: usize, model: ModelKind) -> Result<C64, PathError> {
    if m == 0 {
        return Ok(free_moment(fam, l)?);
    }
    if model == ModelKind::Orthogonal {
        return Err(WeingartenError::NoExactFormula.into());
    }
    let table = power_table(fam, l)?;
    let patterns = restricted_growth(m, n);
    let mut total = C64::new(0.0, 0.0);
    for w in nb_color_words(fam.d, m) {
        let path0 = ColoredPath { d: fam.d, vertices: vec![0; m + 1], colors: w.clone() };
        let a = linalg::ntrace(&table.entry(&path0.group_element()));
        if a.norm() == 0.0 {
            continue;
        }
        let mut sum = BigRational::zero();
        for rg in &patterns {
            let blocks = rg.iter().max().map_or(0, |&x| x + 1);
            let mut verts = rg.clone();
            verts.push(0);
            let p = ColoredPath { d: fam.d, vertices: verts, colors: w.clone() };
            let weight = exact_weight(&p, n as u64, model)?;
            if !weight.is_zero() {
                sum += weight * BigRational::from_integer(falling(n as u64, blocks));
            }
        }
        total += a * sum.to_f64().unwrap_or(f64::NAN);
    }
    Ok(total / n as f64)
}

fn exact_weight(p: &ColoredPath, n: u64, model: ModelKind) -> Result<BigRational, PathError> {
    match weingarten::path_weight(p, n, model, None)? {
        weingarten::PathWeight::Exact(r) => Ok(r),
        weingarten::PathWeight::Estimate { .. } => Err(WeingartenError::NoExactFormula.into()),
    }
}

/// Same value by summing `w(γ)` over every `γ ∈ P_m` (tiny `N` only).
pub fn expected_nb_trace_raw(fam: &CoefficientFamily, l: usize, m: usize, n: usize, model: ModelKind) -> Result<C64, PathError> {
    if m == 0 {
        return Ok(free_moment(fam, l)?);
    }
    let table = power_table(fam, l)?;
    let mut by_word: HashMap<Vec<usize>, BigRational> = HashMap::new();
    let mut err = None;
    for_each_path(n, fam.d, m, DEFAULT_ENUM_BUDGET, |p| {
        if err.is_some() {
            return;
        }
        match exact_weight(p, n as u64, model) {
            Ok(w) => *by_word.entry(p.colors.clone()).or_insert_with(BigRational::zero) += w,
            Err(e) => err = Some(e),
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let mut total = C64::new(0.0, 0.0);
    for (w, s) in by_word {
        let g = ReducedWord::new(fam.d, &w.iter().rev().copied().collect::<Vec<_>>()).expect("reduced");
        total += linalg::ntrace(&table.entry(&g)) * s.to_f64().unwrap_or(f64::NAN);
    }
    Ok(total / n as f64)
}

/// `τ(B^{(ℓ,m)}) = (1/N) Σ_{g ∈ S_m} τ₁((A★^ℓ)_{g𝔬}) tr U(g)` for one sample,
/// with `U(g_{j_1} ··· g_{j_m}) = U_{j_1} ··· U_{j_m}` so that the components
/// sum to `τ(A_N^ℓ)`.
pub fn nb_trace_sample(table: &PowerTable, sample: &ModelSample, m: usize) -> C64 {
    let d = sample.d;
    if m == 0 {
        return linalg::ntrace(&table.entry(&ReducedWord::unit(d)));
    }
    let gens: Vec<CMat> = (1..=2 * d).map(|i| sample.generator(i)).collect();
    let mut total = C64::new(0.0, 0.0);
    for w in nb_color_words(d, m) {
        let a = linalg::ntrace(&table.entry(&ReducedWord::new(d, &w).expect("reduced")));
        if a.norm() == 0.0 {
            continue;
        }
        let mut prod = gens[w[0] - 1].clone();
        for &c in &w[1..] {
            prod = &prod * &gens[c - 1];
        }
        total += a * prod.trace();
    }
    total / sample.size as f64
}

/// Monte Carlo mean and standard error of `Re τ(B^{(ℓ,m)})`.
pub fn mc_nb_trace(
    fam: &CoefficientFamily,
    l: usize,
    m: usize,
    n: usize,
    model: ModelKind,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64), PathError> {
    let table = power_table(fam, l)?;
    let values: Vec<f64> = (0..samples)
        .map(|s| {
            let sample = ModelSample::draw(model, n, fam.d, derive_seed(seed, s as u64)).expect("n >= 1");
            nb_trace_sample(&table, &sample, m).re
        })
        .collect();
    Ok(mean_stderr(&values))
}

// ---------------------------------------------------------------------------
// tangles

/// Undirected multigraph; loops and parallel edges are kept.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Multigraph {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    adj: Vec<Vec<(usize, usize)>>,
}

impl Multigraph {
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut adj = vec![Vec::new(); n];
        for (id, &(x, y)) in edges.iter().enumerate() {
            adj[x].push((y, id));
            if x != y {
                adj[y].push((x, id));
            }
        }
        Multigraph { n, edges, adj }
    }

    pub fn neighbors(&self, x: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[x].iter().map(|&(y, _)| y)
    }

    /// Distances from `x` up to `h` (`usize::MAX` beyond).
    pub fn distances(&self, x: usize, h: usize) -> HashMap<usize, usize> {
        let mut dist = HashMap::new();
        dist.insert(x, 0);
        let mut queue = VecDeque::from([x]);
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            if du == h {
                continue;
            }
            for &(w, _) in &self.adj[u] {
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                    e.insert(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Cycle-space dimension `e - v + 1` of the subgraph spanned by the
    /// vertices at distance at most `h` from `x`.
    pub fn ball_cycle_rank(&self, x: usize, h: usize) -> usize {
        self.ball_rank(x, h, true)
    }

    /// Same count restricted to the edges traversed by walks of length at
    /// most `h` from `x` (edges joining two vertices at distance exactly `h`
    /// are dropped).
    pub fn walk_ball_cycle_rank(&self, x: usize, h: usize) -> usize {
        self.ball_rank(x, h, false)
    }

    fn ball_rank(&self, x: usize, h: usize, induced: bool) -> usize {
        let dist = self.distances(x, h);
        let mut seen = HashSet::new();
        for (&u, &du) in &dist {
            for &(w, id) in &self.adj[u] {
                if let Some(&dw) = dist.get(&w) {
                    if induced || du.min(dw) < h {
                        seen.insert(id);
                    }
                }
            }
        }
        seen.len() + 1 - dist.len()
    }

    /// Every radius-`h` ball has at most one independent cycle.
    pub fn is_tangle_free(&self, h: usize) -> bool {
        (0..self.n).all(|x| self.ball_cycle_rank(x, h) <= 1)
    }
}

/// Multigraph of the colored graph `G_γ` (one edge per colored edge).
pub fn path_multigraph(path: &ColoredPath) -> Multigraph {
    let g = colored_graph(path);
    let index: HashMap<usize, usize> = g.vertices.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    let edges = g.multiplicity.keys().map(|&(x, _, y)| (index[&x], index[&y])).collect();
    Multigraph::new(g.vertices.len(), edges)
}

/// Whether `G_γ` is tangle-free at radius `h`.
pub fn tangle_detect(path: &ColoredPath, h: usize) -> bool {
    path_multigraph(path).is_tangle_free(h)
}

/// `(N)_b` as a float, for callers that only need magnitudes.
pub fn falling_f64(n: u64, b: usize) -> f64 {
    falling(n, b).to_f64().unwrap_or(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weingarten::{path_weight, PathWeight};

    fn p(d: usize, v: &[usize], c: &[usize]) -> ColoredPath {
        ColoredPath::new(d, v.to_vec(), c.to_vec()).unwrap()
    }

    #[test]
    fn path_counts() {
        assert_eq!(enumerate_paths(2, 2, 1).unwrap().len(), 8);
        assert_eq!(enumerate_paths(1, 2, 2).unwrap().len(), 12);
        // triple loop over x1, x2 and color words
        let mut count = 0;
        for _x0 in 0..3 {
            for _x1 in 0..3 {
                for _x2 in 0..3 {
                    for i1 in 1..=4usize {
                        for i2 in 1..=4usize {
                            for i3 in 1..=4usize {
                                if i2 != star(2, i1) && i3 != star(2, i2) {
                                    count += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(enumerate_paths(3, 2, 3).unwrap().len(), count);
        assert!(ColoredPath::new(2, vec![0, 1, 0], vec![1, 3]).is_err());
        assert!(ColoredPath::new(2, vec![0, 1], vec![1]).is_err());
    }

    #[test]
    fn restricted_growth_counts() {
        assert_eq!(restricted_growth(4, 10).len(), 15);
        assert_eq!(restricted_growth(6, 10).len(), 203);
        assert_eq!(restricted_growth(4, 2).len(), 8);
        assert_eq!(restricted_growth(1, 3), vec![vec![0]]);
    }

    #[test]
    fn stats_and_kernel_of_cycle() {
        let c = p(2, &[0, 1, 2, 0], &[1, 2, 1]);
        let s = path_stats(&c);
        assert_eq!((s.v, s.e, s.e1), (3, 3, 3));
        assert_eq!(s.chi_twice(), 0);
        let k = kernel_graph(&c);
        assert_eq!(k.vertices, vec![0]);
        assert_eq!(k.edges.len(), 1);
        assert_eq!(k.edges[0].colors.len(), 3);
        assert!(k.euler_check(&s));
    }

    #[test]
    fn theta_kernel() {
        // vertices 0 and 1 joined by three routes: 0-1, 0-2-1, 0-3-1
        let t = p(2, &[0, 1, 2, 0, 3, 1, 0], &[1, 2, 1, 2, 2, 3]);
        let s = path_stats(&t);
        let k = kernel_graph(&t);
        assert_eq!(k.vertices.len(), 2);
        assert_eq!(k.edges.len(), 3);
        assert!(k.euler_check(&s));
        assert!(k.edge_bound_check(&s));
    }

    #[test]
    fn canonical_form_is_idempotent_and_relabel_invariant() {
        let g = p(2, &[5, 7, 5, 9, 5], &[2, 1, 4, 3]);
        let c = coarse_canonical(&g);
        assert_eq!(c.vertices[0], 0);
        assert_eq!(c.colors[0], 1);
        assert_eq!(coarse_canonical(&c), c);
        let h = p(2, &[1, 0, 1, 3, 1], &[2, 1, 4, 3]);
        assert!(coarse_equivalent(&g, &h));
    }

    #[test]
    fn coarse_class_ignores_colors_but_fine_does_not() {
        let a = p(2, &[0, 1, 0, 1, 0], &[1, 2, 3, 4]);
        let b = p(2, &[0, 1, 0, 1, 0], &[2, 1, 4, 3]);
        assert!(coarse_equivalent(&a, &b));
        let fa = canonicalize(&a, ClassKind::Fine);
        let fb = canonicalize(&b, ClassKind::Fine);
        assert_ne!(fa.key, fb.key);
    }

    #[test]
    fn fine_classes_have_constant_weight() {
        for n in [4u64, 5] {
            for m in 1..=4 {
                let mut seen: HashMap<Vec<usize>, BigRational> = HashMap::new();
                for path in canonical_vertex_paths(2, m, n as usize) {
                    let key = canonicalize(&path, ClassKind::Fine).key;
                    let PathWeight::Exact(w) = path_weight(&path, n, ModelKind::Unitary, None).unwrap() else { panic!() };
                    if let Some(prev) = seen.get(&key) {
                        assert_eq!(prev, &w, "{path:?}");
                    } else {
                        seen.insert(key, w);
                    }
                }
            }
        }
    }

    #[test]
    fn weight_examples() {
        let loop1 = p(2, &[0, 0], &[1]);
        assert_eq!(path_weight(&loop1, 6, ModelKind::Unitary, None).unwrap(), PathWeight::Exact(BigRational::zero()));
        for path in enumerate_paths(3, 2, 2).unwrap() {
            assert_eq!(path_weight(&path, 3, ModelKind::Unitary, None).unwrap(), PathWeight::Exact(BigRational::zero()));
        }
        let sq = p(2, &[0, 0, 0, 0, 0], &[1, 2, 3, 4]);
        let n = 9i64;
        assert_eq!(
            path_weight(&sq, n as u64, ModelKind::Unitary, None).unwrap(),
            PathWeight::Exact(BigRational::new(1.into(), (n * n).into()))
        );
        let r = weingarten::weight_bound_check(&sq, n as u64, 1.0).unwrap();
        assert!(r.pass);
    }

    #[test]
    fn nb_trace_matches_raw_enumeration() {
        let fam = CoefficientFamily::kesten(2);
        for m in 1..=3 {
            let a = expected_nb_trace(&fam, 4, m, 3, ModelKind::Unitary).unwrap();
            let b = expected_nb_trace_raw(&fam, 4, m, 3, ModelKind::Unitary).unwrap();
            assert!((a - b).norm() < 1e-12, "{m}: {a} vs {b}");
            let a = expected_nb_trace(&fam, 4, m, 3, ModelKind::Permutation).unwrap();
            let b = expected_nb_trace_raw(&fam, 4, m, 3, ModelKind::Permutation).unwrap();
            assert!((a - b).norm() < 1e-12, "{m}: {a} vs {b}");
        }
        for m in 1..=2 {
            assert_eq!(expected_nb_trace(&fam, 4, m, 10, ModelKind::Unitary).unwrap(), C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn sample_components_sum_to_trace_power() {
        let mut rng = crate::rng::seeded(3);
        let fam = CoefficientFamily::random_selfadjoint(2, 2, &mut rng);
        let sample = ModelSample::draw(ModelKind::Unitary, 6, 2, 1).unwrap();
        let l = 4;
        let table = power_table(&fam, l).unwrap();
        let total: C64 = (0..=l).map(|m| nb_trace_sample(&table, &sample, m)).sum();
        let a = crate::matrix_models::assemble(&fam, &sample).unwrap().to_dense();
        let want = linalg::ntrace(&(&a * &a * &a * &a));
        assert!((total - want).norm() < 1e-10, "{total} vs {want}");
    }

    #[test]
    fn tangles() {
        let tree = Multigraph::new(4, vec![(0, 1), (1, 2), (1, 3)]);
        assert!(tree.is_tangle_free(5));
        let cycle = Multigraph::new(3, vec![(0, 1), (1, 2), (2, 0)]);
        assert!(cycle.is_tangle_free(5));
        let bowtie = Multigraph::new(5, vec![(0, 1), (1, 2), (2, 0), (0, 3), (3, 4), (4, 0)]);
        assert!(!bowtie.is_tangle_free(1));
        assert!(bowtie.is_tangle_free(0));
        let double_loop = Multigraph::new(1, vec![(0, 0), (0, 0)]);
        assert!(!double_loop.is_tangle_free(0));
        let t = p(2, &[0, 1, 2, 0, 3, 1, 0], &[1, 2, 1, 2, 2, 3]);
        assert!(!tangle_detect(&t, 2));
        assert!(tangle_detect(&p(2, &[0, 1, 2, 0], &[1, 2, 1]), 3));
    }

    #[test]
    fn small_census() {
        let c = class_census(2, 1, 4);
        assert!(c.pass());
        assert_eq!(c.rows.len(), 1);
        assert_eq!(c.rows[0].coarse_count, 1);
        let c = class_census(2, 4, 4);
        assert!(c.pass());
    }
}
