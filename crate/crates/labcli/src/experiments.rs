//! Dispatch from experiment kinds to the freelab pipelines.

use std::collections::BTreeMap;

use freelab::coeffs::CoefficientFamily;
use freelab::linalg::{max_abs, max_abs_diff, CMat};
use freelab::linearization::{halve, linearize, random_selfadjoint_polynomial};
use freelab::matrix_models::{concentration_probe, haar_unitary, tensor_leg_model, ModelKind, ModelSample};
use freelab::nccs::{lifted_corner, q_factors, random_open_family, random_partition, x_pi_sum};
use freelab::paths::{class_census, expected_nb_trace, mc_nb_trace};
use freelab::resolvent_ib::{complex, default_z_min, verify_identity, IdentityOptions};
use freelab::rng::{derive_seed, seeded};
use freelab::schreier::{alon_boppana, lower_bound_certificate, random_graph};
use freelab::star_ops::{nb_decomposition_check, norm_bracket, tensor_norm_bracket, BracketBudget, TensorFamily};
use freelab::weingarten::{
    is_balanced, mc_expectations, random_balanced_spec, random_unbalanced_spec, unitary_entry_expectation, Group, WeingartenTable,
};
use num::{ToPrimitive, Zero};
use rand::Rng;
use serde_json::json;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::record::{Output, Table, Verdict};
use crate::LabError;

/// Default cap on dense allocations when `LAB_CAPACITY_MB` is unset.
pub const DEFAULT_CAPACITY_MB: f64 = 4096.0;
/// Largest `n N^k` accepted for tensor-leg operators.
pub const TENSOR_MATVEC_CAP: usize = 10_000_000;
/// Largest final dimension times `N` for full linearization chains.
pub const CHAIN_EVAL_CAP: usize = 10_000;

#[derive(Debug, Default)]
pub struct Outcome {
    pub outputs: BTreeMap<String, Output>,
    pub stderr: BTreeMap<String, f64>,
    pub verdicts: Vec<Verdict>,
    pub exact: bool,
}

impl Outcome {
    fn exact() -> Self {
        Outcome { exact: true, ..Default::default() }
    }

    fn statistical() -> Self {
        Outcome { exact: false, ..Default::default() }
    }

    fn put(&mut self, name: &str, v: f64) {
        self.outputs.insert(name.to_string(), Output::scalar(v));
    }

    fn put_mc(&mut self, name: &str, v: f64, se: f64) {
        self.put(name, v);
        self.stderr.insert(name.to_string(), se);
    }

    fn text(&mut self, name: &str, v: impl Into<String>) {
        self.outputs.insert(name.to_string(), Output::Text(v.into()));
    }

    fn table(&mut self, name: &str, columns: &[&str], rows: Vec<Vec<serde_json::Value>>) {
        let columns = columns.iter().map(|c| c.to_string()).collect();
        self.outputs.insert(name.to_string(), Output::Table(Table { columns, rows }));
    }

    fn verdict(&mut self, v: Verdict) {
        self.verdicts.push(v);
    }
}

fn numerical<E: std::fmt::Display>(e: E) -> LabError {
    LabError::Numerical(e.to_string())
}

pub fn capacity_mb() -> f64 {
    std::env::var("LAB_CAPACITY_MB").ok().and_then(|v| v.trim().parse::<f64>().ok()).filter(|v| *v > 0.0).unwrap_or(DEFAULT_CAPACITY_MB)
}

/// Rough peak of dense allocations in MB.
pub fn dense_estimate_mb(cfg: &ExperimentConfig, fam: &CoefficientFamily) -> f64 {
    let p = &cfg.params;
    let c16 = 16.0 / (1024.0 * 1024.0);
    let sq = |dim: f64| dim * dim * c16;
    let n = fam.n as f64;
    let d = fam.d as f64;
    match cfg.kind {
        ExperimentKind::NbDecompCheck => p.size.map(|s| 4.0 * sq(n * s as f64)).unwrap_or(0.0),
        ExperimentKind::IharaBass => 6.0 * sq(2.0 * d * n * p.size.unwrap_or(20) as f64),
        ExperimentKind::Concentration => 3.0 * sq(n * p.size.unwrap_or(100) as f64),
        ExperimentKind::TraceCompare => 2.0 * sq(n * p.size.unwrap_or(10) as f64),
        ExperimentKind::Linearize => {
            let pn = p.n.unwrap_or(1) as f64;
            let l = p.l.unwrap_or(4);
            let dd = p.d.unwrap_or(2) as f64;
            // first halving: 2n |B_{l/2}| squared, a few copies
            let ball = 1.0 + 2.0 * dd * ((2.0 * dd - 1.0).powi(l.div_ceil(2) as i32) - 1.0) / (2.0 * dd - 2.0).max(1.0);
            5.0 * sq(2.0 * pn * ball)
        }
        ExperimentKind::TensorLegs | ExperimentKind::SchreierLower | ExperimentKind::AlonBoppana => {
            let size = p.size.unwrap_or(if cfg.kind == ExperimentKind::TensorLegs { 40 } else { 2000 }) as f64;
            let k = if cfg.kind == ExperimentKind::TensorLegs { p.k.unwrap_or(2) as i32 } else { 1 };
            // Lanczos basis of at most 400 vectors
            400.0 * n * size.powi(k) * c16
        }
        _ => 0.0,
    }
}

pub fn dispatch(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, LabError> {
    let fam = cfg.family()?;
    let need = dense_estimate_mb(cfg, &fam);
    let cap = capacity_mb();
    if need > cap {
        return Err(LabError::Capacity { needed_mb: need, cap_mb: cap });
    }
    match cfg.kind {
        ExperimentKind::FreeNorm => free_norm(cfg, &fam),
        ExperimentKind::TraceCompare => trace_compare(cfg, &fam, seed),
        ExperimentKind::NbDecompCheck => nb_decomp(cfg, &fam, seed),
        ExperimentKind::WeingartenCheck => weingarten(cfg, seed),
        ExperimentKind::PathCensus => path_census(cfg, &fam),
        ExperimentKind::NccsCheck => nccs(cfg, seed),
        ExperimentKind::Linearize => linearize_check(cfg, seed),
        ExperimentKind::SchreierLower => schreier_lower(cfg, &fam, seed),
        ExperimentKind::AlonBoppana => alon_boppana_check(cfg, &fam, seed),
        ExperimentKind::IharaBass => ihara_bass(cfg, &fam, seed),
        ExperimentKind::TensorLegs => tensor_legs(cfg, &fam, seed),
        ExperimentKind::Concentration => concentration(cfg, &fam, seed),
    }
}

fn free_norm(cfg: &ExperimentConfig, fam: &CoefficientFamily) -> Result<Outcome, LabError> {
    let tol = cfg.params.tol.unwrap_or(0.05);
    let b = norm_bracket(fam, tol, &BracketBudget::default()).map_err(numerical)?;
    let mut o = Outcome::exact();
    o.put("lower", b.lower);
    o.put("upper", b.upper);
    o.put("width", b.width());
    o.put("radius", b.radius as f64);
    o.put("p", b.p as f64);
    o.text("upper_source", b.upper_source);
    o.verdict(Verdict::at_most("width", b.width(), tol));
    if let Some(t) = cfg.params.target {
        let outside = (b.lower - t).max(t - b.upper).max(0.0);
        o.verdict(Verdict::at_most("target_outside_bracket", outside, 0.0));
    }
    Ok(o)
}

fn trace_compare(cfg: &ExperimentConfig, fam: &CoefficientFamily, seed: u64) -> Result<Outcome, LabError> {
    let p = &cfg.params;
    let (l, m, size) = (p.l.unwrap_or(4), p.m.unwrap_or(2), p.size.unwrap_or(10));
    let model = p.model.unwrap_or(ModelKind::Unitary);
    let samples = p.samples.unwrap_or(2000);
    let sigmas = p.sigmas.unwrap_or(4.0);
    let exact = expected_nb_trace(fam, l, m, size, model).map_err(numerical)?;
    let (mean, se) = mc_nb_trace(fam, l, m, size, model, samples, seed).map_err(numerical)?;
    let mut o = Outcome::statistical();
    o.put("exact_re", exact.re);
    o.put("exact_im", exact.im);
    o.put_mc("mc_mean", mean, se);
    o.put("mc_stderr", se);
    o.verdict(Verdict::at_most("abs_deviation", (mean - exact.re).abs(), sigmas * se + 1e-12));
    Ok(o)
}

fn nb_decomp(cfg: &ExperimentConfig, fam: &CoefficientFamily, seed: u64) -> Result<Outcome, LabError> {
    let p = &cfg.params;
    let l = p.l.unwrap_or(4);
    let us: Option<Vec<CMat>> = p.size.map(|s| {
        let mut rng = seeded(seed);
        (0..fam.d).map(|_| haar_unitary(s, &mut rng)).collect()
    });
    let r = nb_decomposition_check(fam, l, us.as_deref()).map_err(numerical)?;
    let mut o = Outcome::exact();
    o.put("star_residual", r.star_residual);
    o.verdict(Verdict::at_most("star_residual", r.star_residual, p.tol.unwrap_or(1e-12)));
    if let Some(m) = r.model_residual {
        o.put("model_residual", m);
        o.verdict(Verdict::at_most("model_residual", m, p.model_tol.unwrap_or(1e-10)));
    }
    Ok(o)
}

fn weingarten(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, LabError> {
    let p = &cfg.params;
    let k = p.k.unwrap_or(2);
    let size = p.size.unwrap_or(8);
    let samples = p.samples.unwrap_or(100_000);
    let count = p.specs.unwrap_or(10);
    let sigmas = p.sigmas.unwrap_or(4.0);
    let table = WeingartenTable::new(k, size as u64).map_err(numerical)?;
    let residual_zero = table.defining_residual(true).is_zero();
    let mut rng = seeded(seed);
    let range = size.min(3);
    let specs: Vec<_> = (0..count)
        .map(|_| {
            let kk = rng.random_range(1..=k);
            random_balanced_spec(&mut rng, kk, 2, range)
        })
        .collect();
    debug_assert!(specs.iter().all(|s| is_balanced(s, Group::Unitary)));
    let mc = mc_expectations(&specs, size, 2, ModelKind::Unitary, samples, derive_seed(seed, 1));
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for (i, (s, e)) in specs.iter().zip(&mc).enumerate() {
        let exact = unitary_entry_expectation(s, size as u64).map_err(numerical)?.to_f64().unwrap_or(f64::NAN);
        let dev = (e.mean - freelab::linalg::C64::new(exact, 0.0)).norm();
        let z = if dev == 0.0 { 0.0 } else { dev / e.stderr.max(1e-300) };
        worst = worst.max(z);
        rows.push(vec![json!(i), json!(s.factors.len() / 2), json!(exact), json!(e.mean.re), json!(e.mean.im), json!(e.stderr)]);
    }
    let unbalanced_nonzero = (0..count)
        .filter(|_| {
            let kk = rng.random_range(1..=k);
            let s = random_unbalanced_spec(&mut rng, kk, 2, range);
            !unitary_entry_expectation(&s, size as u64).map(|v| v.is_zero()).unwrap_or(false)
        })
        .count();
    let mut o = Outcome::statistical();
    o.put("max_z", worst);
    o.put("unbalanced_nonzero", unbalanced_nonzero as f64);
    o.table("specs", &["spec", "k", "exact", "mc_re", "mc_im", "stderr"], rows);
    o.verdict(Verdict::at_most("table_residual_nonzero", if residual_zero { 0.0 } else { 1.0 }, 0.0));
    o.verdict(Verdict::at_most("max_z", worst, sigmas));
    o.verdict(Verdict::at_most("unbalanced_nonzero", unbalanced_nonzero as f64, 0.0));
    Ok(o)
}

pub const CENSUS_COLUMNS: [&str; 8] = ["m", "v", "e1", "chi", "coarse_count", "fine_count", "bound", "pass"];

fn path_census(cfg: &ExperimentConfig, fam: &CoefficientFamily) -> Result<Outcome, LabError> {
    let m = cfg.params.m.unwrap_or(4);
    let d = cfg.params.d.unwrap_or(fam.d);
    let c = class_census(d, m, m);
    let rows = c
        .rows
        .iter()
        .map(|r| vec![json!(r.m), json!(r.v), json!(r.e1), json!(r.chi), json!(r.coarse_count), json!(r.fine_count), json!(r.bound), json!(r.pass)])
        .collect();
    let failing = c.rows.iter().filter(|r| !r.pass).count();
    let mut o = Outcome::exact();
    o.put("paths", c.paths as f64);
    o.put("cells", c.rows.len() as f64);
    o.table("census", &CENSUS_COLUMNS, rows);
    o.verdict(Verdict::at_most("failing_cells", failing as f64, 0.0));
    o.verdict(Verdict::at_most("invariant_failures", (!c.stats_ok) as u8 as f64 + (!c.kernel_ok) as u8 as f64, 0.0));
    Ok(o)
}

fn nccs(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, LabError> {
    let p = &cfg.params;
    let instances = p.instances.unwrap_or(100);
    let (r_max, k_max, m_max, dim_max) = (p.r.unwrap_or(8), p.k.unwrap_or(3), p.m.unwrap_or(4).max(1), p.dim.unwrap_or(4));
    let tol = p.tol.unwrap_or(1e-12);
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    let mut ratio = 0.0f64;
    let mut violations = 0;
    for _ in 0..instances {
        let pi = random_partition(&mut rng, r_max, k_max);
        let sizes: Vec<usize> = (0..pi.k()).map(|_| rng.random_range(1..=m_max)).collect();
        let dim = rng.random_range(1..=dim_max);
        let fam = random_open_family(&mut rng, &pi, &sizes, dim);
        let a = x_pi_sum(&fam, &pi).map_err(numerical)?;
        let b = lifted_corner(&fam, &pi).map_err(numerical)?;
        worst = worst.max(max_abs_diff(&a, &b) / max_abs(&a).max(1.0));
        let q = q_factors(&fam, &pi).map_err(numerical)?;
        if q.product > 0.0 {
            ratio = ratio.max(q.norm / q.product);
        }
        let slack = p.bound_slack.unwrap_or(1e-10);
        if q.norm > q.product * (1.0 + slack) + slack {
            violations += 1;
        }
    }
    let mut o = Outcome::exact();
    o.put("max_relative_residual", worst);
    o.put("max_norm_ratio", ratio);
    o.put("bound_violations", violations as f64);
    o.verdict(Verdict::at_most("max_relative_residual", worst, tol));
    o.verdict(Verdict::at_most("bound_violations", violations as f64, 0.0));
    Ok(o)
}

fn linearize_check(cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, LabError> {
    let p = &cfg.params;
    let (d, n, l, size) = (p.d.unwrap_or(2), p.n.unwrap_or(1), p.l.unwrap_or(4), p.size.unwrap_or(25));
    let mut rng = seeded(seed);
    let poly = random_selfadjoint_polynomial(&mut rng, d, n, l).map_err(numerical)?;
    let us: Vec<CMat> = (0..d).map(|_| haar_unitary(size, &mut rng)).collect();
    let mut o = Outcome::exact();
    if l <= 1 {
        o.text("note", "degree one: nothing to halve");
        return Ok(o);
    }
    let step = halve(&poly).map_err(numerical)?;
    let (lhs, rhs) = step.identity_residual(&us).map_err(numerical)?;
    o.put("norm_p", lhs);
    o.put("q_squared_minus_theta", rhs);
    o.put("theta", step.theta);
    o.put("identity_residual", (lhs - rhs).abs());
    o.verdict(Verdict::at_most("identity_residual", (lhs - rhs).abs(), p.tol.unwrap_or(1e-8)));
    let chain = linearize(&poly).map_err(numerical)?;
    let dims = chain.dimensions();
    let rows = dims.iter().zip(chain.thetas()).enumerate().map(|(i, (dm, th))| vec![json!(i + 1), json!(dm), json!(th)]).collect();
    o.table("chain", &["step", "dimension", "theta"], rows);
    let last = dims.last().copied().unwrap_or(n);
    if last * size <= CHAIN_EVAL_CAP {
        let (a, b) = chain.round_trip(&poly, &us).map_err(numerical)?;
        let rel = (a - b).abs() / a.max(1.0);
        o.put("chain_relative_error", rel);
        o.verdict(Verdict::at_most("chain_relative_error", rel, p.chain_tol.unwrap_or(1e-6)));
    } else {
        o.text("chain_round_trip", format!("skipped: final dimension {last} x N = {} exceeds {CHAIN_EVAL_CAP}", last * size));
    }
    Ok(o)
}

fn schreier_lower(cfg: &ExperimentConfig, fam: &CoefficientFamily, seed: u64) -> Result<Outcome, LabError> {
    let p = &cfg.params;
    let (size, pp, samples) = (p.size.unwrap_or(2000), p.p.unwrap_or(4), p.samples.unwrap_or(1));
    let mut rows = Vec::new();
    let mut failures = 0;
    for s in 0..samples {
        let g = random_graph(size, fam.d, derive_seed(seed, s as u64)).map_err(numerical)?;
        let c = lower_bound_certificate(fam, &g, pp, derive_seed(seed, 1_000_000 + s as u64)).map_err(numerical)?;
        if !c.holds {
            failures += 1;
        }
        rows.push(vec![json!(s), json!(c.witness.is_some()), json!(c.certificate), json!(c.measured), json!(c.holds)]);
    }
    let mut o = Outcome::exact();
    o.table("samples", &["sample", "witness", "certificate", "measured", "holds"], rows);
    o.put("failures", failures as f64);
    o.verdict(Verdict::at_most("certificate_failures", failures as f64, 0.0));
    Ok(o)
}

fn alon_boppana_check(cfg: &ExperimentConfig, fam: &CoefficientFamily, seed: u64) -> Result<Outcome, LabError> {
    let p = &cfg.params;
    let (size, samples) = (p.size.unwrap_or(2000), p.samples.unwrap_or(1));
    let mut rows = Vec::new();
    let mut failures = 0;
    for s in 0..samples {
        let g = random_graph(size, fam.d, derive_seed(seed, s as u64)).map_err(numerical)?;
        let c = alon_boppana(fam, &g, derive_seed(seed, 1_000_000 + s as u64)).map_err(numerical)?;
        if !c.holds {
            failures += 1;
        }
        let moments = serde_json::to_value(&c.moments).unwrap_or(serde_json::Value::Null);
        rows.push(vec![json!(s), json!(c.p), json!(c.witness.is_some()), json!(c.certificate), json!(c.measured), json!(c.holds), moments]);
    }
    let mut o = Outcome::exact();
    o.table("samples", &["sample", "p", "witness", "certificate", "measured", "holds", "moments"], rows);
    o.put("failures", failures as f64);
    o.verdict(Verdict::at_most("certificate_failures", failures as f64, 0.0));
    Ok(o)
}

fn ihara_bass(cfg: &ExperimentConfig, fam: &CoefficientFamily, seed: u64) -> Result<Outcome, LabError> {
    let p = &cfg.params;
    let size = p.size.unwrap_or(20);
    let model = p.model.unwrap_or(ModelKind::Unitary);
    let depth = p.depth.unwrap_or(60);
    let z_min = default_z_min(fam);
    let z = complex(z_min * p.z_scale.unwrap_or(1.0), 0.0);
    let sample = ModelSample::draw(model, size, fam.d, seed).map_err(numerical)?;
    let rep = verify_identity(fam, &sample, z, &IdentityOptions { depth, z_min: Some(z_min), enforce: true }).map_err(numerical)?;
    let mut o = Outcome::exact();
    o.put("z", z.re);
    o.put("z_min", z_min);
    o.put("residual", rep.residual);
    o.put("tail_bound", rep.tail_bound);
    o.put("condition", rep.cond);
    o.verdict(Verdict::at_most("residual", rep.residual, p.tol.unwrap_or(1e-8)));
    Ok(o)
}

fn tensor_legs(cfg: &ExperimentConfig, fam: &CoefficientFamily, seed: u64) -> Result<Outcome, LabError> {
    let p = &cfg.params;
    let (k, size) = (p.k.unwrap_or(2), p.size.unwrap_or(40));
    let dim = (fam.n as f64) * (size as f64).powi(k as i32);
    if dim > TENSOR_MATVEC_CAP as f64 {
        return Err(LabError::Capacity { needed_mb: dim * 16.0 / 1048576.0, cap_mb: TENSOR_MATVEC_CAP as f64 * 16.0 / 1048576.0 });
    }
    let t = TensorFamily { d: fam.d, n: fam.n, a0: fam.a[0].clone(), legs: vec![fam.a[1..].to_vec(); k] };
    let b = tensor_norm_bracket(&t, p.radius.unwrap_or(400), p.p.unwrap_or(2000)).map_err(numerical)?;
    let op = tensor_leg_model(&t, p.model.unwrap_or(ModelKind::Unitary), size, seed).map_err(numerical)?;
    let norm = op.norm();
    let comm = op.cross_leg_commutator(derive_seed(seed, 1));
    let mut o = Outcome::exact();
    o.put("norm", norm);
    o.put("bracket_lower", b.lower);
    o.put("bracket_upper", b.upper);
    o.put("commutator", comm);
    o.verdict(Verdict::at_most("distance_to_midpoint", (norm - b.midpoint()).abs(), p.tol.unwrap_or(0.5)));
    o.verdict(Verdict::at_most("commutator", comm, p.commutator_tol.unwrap_or(1e-13)));
    Ok(o)
}

fn concentration(cfg: &ExperimentConfig, fam: &CoefficientFamily, seed: u64) -> Result<Outcome, LabError> {
    let p = &cfg.params;
    let size = p.size.unwrap_or(100);
    let samples = p.samples.unwrap_or(20);
    let b = norm_bracket(fam, 0.05, &BracketBudget::default()).map_err(numerical)?;
    let rep = concentration_probe(fam, size, p.p.map(|v| v as f64), samples, seed, b.upper, p.slack.unwrap_or(10.0)).map_err(numerical)?;
    let mut o = Outcome::statistical();
    o.put_mc("mean", rep.mean, rep.std / (samples as f64).sqrt());
    o.put("std", rep.std);
    o.put("bound", rep.bound);
    o.put("t_half", rep.t_half);
    o.put("free_norm_upper", b.upper);
    o.verdict(Verdict::at_most("std", rep.std, rep.bound));
    Ok(o)
}
