//! Config-driven runner for the freelab pipelines: JSON-lines records,
//! deterministic replay and CSV/JSON reports.

use std::collections::BTreeMap;
use std::time::Instant;

use freelab::rng::derive_seed;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub mod config;
pub mod experiments;
pub mod record;
pub mod report;

pub use record::ExperimentRecord;

use config::{ExperimentConfig, SCHEMA_VERSION};
use record::{config_hash, Output, BUILD_ID};

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid record: {0}")]
    Record(String),
    #[error("capacity: needs about {needed_mb:.0} MB, cap is {cap_mb:.0} MB (set LAB_CAPACITY_MB)")]
    Capacity { needed_mb: f64, cap_mb: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io: {0}")]
    Io(String),
}

/// Seed of batch item `index`: the item's own seed unless a master seed is
/// forced, else `derive_seed(master, index)`.
pub fn item_seed(cfg: &ExperimentConfig, master: u64, index: usize, force_master: bool) -> u64 {
    match (cfg.seed, force_master) {
        (Some(s), false) => s,
        _ => derive_seed(master, index as u64),
    }
}

/// Runs one experiment with its seed resolved; failures become records with
/// `error` set and `pass = false`.
pub fn run_one(cfg: &ExperimentConfig, seed: u64) -> ExperimentRecord {
    let mut config = cfg.clone();
    config.seed = Some(seed);
    let start = Instant::now();
    let result = experiments::dispatch(&config, seed);
    let wall_time_s = start.elapsed().as_secs_f64();
    let config_hash = config_hash(&config);
    match result {
        Ok(o) => {
            let pass = o.verdicts.iter().all(|v| v.pass);
            ExperimentRecord {
                schema_version: SCHEMA_VERSION,
                config,
                config_hash,
                build_id: BUILD_ID.to_string(),
                wall_time_s,
                exact: o.exact,
                outputs: o.outputs,
                stderr: o.stderr,
                verdicts: o.verdicts,
                pass,
                error: None,
            }
        }
        Err(e) => ExperimentRecord {
            schema_version: SCHEMA_VERSION,
            config,
            config_hash,
            build_id: BUILD_ID.to_string(),
            wall_time_s,
            exact: true,
            outputs: BTreeMap::new(),
            stderr: BTreeMap::new(),
            verdicts: Vec::new(),
            pass: false,
            error: Some(e.to_string()),
        },
    }
}

/// Runs a batch on `jobs` worker threads; records come back in item order.
pub fn run_batch(items: &[ExperimentConfig], master: u64, force_master: bool, jobs: usize) -> Result<Vec<ExperimentRecord>, LabError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| LabError::Io(e.to_string()))?;
    Ok(pool.install(|| items.par_iter().enumerate().map(|(i, cfg)| run_one(cfg, item_seed(cfg, master, i, force_master))).collect()))
}

#[derive(Debug, Clone, Serialize)]
pub struct Difference {
    pub output: String,
    pub stored: Option<Output>,
    pub replayed: Option<Output>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplayReport {
    pub config_hash: String,
    pub seed: u64,
    /// false when the replay seed differs from the stored one
    pub comparable: bool,
    pub matches: bool,
    pub differences: Vec<Difference>,
    pub record: ExperimentRecord,
}

impl ReplayReport {
    pub fn ok(&self) -> bool {
        self.comparable && self.matches && self.record.pass
    }
}

/// Relative tolerance for outputs of records that are not exact and carry no
/// standard error.
pub const REPLAY_REL_TOL: f64 = 1e-9;
/// Standard errors allowed between a stored and a replayed Monte Carlo output.
pub const REPLAY_SIGMAS: f64 = 4.0;

/// Re-executes a stored record and compares outputs: bit for bit for exact
/// records, within the stored standard error or `REPLAY_REL_TOL` otherwise.
pub fn replay(stored: &ExperimentRecord, seed_override: Option<u64>) -> ReplayReport {
    let stored_seed = stored.config.seed.unwrap_or(0);
    let seed = seed_override.unwrap_or(stored_seed);
    let record = run_one(&stored.config, seed);
    let comparable = seed == stored_seed;
    let mut differences = Vec::new();
    if comparable {
        let names: std::collections::BTreeSet<&String> = stored.outputs.keys().chain(record.outputs.keys()).collect();
        for name in names {
            let (a, b) = (stored.outputs.get(name), record.outputs.get(name));
            let same = match (a, b) {
                (Some(x), Some(y)) if stored.exact => x == y,
                (Some(Output::Scalar(x)), Some(Output::Scalar(y))) => {
                    let tol = stored.stderr.get(name).map(|se| REPLAY_SIGMAS * se).unwrap_or(0.0).max(REPLAY_REL_TOL * x.abs().max(1.0));
                    (x - y).abs() <= tol
                }
                (x, y) => x == y,
            };
            if !same {
                differences.push(Difference { output: name.clone(), stored: a.cloned(), replayed: b.cloned() });
            }
        }
        if stored.error != record.error {
            differences.push(Difference {
                output: "error".to_string(),
                stored: stored.error.clone().map(Output::Text),
                replayed: record.error.clone().map(Output::Text),
            });
        }
    }
    ReplayReport { config_hash: stored.config_hash.clone(), seed, comparable, matches: comparable && differences.is_empty(), differences, record }
}
