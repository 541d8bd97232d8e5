//! Experiment configuration files.
//!
//! A config file holds either one experiment or a batch:
//!
//! ```json
//! {"schema_version": 1, "kind": "free-norm", "coefficients": {"preset": "kesten(2)"}, "params": {"tol": 0.05}}
//! {"schema_version": 1, "seed": 7, "experiments": [ ... ]}
//! ```
//!
//! Parameter defaults (used when a field is absent):
//!
//! | kind | defaults |
//! |---|---|
//! | free-norm | tol 0.05, target none |
//! | trace-compare | l 4, m 2, N 10, unitary, samples 2000, sigmas 4 |
//! | nb-decomp-check | l 4, N none, tol 1e-12, model_tol 1e-10 |
//! | weingarten-check | k 2, N 8, samples 100000, specs 10, sigmas 4 |
//! | path-census | d 2, m 4 |
//! | nccs-check | instances 100, r 8, k 3, m 4, dim 4, tol 1e-12, bound_slack 1e-10 |
//! | linearize | d 2, n 1, l 4, N 25, tol 1e-8, chain_tol 1e-6 |
//! | schreier-lower | N 2000, p 4, samples 1 |
//! | alon-boppana | N 2000, samples 1 |
//! | ihara-bass | N 20, unitary, L 60, z_scale 1, tol 1e-8 |
//! | tensor-legs | k 2, N 40, radius 400, p 2000, tol 0.5, commutator_tol 1e-13 |
//! | concentration | N 100, samples 20, p none (operator norm), slack 10 |
//!
//! `d` defaults to the coefficient family's rank, or 2 without one; the
//! coefficient source defaults to `kesten(d)`.

use std::path::{Path, PathBuf};

use freelab::coeffs::{CoefficientFamily, CoefficientJson};
use freelab::matrix_models::ModelKind;
use serde::{Deserialize, Serialize};

use crate::LabError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    FreeNorm,
    TraceCompare,
    NbDecompCheck,
    WeingartenCheck,
    PathCensus,
    NccsCheck,
    Linearize,
    SchreierLower,
    AlonBoppana,
    IharaBass,
    TensorLegs,
    Concentration,
}

impl ExperimentKind {
    pub fn name(&self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoefficientSource {
    /// e.g. `kesten(2)`, `random-selfadjoint(2,7)`
    Preset(String),
    Inline(CoefficientJson),
    /// path to a JSON coefficient file, relative to the config file
    File(PathBuf),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// matrix size `N`
    #[serde(default, rename = "N", skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// truncation depth `L`
    #[serde(default, rename = "L", skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instances: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commutator_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_slack: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<CoefficientSource>,
    #[serde(default)]
    pub params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub experiments: Vec<ExperimentConfig>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig { schema_version: SCHEMA_VERSION, kind, label: None, coefficients: None, params: Params::default(), seed: None }
    }

    pub fn validate(&self) -> Result<(), LabError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(LabError::Config(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        let p = &self.params;
        let positive = [("d", p.d), ("n", p.n), ("N", p.size), ("samples", p.samples), ("k", p.k), ("r", p.r), ("dim", p.dim), ("specs", p.specs), ("instances", p.instances)];
        for (name, v) in positive {
            if v == Some(0) {
                return Err(LabError::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("tol", p.tol), ("model_tol", p.model_tol), ("chain_tol", p.chain_tol), ("commutator_tol", p.commutator_tol), ("sigmas", p.sigmas), ("z_scale", p.z_scale), ("slack", p.slack)] {
            if let Some(x) = v {
                if !(x.is_finite() && x >= 0.0) {
                    return Err(LabError::Config(format!("{name} must be a finite non-negative number")));
                }
            }
        }
        if let Some(CoefficientSource::Inline(j)) = &self.coefficients {
            CoefficientFamily::from_json(j).map_err(|e| LabError::Config(format!("inline coefficients: {e}")))?;
        }
        Ok(())
    }

    /// Rank used by the experiment.
    pub fn rank(&self) -> usize {
        self.params.d.unwrap_or(match &self.coefficients {
            Some(CoefficientSource::Inline(j)) => j.d,
            _ => 2,
        })
    }

    pub fn family(&self) -> Result<CoefficientFamily, LabError> {
        let d = self.rank();
        match &self.coefficients {
            None => Ok(CoefficientFamily::kesten(d)),
            Some(CoefficientSource::Preset(name)) => CoefficientFamily::preset(name, d).map_err(|e| LabError::Config(e.to_string())),
            Some(CoefficientSource::Inline(j)) => CoefficientFamily::from_json(j).map_err(|e| LabError::Config(e.to_string())),
            Some(CoefficientSource::File(path)) => {
                let text = std::fs::read_to_string(path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
                let j: CoefficientJson = serde_json::from_str(&text).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
                CoefficientFamily::from_json(&j).map_err(|e| LabError::Config(e.to_string()))
            }
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(CoefficientSource::File(p)) = &mut self.coefficients {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Parses a config file into its experiments and the batch seed, if any.
pub fn parse_config(text: &str, base: Option<&Path>) -> Result<(Vec<ExperimentConfig>, Option<u64>), LabError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
    let (mut items, seed) = if value.get("experiments").is_some() {
        let b: BatchConfig = serde_json::from_value(value).map_err(|e| LabError::Config(e.to_string()))?;
        if b.schema_version != SCHEMA_VERSION {
            return Err(LabError::Config(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", b.schema_version)));
        }
        (b.experiments, b.seed)
    } else {
        let c: ExperimentConfig = serde_json::from_value(value).map_err(|e| LabError::Config(e.to_string()))?;
        (vec![c], None)
    };
    for c in &mut items {
        if let Some(base) = base {
            c.resolve_paths(base);
        }
        c.validate()?;
    }
    Ok((items, seed))
}

pub fn load_config(path: &Path) -> Result<(Vec<ExperimentConfig>, Option<u64>), LabError> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text, path.parent())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_rejected() {
        let bad = r#"{"schema_version": 1, "kind": "free-norm", "colour": 3}"#;
        assert!(matches!(parse_config(bad, None), Err(LabError::Config(_))));
        let bad = r#"{"schema_version": 1, "kind": "free-norm", "params": {"tolerance": 3}}"#;
        assert!(parse_config(bad, None).is_err());
        let bad = r#"{"schema_version": 1, "kind": "no-such-kind"}"#;
        assert!(parse_config(bad, None).is_err());
    }

    #[test]
    fn schema_version_checked() {
        assert!(parse_config(r#"{"schema_version": 2, "kind": "free-norm"}"#, None).is_err());
        assert!(parse_config(r#"{"schema_version": 2, "experiments": []}"#, None).is_err());
    }

    #[test]
    fn batch_and_single() {
        let (items, seed) = parse_config(r#"{"schema_version": 1, "kind": "path-census", "params": {"m": 3}}"#, None).unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!(seed, None);
        assert_eq!(items[0].params.m, Some(3));
        let batch = r#"{"schema_version": 1, "seed": 9, "experiments": [
            {"schema_version": 1, "kind": "free-norm", "coefficients": {"preset": "kesten(2)"}},
            {"schema_version": 1, "kind": "ihara-bass", "params": {"N": 12, "L": 30, "model": "permutation"}}]}"#;
        let (items, seed) = parse_config(batch, None).unwrap();
        assert_eq!(seed, Some(9));
        assert_eq!(items[1].params.depth, Some(30));
        assert_eq!(items[1].params.model, Some(ModelKind::Permutation));
        assert_eq!(items[0].family().unwrap().to_json(), CoefficientFamily::kesten(2).to_json());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(parse_config(r#"{"schema_version": 1, "kind": "free-norm", "params": {"tol": -1}}"#, None).is_err());
        assert!(parse_config(r#"{"schema_version": 1, "kind": "free-norm", "params": {"N": 0}}"#, None).is_err());
    }

    #[test]
    fn kind_names() {
        assert_eq!(ExperimentKind::NbDecompCheck.name(), "nb-decomp-check");
        assert_eq!(ExperimentKind::FreeNorm.name(), "free-norm");
    }
}
