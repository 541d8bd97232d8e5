//! Experiment records: one JSON object per line.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::LabError;

pub const BUILD_ID: &str = env!("LAB_BUILD_ID");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<serde_json::Value>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Output {
    Scalar(f64),
    Text(String),
    Table(Table),
}

impl Output {
    /// Non-finite values are stored as text, since JSON has no NaN.
    pub fn scalar(v: f64) -> Self {
        if v.is_finite() {
            Output::Scalar(v)
        } else {
            Output::Text(format!("{v}"))
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Output::Scalar(v) => Some(*v),
            Output::Text(t) => t.parse().ok(),
            Output::Table(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub threshold: f64,
    pub pass: bool,
}

impl Verdict {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Verdict { name: name.to_string(), value: finite(value), relation: Relation::AtMost, threshold, pass: value <= threshold }
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Verdict { name: name.to_string(), value: finite(value), relation: Relation::AtLeast, threshold, pass: value >= threshold }
    }
}

fn finite(v: f64) -> f64 {
    if v.is_nan() {
        f64::MAX
    } else {
        v.clamp(f64::MIN, f64::MAX)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub build_id: String,
    pub wall_time_s: f64,
    /// no Monte Carlo statistics involved; replays must match bit for bit
    pub exact: bool,
    pub outputs: BTreeMap<String, Output>,
    /// standard errors of Monte Carlo outputs, by output name
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub stderr: BTreeMap<String, f64>,
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExperimentRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }

    pub fn from_line(line: &str) -> Result<Self, LabError> {
        let r: ExperimentRecord = serde_json::from_str(line).map_err(|e| LabError::Record(e.to_string()))?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(LabError::Record(format!("schema_version {} is not supported", r.schema_version)));
        }
        Ok(r)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.outputs.get(name).and_then(Output::as_f64)
    }
}

/// SHA-256 of the canonical JSON form of a config.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let text = serde_json::to_string(cfg).expect("configs serialize");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_records(text: &str) -> Result<Vec<ExperimentRecord>, LabError> {
    text.lines().filter(|l| !l.trim().is_empty()).map(ExperimentRecord::from_line).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentKind;

    fn sample_record() -> ExperimentRecord {
        let mut outputs = BTreeMap::new();
        outputs.insert("x".to_string(), Output::scalar(0.1 + 0.2));
        outputs.insert("bad".to_string(), Output::scalar(f64::NAN));
        outputs.insert(
            "t".to_string(),
            Output::Table(Table { columns: vec!["a".into(), "b".into()], rows: vec![vec![1.into(), serde_json::json!(2.5)]] }),
        );
        let config = ExperimentConfig::new(ExperimentKind::FreeNorm);
        ExperimentRecord {
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash(&config),
            config,
            build_id: BUILD_ID.to_string(),
            wall_time_s: 1.0 / 3.0,
            exact: true,
            outputs,
            stderr: BTreeMap::new(),
            verdicts: vec![Verdict::at_most("x", 0.3, 0.5)],
            pass: true,
            error: None,
        }
    }

    #[test]
    fn record_round_trip_is_byte_identical() {
        let line = sample_record().to_line();
        let back = ExperimentRecord::from_line(&line).unwrap();
        assert_eq!(back.to_line(), line);
        assert_eq!(back.scalar("x"), Some(0.1 + 0.2));
        assert!(back.scalar("bad").unwrap().is_nan());
    }

    #[test]
    fn hash_depends_on_config() {
        let a = ExperimentConfig::new(ExperimentKind::FreeNorm);
        let mut b = a.clone();
        b.seed = Some(1);
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn verdict_relations() {
        assert!(Verdict::at_most("a", 1.0, 1.0).pass);
        assert!(!Verdict::at_least("a", 0.5, 1.0).pass);
        assert!(!Verdict::at_most("a", f64::NAN, 1.0).pass);
    }
}
