//! Expensive-evaluation plumbing: the backend interface, metric schema with
//! orientation and preference handling, min-max normalization, and the
//! composite cost.

pub mod external;
pub mod synthetic;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anneal::Candidate;
use crate::netlist::Netlist;

pub use external::{ExternalCommand, TIMEOUT_ENV};
pub use synthetic::{synthetic_oracle, OracleConfig, SyntheticOracle};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to normalize")]
    EmptyRecords,
    #[error("candidate {uid}: metric `{name}` missing from record")]
    MissingMetric { uid: u64, name: String },
    #[error("candidate {uid}: metric `{name}` is not finite")]
    NonFiniteMetric { uid: u64, name: String },
    #[error("oracle weight vector has dimension {expected}, features have {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("schema selects no metric for the active preference")]
    EmptyPreference,
    #[error("preference names unknown metric `{name}`")]
    UnknownPreferenceMetric { name: String },
    #[error("command template must contain `{{input}}` and `{{output}}`")]
    BadTemplate,
    #[error("candidate {uid}: evaluation timed out after {seconds:.1} s")]
    Timeout { uid: u64, seconds: f64 },
    #[error("candidate {uid}: command failed after {attempts} attempt(s): {detail}")]
    CommandFailed { uid: u64, attempts: u32, detail: String },
    #[error("candidate {uid}: malformed metrics file: {detail}")]
    MalformedMetrics { uid: u64, detail: String },
    #[error("candidate {uid}: io error during evaluation: {detail}")]
    Io { uid: u64, detail: String },
}

/// Whether small or large raw values are desirable. Slacks (WNS/TNS) are
/// higher-is-better; everything else in the default schema is a cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    LowerIsBetter,
    HigherIsBetter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDef {
    pub name: String,
    pub unit: String,
    pub orientation: Orientation,
    pub in_preference: bool,
    /// Multiplier applied to the normalized value before the ℓ2 composite.
    pub weight: f64,
}

/// The metric layout one backend produces. `in_preference` and `weight` are
/// what a `Preference` manipulates; the defaults keep every metric active at
/// weight 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSchema {
    metrics: Vec<MetricDef>,
}

/// Named metric subsets for the final selection, plus free-form per-metric
/// weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preference {
    #[default]
    Balanced,
    Timing,
    Routing,
    Power,
    Weights(BTreeMap<String, f64>),
}

impl MetricSchema {
    pub fn new(metrics: Vec<MetricDef>) -> Self {
        MetricSchema { metrics }
    }

    /// congestion (%), routed wirelength (m), WNS (ns), TNS (ns), power (W).
    pub fn default_ppa() -> Self {
        let def = |name: &str, unit: &str, orientation| MetricDef {
            name: name.to_string(),
            unit: unit.to_string(),
            orientation,
            in_preference: true,
            weight: 1.0,
        };
        MetricSchema {
            metrics: vec![
                def("cong", "%", Orientation::LowerIsBetter),
                def("rwl", "m", Orientation::LowerIsBetter),
                def("wns", "ns", Orientation::HigherIsBetter),
                def("tns", "ns", Orientation::HigherIsBetter),
                def("power", "W", Orientation::LowerIsBetter),
            ],
        }
    }

    pub fn metrics(&self) -> &[MetricDef] {
        &self.metrics
    }

    pub fn metric_names(&self) -> Vec<String> {
        self.metrics.iter().map(|m| m.name.clone()).collect()
    }

    /// Applies a preference: named presets restrict `in_preference`; a weight
    /// map keeps exactly the positively weighted metrics.
    pub fn with_preference(&self, preference: &Preference) -> Result<MetricSchema, EvalError> {
        let mut out = self.clone();
        match preference {
            Preference::Balanced => {
                for m in &mut out.metrics {
                    m.in_preference = true;
                    m.weight = 1.0;
                }
            }
            Preference::Timing | Preference::Routing | Preference::Power => {
                let keep: &[&str] = match preference {
                    Preference::Timing => &["wns", "tns"],
                    Preference::Routing => &["cong", "rwl"],
                    _ => &["power"],
                };
                for m in &mut out.metrics {
                    m.in_preference = keep.contains(&m.name.as_str());
                    m.weight = 1.0;
                }
            }
            Preference::Weights(weights) => {
                for (name, w) in weights {
                    if !out.metrics.iter().any(|m| &m.name == name) {
                        return Err(EvalError::UnknownPreferenceMetric { name: name.clone() });
                    }
                    if !(w.is_finite() && *w >= 0.0) {
                        return Err(EvalError::UnknownPreferenceMetric { name: name.clone() });
                    }
                }
                for m in &mut out.metrics {
                    let w = weights.get(&m.name).copied().unwrap_or(0.0);
                    m.in_preference = w > 0.0;
                    m.weight = if w > 0.0 { w } else { 1.0 };
                }
            }
        }
        if !out.metrics.iter().any(|m| m.in_preference) {
            return Err(EvalError::EmptyPreference);
        }
        Ok(out)
    }
}

/// One candidate's expensive evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpaRecord {
    pub candidate_uid: u64,
    pub metrics: BTreeMap<String, f64>,
    pub backend: String,
    pub wall_seconds: f64,
}

/// Anything that can produce a `PpaRecord` for a candidate. Implementations
/// must tolerate concurrent `evaluate` calls on distinct candidates.
pub trait EvalBackend: Send + Sync {
    fn evaluate(&self, netlist: &Netlist, candidate: &Candidate) -> Result<PpaRecord, EvalError>;

    /// Stable identity used in cache keys; must change whenever the backend
    /// would produce different metrics.
    fn tag(&self) -> String;
}

/// Per-metric min-max normalized values for one record batch. Row i belongs
/// to `records[i]`; columns follow the schema's in-preference metrics in
/// schema order and carry that metric's preference weight.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedMetrics {
    pub names: Vec<String>,
    pub weights: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl NormalizedMetrics {
    /// Weighted composite cost of every row.
    pub fn costs(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| {
                composite_cost(
                    &row.iter()
                        .zip(&self.weights)
                        .map(|(v, w)| v * w)
                        .collect::<Vec<_>>(),
                )
            })
            .collect()
    }
}

/// Eq-style min-max scaling over the records given: higher-is-better metrics
/// are negated first, then columns map onto [0,1]; a constant column maps to
/// all zeros. Only in-preference metrics are emitted.
pub fn normalize_metrics(
    records: &[PpaRecord],
    schema: &MetricSchema,
) -> Result<NormalizedMetrics, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let active: Vec<&MetricDef> = schema.metrics().iter().filter(|m| m.in_preference).collect();
    if active.is_empty() {
        return Err(EvalError::EmptyPreference);
    }

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(active.len());
    for def in &active {
        let mut column = Vec::with_capacity(records.len());
        for record in records {
            let raw = *record.metrics.get(&def.name).ok_or_else(|| EvalError::MissingMetric {
                uid: record.candidate_uid,
                name: def.name.clone(),
            })?;
            if !raw.is_finite() {
                return Err(EvalError::NonFiniteMetric {
                    uid: record.candidate_uid,
                    name: def.name.clone(),
                });
            }
            column.push(match def.orientation {
                Orientation::LowerIsBetter => raw,
                Orientation::HigherIsBetter => -raw,
            });
        }
        let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            let span = hi - lo;
            for v in &mut column {
                *v = (*v - lo) / span;
            }
        } else {
            column.iter_mut().for_each(|v| *v = 0.0);
        }
        columns.push(column);
    }

    let rows = (0..records.len())
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect();
    Ok(NormalizedMetrics {
        names: active.iter().map(|m| m.name.clone()).collect(),
        weights: active.iter().map(|m| m.weight).collect(),
        rows,
    })
}

/// ℓ2 composite of one normalized row: √(Σ m̃²), in [0, √K'].
pub fn composite_cost(normalized_row: &[f64]) -> f64 {
    normalized_row.iter().map(|v| v * v).sum::<f64>().sqrt()
}
