//! End-to-end orchestration: anneal → featurize → design solve → coreset →
//! parallel evaluation → surrogate fit → rank → verification → preference
//! selection, with every stage persisted to a run directory.
//!
//! The run directory is the unit of reproducibility: each stage reads only
//! from it and writes back to it (see [`stages`]), and `run` is the staged
//! composition. Everything outside the evaluation pool is sequential and
//! deterministic; evaluation results are merged in uid order, so the final
//! report is byte-identical no matter how parallel completions interleave.

pub mod artifacts;
mod parallel;
mod protocol;
mod stages;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anneal::SaConfig;
use crate::design::{DesignError, DEFAULT_MIN_CORESET, DEFAULT_THRESHOLD};
use crate::eval::{
    composite_cost, normalize_metrics, EvalBackend, EvalError, ExternalCommand, MetricSchema,
    OracleConfig, Orientation, PpaRecord, Preference, SyntheticOracle,
};
use crate::netlist::NetlistError;
use crate::surrogate::{SurrogateError, VerificationRule};

use artifacts::{sha256_hex, MetaDoc, StageTimings, REPORT_FILE};

pub use artifacts::verify_artifacts;
pub use protocol::{
    budget_sweep, multi_seed, ArmPick, MetricSummary, SeedOutcome, SeedsOutcome, SweepOutcome,
    SweepPoint,
};
pub use stages::{
    stage_design, stage_evaluate, stage_fit, stage_generate, stage_select, DesignOutcome,
    EvaluateOutcome, FitOutcome, GenerateOutcome,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {detail}")]
    InvalidConfig { detail: String },
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {detail}")]
    Io { path: PathBuf, detail: String },
    #[error("{path}: bad JSON: {detail}")]
    Json { path: PathBuf, detail: String },
    #[error("search produced no candidates")]
    EmptyCandidates,
    #[error("{failed} of {total} coreset evaluations failed; aborting (partial artifacts kept)")]
    TooManyFailures { failed: usize, total: usize },
    #[error("artifact integrity violated: {detail}")]
    Integrity { detail: String },
    #[error("missing artifact: {path}")]
    MissingArtifact { path: PathBuf },
}

/// What the surrogate is trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    /// Composite of metrics min-max normalized within the coreset — the only
    /// labeled population available at fit time. Selection re-normalizes
    /// over the full evaluated union later.
    #[default]
    CoresetMinMax,
    /// Composite of orientation-folded raw metrics, no normalization.
    RawL2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Synthetic {
        #[serde(default)]
        eta: f64,
        #[serde(default)]
        sigma: f64,
        #[serde(default)]
        seed: u64,
        /// Simulated per-evaluation latency; exercises the parallel pool.
        #[serde(default)]
        delay_ms: u64,
    },
    External {
        command: String,
        #[serde(default = "default_retries")]
        retries: u32,
        #[serde(default = "default_timeout_s")]
        timeout_s: f64,
    },
}

fn default_retries() -> u32 {
    2
}

fn default_timeout_s() -> f64 {
    600.0
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Synthetic { eta: 0.1, sigma: 0.02, seed: 7, delay_ms: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub netlist_path: PathBuf,
    pub sa: SaConfig,
    /// Coreset weight threshold 𝒯 (strict).
    pub threshold: f64,
    pub min_coreset: usize,
    pub verify_k: usize,
    pub verification_rule: VerificationRule,
    pub label_mode: LabelMode,
    pub backend: BackendSpec,
    pub preference: Preference,
    pub seeds: Vec<u64>,
    pub max_parallel_evals: usize,
    pub output_dir: PathBuf,
    /// Budgets for `budget_sweep`, as fractions of the candidate count.
    pub sweep_fractions: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            netlist_path: PathBuf::from("netlist.nl"),
            sa: SaConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            min_coreset: DEFAULT_MIN_CORESET,
            verify_k: 10,
            verification_rule: VerificationRule::default(),
            label_mode: LabelMode::default(),
            backend: BackendSpec::default(),
            preference: Preference::Balanced,
            seeds: vec![0],
            max_parallel_evals: 4,
            output_dir: PathBuf::from("dopp-run"),
            sweep_fractions: vec![0.01, 0.05, 0.10, 0.20, 0.30, 0.40, 0.50, 0.60, 1.0],
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |detail: String| PipelineError::InvalidConfig { detail };
        self.sa.validate().map_err(|e| invalid(e.to_string()))?;
        if self.max_parallel_evals == 0 {
            return Err(invalid("max_parallel_evals must be at least 1".into()));
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return Err(invalid(format!("threshold must be finite and >= 0, got {}", self.threshold)));
        }
        for &f in &self.sweep_fractions {
            if !(f.is_finite() && f > 0.0 && f <= 1.0) {
                return Err(invalid(format!("sweep fraction {f} outside (0, 1]")));
            }
        }
        if let BackendSpec::External { command, timeout_s, .. } = &self.backend {
            if !command.contains("{input}") || !command.contains("{output}") {
                return Err(invalid("external command must contain {input} and {output}".into()));
            }
            if !(timeout_s.is_finite() && *timeout_s > 0.0) {
                return Err(invalid(format!("timeout_s must be positive, got {timeout_s}")));
            }
        }
        Ok(())
    }

    fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// In-memory outcome of one full run. The deterministic subset is persisted
/// as `report.json`; timings and other run-variant facts go to `meta.json`.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub design_name: String,
    pub candidate_count: usize,
    pub coreset_size: usize,
    pub verified_count: usize,
    /// = coreset_size + verified_count; counts attempts, including failures.
    pub total_evaluations: usize,
    pub failed_uids: Vec<u64>,
    pub best_uid: u64,
    pub best_cost: f64,
    pub best_record: PpaRecord,
    pub coreset_uids: Vec<u64>,
    pub verified_uids: Vec<u64>,
    pub surrogate_order: Vec<u64>,
    pub design_gap: f64,
    pub design_converged: bool,
    pub support_size: usize,
    pub fit_residual_max: f64,
    pub timings: StageTimings,
    /// Σ per-evaluation wall seconds — the serial-cost estimate.
    pub cpu_seconds: f64,
    pub run_dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BestDoc {
    pub uid: u64,
    pub cost: f64,
    pub backend: String,
    pub metrics: BTreeMap<String, f64>,
}

/// The byte-deterministic persisted view of a run.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReportDoc {
    pub schema_version: u32,
    pub design: String,
    pub candidate_count: usize,
    pub coreset_size: usize,
    pub verified_count: usize,
    pub total_evaluations: usize,
    pub failed_uids: Vec<u64>,
    pub threshold: f64,
    pub min_coreset: usize,
    pub verify_k: usize,
    pub preference: Preference,
    pub label_mode: LabelMode,
    pub design_gap: f64,
    pub design_converged: bool,
    pub support_size: usize,
    pub fit_residual_max: f64,
    pub coreset_uids: Vec<u64>,
    pub verified_uids: Vec<u64>,
    pub best: BestDoc,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelDoc {
    pub schema_version: u32,
    pub label_mode: LabelMode,
    /// Feature dimension before the intercept column.
    pub feature_dim: usize,
    pub intercept: bool,
    pub model: crate::surrogate::SurrogateModel,
}

pub(crate) fn build_backend(
    spec: &BackendSpec,
    netlist_path: &std::path::Path,
    feature_dim: usize,
    schema: &MetricSchema,
    workdir: &std::path::Path,
) -> Result<Arc<dyn EvalBackend>, PipelineError> {
    match spec {
        BackendSpec::Synthetic { eta, sigma, seed, delay_ms } => {
            let oracle = SyntheticOracle::new(
                OracleConfig::correlated(feature_dim, schema, *seed, *eta, *sigma),
                schema.clone(),
            );
            let oracle = if *delay_ms > 0 {
                oracle.with_delay(Duration::from_millis(*delay_ms))
            } else {
                oracle
            };
            Ok(Arc::new(oracle))
        }
        BackendSpec::External { command, retries, timeout_s } => {
            let backend = ExternalCommand::new(command.clone(), netlist_path, schema.clone())?
                .with_retries(*retries)
                .with_timeout(Duration::from_secs_f64(*timeout_s))
                .with_workdir(workdir);
            Ok(Arc::new(backend))
        }
    }
}

/// Composite costs after preference-weighted normalization over exactly the
/// given records, in input order.
pub fn composite_costs(
    records: &[PpaRecord],
    schema: &MetricSchema,
) -> Result<Vec<(u64, f64)>, PipelineError> {
    let normalized = normalize_metrics(records, schema)?;
    let costs = normalized.costs();
    Ok(records.iter().zip(costs).map(|(r, c)| (r.candidate_uid, c)).collect())
}

/// Normalizes over the evaluated records under the schema's active
/// preference and returns the cheapest (ties: lower uid).
pub fn select_final(
    records: &[PpaRecord],
    schema: &MetricSchema,
) -> Result<(u64, f64), PipelineError> {
    let mut sorted: Vec<PpaRecord> = records.to_vec();
    sorted.sort_by_key(|r| r.candidate_uid);
    let costs = composite_costs(&sorted, schema)?;
    let mut best = costs[0];
    for &(uid, cost) in &costs[1..] {
        if cost < best.1 {
            best = (uid, cost);
        }
    }
    Ok(best)
}

/// Surrogate training labels for the given records (callers pass them uid-sorted).
fn training_labels(
    records: &[PpaRecord],
    schema: &MetricSchema,
    mode: LabelMode,
) -> Result<Vec<f64>, PipelineError> {
    match mode {
        LabelMode::CoresetMinMax => {
            let normalized = normalize_metrics(records, schema)?;
            Ok(normalized.costs())
        }
        LabelMode::RawL2 => Ok(records
            .iter()
            .map(|record| {
                let folded: Vec<f64> = schema
                    .metrics()
                    .iter()
                    .map(|def| {
                        let raw = record.metrics[&def.name];
                        match def.orientation {
                            Orientation::LowerIsBetter => raw,
                            Orientation::HigherIsBetter => -raw,
                        }
                    })
                    .collect();
                composite_cost(&folded)
            })
            .collect()),
    }
}

pub fn run_dopp(config: &PipelineConfig) -> Result<RunReport, PipelineError> {
    run_dopp_with(config, None)
}

/// Full pipeline as the staged composition; `backend_override` substitutes
/// the evaluator (used by tests to inject delays or failures) while keeping
/// every other stage.
///
/// `fit` already pulls the coreset through the evaluation cache, so the flow
/// is generate → design → fit → select; a separate `evaluate` pass would be
/// pure cache hits.
pub fn run_dopp_with(
    config: &PipelineConfig,
    backend_override: Option<Arc<dyn EvalBackend>>,
) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let mut timings = StageTimings::default();

    let stage = Instant::now();
    stage_generate(config)?;
    timings.anneal_s = stage.elapsed().as_secs_f64();

    let stage = Instant::now();
    stage_design(config)?;
    timings.design_s = stage.elapsed().as_secs_f64();

    let stage = Instant::now();
    let fit = stage_fit(config, backend_override.clone())?;
    timings.coreset_eval_s = fit.eval_wall_s;
    timings.fit_s = (stage.elapsed().as_secs_f64() - fit.eval_wall_s).max(0.0);

    stage_select(config, backend_override, timings)
}

/// Loads a run directory for reporting: integrity-checks every digested
/// artifact, then returns the deterministic report and the metadata.
pub fn load_run(run_dir: &std::path::Path) -> Result<(ReportDoc, MetaDoc), PipelineError> {
    let meta = verify_artifacts(run_dir)?;
    let report: ReportDoc = artifacts::read_json(&run_dir.join(REPORT_FILE))?;
    let (header, candidates) = artifacts::read_candidates(run_dir)?;
    if header.count != report.candidate_count || candidates.len() != report.candidate_count {
        return Err(PipelineError::Integrity {
            detail: format!(
                "candidate count mismatch: report says {}, artifacts hold {}",
                report.candidate_count,
                candidates.len()
            ),
        });
    }
    Ok((report, meta))
}
