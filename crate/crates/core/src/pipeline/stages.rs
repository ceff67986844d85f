//! The pipeline as restartable stages. Each stage reads its inputs from the
//! run directory and writes its outputs back there, so any prefix of the
//! flow can be re-driven (or inspected) from disk alone; `run` is just the
//! composition. Evaluations go through the persistent cache, which makes
//! re-entry free.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::anneal::{anneal, Candidate};
use crate::design::{
    extract_coreset, solve_doptimal, CoresetSelection, DesignWeights, DEFAULT_MAX_ITERATIONS,
    DEFAULT_TOLERANCE,
};
use crate::eval::{EvalBackend, MetricSchema, PpaRecord};
use crate::netlist::{parse_netlist, serialize_netlist, Netlist};
use crate::surrogate::{augment_intercept, fit_wls, rank_candidates, verification_set};

use super::artifacts::{
    assignment_digest, netlist_digest, read_candidates, read_json, read_text, write_candidates,
    write_json, write_meta, write_text, EvalCache, MetaDoc, StageTimings, WeightEntry, WeightsDoc,
    MODEL_FILE, NETLIST_FILE, REPORT_FILE, SCHEMA_VERSION, WEIGHTS_FILE,
};
use super::{
    build_backend, select_final, training_labels, BestDoc, ModelDoc, PipelineConfig,
    PipelineError, ReportDoc, RunReport,
};

/// Everything later stages need from the artifacts written by `generate`.
pub(crate) struct RunContext {
    pub run_dir: PathBuf,
    pub netlist: Netlist,
    pub nl_digest: String,
    pub candidates: Vec<Candidate>,
    pub uids: Vec<u64>,
    pub feature_dim: usize,
    /// Candidate features with the intercept column appended, row per uid.
    pub features: DMatrix<f64>,
}

impl RunContext {
    pub fn load(config: &PipelineConfig) -> Result<RunContext, PipelineError> {
        let run_dir = config.output_dir.clone();
        let netlist = parse_netlist(&read_text(&run_dir.join(NETLIST_FILE))?)?;
        let (header, candidates) = read_candidates(&run_dir)?;
        if candidates.is_empty() {
            return Err(PipelineError::EmptyCandidates);
        }
        let uids: Vec<u64> = candidates.iter().map(|c| c.uid).collect();
        if !uids.windows(2).all(|w| w[0] < w[1]) {
            return Err(PipelineError::Integrity {
                detail: "candidate uids must be strictly increasing".into(),
            });
        }
        let feature_dim = header.feature_dim;
        for candidate in &candidates {
            if candidate.features.dim() != feature_dim {
                return Err(PipelineError::Integrity {
                    detail: format!(
                        "candidate {} has {} features, header promises {feature_dim}",
                        candidate.uid,
                        candidate.features.dim()
                    ),
                });
            }
        }
        let raw = DMatrix::from_fn(candidates.len(), feature_dim, |r, c| {
            candidates[r].features.as_slice()[c]
        });
        let features = augment_intercept(&raw);
        let nl_digest = netlist_digest(&netlist);
        Ok(RunContext { run_dir, netlist, nl_digest, candidates, uids, feature_dim, features })
    }

    pub fn row_of(&self, uid: u64) -> usize {
        self.uids.binary_search(&uid).expect("uid comes from this candidate set")
    }

    pub fn by_uid(&self) -> BTreeMap<u64, &Candidate> {
        self.candidates.iter().map(|c| (c.uid, c)).collect()
    }

    /// Design weights read back from `weights.json`, aligned to candidate rows.
    pub fn load_design(&self) -> Result<DesignWeights, PipelineError> {
        let doc: WeightsDoc = read_json(&self.run_dir.join(WEIGHTS_FILE))?;
        if doc.weights.len() != self.uids.len()
            || doc.weights.iter().zip(&self.uids).any(|(entry, &uid)| entry.uid != uid)
        {
            return Err(PipelineError::Integrity {
                detail: "weights.json does not cover this candidate set".into(),
            });
        }
        Ok(DesignWeights {
            weights: doc.weights.iter().map(|entry| entry.weight).collect(),
            gap: doc.gap,
            log_det: doc.log_det.unwrap_or(f64::NEG_INFINITY),
            iterations: doc.iterations,
            ridge: doc.ridge,
            converged: doc.converged,
            support_size: doc.support_size,
        })
    }

    pub fn coreset(
        &self,
        design: &DesignWeights,
        config: &PipelineConfig,
    ) -> Result<CoresetSelection, PipelineError> {
        Ok(extract_coreset(design, &self.uids, config.threshold, config.min_coreset)?)
    }

    pub fn backend(
        &self,
        config: &PipelineConfig,
        backend_override: Option<Arc<dyn EvalBackend>>,
        schema: &MetricSchema,
    ) -> Result<Arc<dyn EvalBackend>, PipelineError> {
        match backend_override {
            Some(backend) => Ok(backend),
            None => build_backend(
                &config.backend,
                &self.run_dir.join(NETLIST_FILE),
                self.feature_dim,
                schema,
                &self.run_dir.join("evals"),
            ),
        }
    }
}

pub(crate) struct EvalOutcome {
    pub records: BTreeMap<u64, PpaRecord>,
    pub failed: Vec<u64>,
    pub cache_hits: usize,
    pub wall_s: f64,
}

/// Evaluates the given uids through the cache + bounded pool. Fresh results
/// are appended to the persistent log; failures are collected, not fatal.
pub(crate) fn evaluate_uids(
    uids: &[u64],
    ctx: &RunContext,
    backend: &dyn EvalBackend,
    cache: &mut EvalCache,
    max_parallel: usize,
) -> Result<EvalOutcome, PipelineError> {
    let start = Instant::now();
    let by_uid = ctx.by_uid();
    let tag = backend.tag();
    let mut records = BTreeMap::new();
    let mut fresh: Vec<&Candidate> = Vec::new();
    let mut digests: BTreeMap<u64, String> = BTreeMap::new();
    for &uid in uids {
        let candidate = by_uid[&uid];
        let digest = assignment_digest(&candidate.partition);
        match cache.get(&ctx.nl_digest, &digest, &tag, uid) {
            Some(record) => {
                records.insert(uid, record);
            }
            None => {
                fresh.push(candidate);
                digests.insert(uid, digest);
            }
        }
    }
    let cache_hits = uids.len() - fresh.len();

    let mut failed = Vec::new();
    for (uid, outcome) in super::parallel::evaluate_batch(backend, &ctx.netlist, &fresh, max_parallel)
    {
        match outcome {
            Ok(record) => {
                cache.insert(&ctx.nl_digest, &digests[&uid], record.clone())?;
                records.insert(uid, record);
            }
            Err(_) => failed.push(uid),
        }
    }
    Ok(EvalOutcome { records, failed, cache_hits, wall_s: start.elapsed().as_secs_f64() })
}

/// Surrogate quality is indefensible when a fifth of its training set is
/// missing; everything that did succeed is already persisted by then.
fn check_failure_budget(outcome: &EvalOutcome, requested: usize) -> Result<(), PipelineError> {
    if !outcome.failed.is_empty() && outcome.failed.len() * 5 >= requested {
        return Err(PipelineError::TooManyFailures {
            failed: outcome.failed.len(),
            total: requested,
        });
    }
    Ok(())
}

// ---- generate ----

#[derive(Debug, Clone, Copy)]
pub struct GenerateOutcome {
    pub candidate_count: usize,
    pub feature_dim: usize,
}

/// Search stage: netlist → annealed candidate archive, persisted.
pub fn stage_generate(config: &PipelineConfig) -> Result<GenerateOutcome, PipelineError> {
    config.validate()?;
    let netlist = parse_netlist(&read_text(&config.netlist_path)?)?;
    let run_dir = &config.output_dir;
    std::fs::create_dir_all(run_dir)
        .map_err(|e| PipelineError::Io { path: run_dir.clone(), detail: e.to_string() })?;
    write_text(&run_dir.join(NETLIST_FILE), &serialize_netlist(&netlist))?;
    let candidates = anneal(&netlist, &config.sa);
    if candidates.is_empty() {
        return Err(PipelineError::EmptyCandidates);
    }
    let feature_dim = candidates[0].features.dim();
    write_candidates(run_dir, &netlist, &candidates, feature_dim)?;
    Ok(GenerateOutcome { candidate_count: candidates.len(), feature_dim })
}

// ---- design ----

#[derive(Debug, Clone, Copy)]
pub struct DesignOutcome {
    pub gap: f64,
    pub log_det: f64,
    pub iterations: usize,
    pub converged: bool,
    pub support_size: usize,
}

/// Design stage: candidate features → optimal sampling weights, persisted.
pub fn stage_design(config: &PipelineConfig) -> Result<DesignOutcome, PipelineError> {
    config.validate()?;
    let ctx = RunContext::load(config)?;
    let design = solve_doptimal(&ctx.features, DEFAULT_TOLERANCE, DEFAULT_MAX_ITERATIONS)?;
    write_json(
        &ctx.run_dir.join(WEIGHTS_FILE),
        &WeightsDoc {
            schema_version: SCHEMA_VERSION,
            iterations: design.iterations,
            gap: design.gap,
            ridge: design.ridge,
            converged: design.converged,
            support_size: design.support_size,
            log_det: design.log_det.is_finite().then_some(design.log_det),
            weights: ctx
                .uids
                .iter()
                .zip(&design.weights)
                .map(|(&uid, &weight)| WeightEntry { uid, weight })
                .collect(),
        },
    )?;
    Ok(DesignOutcome {
        gap: design.gap,
        log_det: design.log_det,
        iterations: design.iterations,
        converged: design.converged,
        support_size: design.support_size,
    })
}

// ---- evaluate ----

#[derive(Debug)]
pub struct EvaluateOutcome {
    pub requested: Vec<u64>,
    pub succeeded: usize,
    pub failed: Vec<u64>,
    pub cache_hits: usize,
    pub wall_s: f64,
}

/// Evaluation stage: the coreset (default) or an explicit uid list, through
/// the cache. The ≥20% failure abort applies only to coreset evaluation —
/// an explicit list is the operator's own business.
pub fn stage_evaluate(
    config: &PipelineConfig,
    explicit_uids: Option<&[u64]>,
    backend_override: Option<Arc<dyn EvalBackend>>,
) -> Result<EvaluateOutcome, PipelineError> {
    config.validate()?;
    let ctx = RunContext::load(config)?;
    let coreset_mode = explicit_uids.is_none();
    let targets: Vec<u64> = match explicit_uids {
        Some(uids) => {
            for &uid in uids {
                if ctx.uids.binary_search(&uid).is_err() {
                    return Err(PipelineError::InvalidConfig {
                        detail: format!("uid {uid} is not in the candidate set"),
                    });
                }
            }
            uids.to_vec()
        }
        None => {
            let design = ctx.load_design()?;
            ctx.coreset(&design, config)?.indices
        }
    };
    let schema = MetricSchema::default_ppa();
    let backend = ctx.backend(config, backend_override, &schema)?;
    let mut cache = EvalCache::open(&ctx.run_dir)?;
    let outcome =
        evaluate_uids(&targets, &ctx, backend.as_ref(), &mut cache, config.max_parallel_evals)?;
    if coreset_mode {
        check_failure_budget(&outcome, targets.len())?;
    }
    Ok(EvaluateOutcome {
        succeeded: outcome.records.len(),
        failed: outcome.failed,
        cache_hits: outcome.cache_hits,
        wall_s: outcome.wall_s,
        requested: targets,
    })
}

// ---- fit ----

#[derive(Debug)]
pub struct FitOutcome {
    pub training_rows: usize,
    pub fit_residual_max: f64,
    pub failed: Vec<u64>,
    pub eval_wall_s: f64,
}

/// Fit stage: labels the evaluated coreset and trains the surrogate,
/// persisted as `model.json`. Coreset records come from the cache (free
/// after `evaluate`; evaluated on the spot otherwise).
pub fn stage_fit(
    config: &PipelineConfig,
    backend_override: Option<Arc<dyn EvalBackend>>,
) -> Result<FitOutcome, PipelineError> {
    config.validate()?;
    let ctx = RunContext::load(config)?;
    let design = ctx.load_design()?;
    let coreset = ctx.coreset(&design, config)?;
    let schema = MetricSchema::default_ppa();
    let backend = ctx.backend(config, backend_override, &schema)?;
    let mut cache = EvalCache::open(&ctx.run_dir)?;
    let outcome = evaluate_uids(
        &coreset.indices,
        &ctx,
        backend.as_ref(),
        &mut cache,
        config.max_parallel_evals,
    )?;
    check_failure_budget(&outcome, coreset.indices.len())?;

    // BTreeMap iteration gives ascending uid: rows, weights and labels align
    let labeled_uids: Vec<u64> = outcome.records.keys().cloned().collect();
    let label_records: Vec<PpaRecord> = outcome.records.values().cloned().collect();
    let labels = training_labels(&label_records, &schema, config.label_mode)?;
    let fit_features = DMatrix::from_fn(labeled_uids.len(), ctx.features.ncols(), |r, c| {
        ctx.features[(ctx.row_of(labeled_uids[r]), c)]
    });
    let fit_weights: Vec<f64> =
        labeled_uids.iter().map(|&uid| design.weights[ctx.row_of(uid)]).collect();
    let model = fit_wls(&fit_features, &fit_weights, &labels, &labeled_uids)?;
    let fit_residual_max = model.fit_residual_max;
    write_json(
        &ctx.run_dir.join(MODEL_FILE),
        &ModelDoc {
            schema_version: SCHEMA_VERSION,
            label_mode: config.label_mode,
            feature_dim: ctx.feature_dim,
            intercept: true,
            model,
        },
    )?;
    Ok(FitOutcome {
        training_rows: labeled_uids.len(),
        fit_residual_max,
        failed: outcome.failed,
        eval_wall_s: outcome.wall_s,
    })
}

// ---- select ----

/// Final stage: ranks every candidate with the fitted surrogate, evaluates
/// the verification picks, and selects the best evaluated candidate under
/// the preference. Writes `report.json`, then `meta.json` over everything.
///
/// `base_timings` carries whatever earlier stages measured; this stage fills
/// in its own fields and totals them.
pub fn stage_select(
    config: &PipelineConfig,
    backend_override: Option<Arc<dyn EvalBackend>>,
    base_timings: StageTimings,
) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let mut timings = base_timings;
    let ctx = RunContext::load(config)?;
    let design = ctx.load_design()?;
    let coreset = ctx.coreset(&design, config)?;
    let model_doc: ModelDoc = read_json(&ctx.run_dir.join(MODEL_FILE))?;
    if model_doc.feature_dim != ctx.feature_dim {
        return Err(PipelineError::Integrity {
            detail: format!(
                "model expects {} features, candidates carry {}",
                model_doc.feature_dim, ctx.feature_dim
            ),
        });
    }
    let schema = MetricSchema::default_ppa();
    let backend = ctx.backend(config, backend_override, &schema)?;
    let mut cache = EvalCache::open(&ctx.run_dir)?;

    // coreset records: cache hits when `evaluate`/`fit` already ran
    let coreset_outcome = evaluate_uids(
        &coreset.indices,
        &ctx,
        backend.as_ref(),
        &mut cache,
        config.max_parallel_evals,
    )?;
    timings.coreset_eval_s += coreset_outcome.wall_s;
    check_failure_budget(&coreset_outcome, coreset.indices.len())?;
    let mut failed_uids = coreset_outcome.failed.clone();

    let stage = Instant::now();
    let surrogate_order = rank_candidates(&model_doc.model, &ctx.features, &ctx.uids)?;
    let verify_uids = verification_set(
        &surrogate_order,
        &coreset.indices,
        config.verify_k,
        config.verification_rule,
    );
    timings.rank_s = stage.elapsed().as_secs_f64();

    let verify_outcome = evaluate_uids(
        &verify_uids,
        &ctx,
        backend.as_ref(),
        &mut cache,
        config.max_parallel_evals,
    )?;
    timings.verify_eval_s = verify_outcome.wall_s;
    failed_uids.extend(verify_outcome.failed.iter().cloned());

    let stage = Instant::now();
    let mut evaluated: Vec<PpaRecord> = coreset_outcome.records.values().cloned().collect();
    evaluated.extend(verify_outcome.records.values().cloned());
    let preference_schema = schema.with_preference(&config.preference)?;
    let (best_uid, best_cost) = select_final(&evaluated, &preference_schema)?;
    let best_record = evaluated
        .iter()
        .find(|r| r.candidate_uid == best_uid)
        .expect("argmin picked from the evaluated set")
        .clone();
    timings.select_s = stage.elapsed().as_secs_f64();

    let cpu_seconds: f64 = evaluated.iter().map(|r| r.wall_seconds).sum();
    timings.total_s = timings.anneal_s
        + timings.design_s
        + timings.coreset_eval_s
        + timings.fit_s
        + timings.rank_s
        + timings.verify_eval_s
        + timings.select_s;

    let report = RunReport {
        design_name: ctx.netlist.name().to_string(),
        candidate_count: ctx.candidates.len(),
        coreset_size: coreset.indices.len(),
        verified_count: verify_uids.len(),
        total_evaluations: coreset.indices.len() + verify_uids.len(),
        failed_uids: failed_uids.clone(),
        best_uid,
        best_cost,
        best_record: best_record.clone(),
        coreset_uids: coreset.indices.clone(),
        verified_uids: verify_uids.clone(),
        surrogate_order,
        design_gap: design.gap,
        design_converged: design.converged,
        support_size: design.support_size,
        fit_residual_max: model_doc.model.fit_residual_max,
        timings: timings.clone(),
        cpu_seconds,
        run_dir: ctx.run_dir.clone(),
    };

    write_json(
        &ctx.run_dir.join(REPORT_FILE),
        &ReportDoc {
            schema_version: SCHEMA_VERSION,
            design: report.design_name.clone(),
            candidate_count: report.candidate_count,
            coreset_size: report.coreset_size,
            verified_count: report.verified_count,
            total_evaluations: report.total_evaluations,
            failed_uids,
            threshold: config.threshold,
            min_coreset: config.min_coreset,
            verify_k: config.verify_k,
            preference: config.preference.clone(),
            label_mode: config.label_mode,
            design_gap: report.design_gap,
            design_converged: report.design_converged,
            support_size: report.support_size,
            fit_residual_max: report.fit_residual_max,
            coreset_uids: report.coreset_uids.clone(),
            verified_uids: report.verified_uids.clone(),
            best: BestDoc {
                uid: best_uid,
                cost: best_cost,
                backend: best_record.backend.clone(),
                metrics: best_record.metrics.clone(),
            },
        },
    )?;
    write_meta(
        &ctx.run_dir,
        MetaDoc {
            schema_version: SCHEMA_VERSION,
            created_unix_ms: super::artifacts::now_unix_ms(),
            host_os: std::env::consts::OS.to_string(),
            host_arch: std::env::consts::ARCH.to_string(),
            netlist_digest: ctx.nl_digest.clone(),
            config_digest: config.digest(),
            backend_tag: backend.tag(),
            timings,
            cpu_seconds,
            artifact_digests: BTreeMap::new(),
        },
    )?;
    Ok(report)
}
