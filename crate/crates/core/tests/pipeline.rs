//! End-to-end runs over a synthetic world, plus the artifact/cache layer
//! behaviors that only show up across whole runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dopp_core::anneal::SaConfig;
use dopp_core::eval::{EvalBackend, MetricSchema, Preference};
use dopp_core::netlist::serialize_netlist;
use dopp_core::pipeline::artifacts::{
    read_json, EVALUATIONS_FILE, META_FILE, REPORT_FILE,
};
use dopp_core::pipeline::{
    budget_sweep, load_run, multi_seed, run_dopp, run_dopp_with, verify_artifacts, BackendSpec,
    PipelineConfig, PipelineError, ReportDoc,
};
use dopp_core::synth::SynthConfig;

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dopp-test-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_world(dir: &Path, seed: u64) -> PathBuf {
    let netlist = SynthConfig {
        macros: 14,
        logic: 120,
        nets: 160,
        clusters: 3,
        seed,
        ..SynthConfig::default()
    }
    .generate();
    let path = dir.join("world.nl");
    fs::write(&path, serialize_netlist(&netlist)).unwrap();
    path
}

fn small_config(dir: &Path, netlist: PathBuf) -> PipelineConfig {
    PipelineConfig {
        netlist_path: netlist,
        sa: SaConfig { iterations: 3000, seed: 11, ..SaConfig::default() },
        verify_k: 5,
        min_coreset: 8,
        backend: BackendSpec::Synthetic { eta: 0.1, sigma: 0.02, seed: 7, delay_ms: 0 },
        output_dir: dir.join("run"),
        ..PipelineConfig::default()
    }
}

#[test]
fn full_run_produces_consistent_artifacts() {
    let dir = scratch("smoke");
    let config = small_config(&dir, write_world(&dir, 5));
    let report = run_dopp(&config).unwrap();

    assert!(report.candidate_count > 20);
    assert_eq!(report.coreset_size, report.coreset_uids.len());
    assert_eq!(report.verified_count, report.verified_uids.len());
    assert_eq!(
        report.total_evaluations,
        report.coreset_size + report.verified_count
    );
    assert!(report.failed_uids.is_empty());
    assert!(report.best_cost.is_finite() && report.best_cost >= 0.0);
    // the winner really was evaluated
    assert!(
        report.coreset_uids.contains(&report.best_uid)
            || report.verified_uids.contains(&report.best_uid)
    );
    // verification never re-pays for coreset members
    assert!(report.verified_uids.iter().all(|uid| !report.coreset_uids.contains(uid)));
    assert!(report.design_converged);
    assert!(report.fit_residual_max.is_finite());

    // artifacts round-trip and pass the integrity check
    let (doc, meta) = load_run(&report.run_dir).unwrap();
    assert_eq!(doc.best.uid, report.best_uid);
    assert_eq!(doc.candidate_count, report.candidate_count);
    assert_eq!(meta.backend_tag, doc.best.backend);
    assert!(meta.artifact_digests.len() >= 6);

    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn identical_configs_reproduce_report_bytes_and_reuse_the_cache() {
    let dir = scratch("determinism");
    let netlist = write_world(&dir, 9);

    let mut config_a = small_config(&dir, netlist.clone());
    config_a.output_dir = dir.join("run-a");
    let mut config_b = config_a.clone();
    config_b.output_dir = dir.join("run-b");

    let report_a = run_dopp(&config_a).unwrap();
    let report_b = run_dopp(&config_b).unwrap();
    assert_eq!(report_a.best_uid, report_b.best_uid);
    assert_eq!(report_a.best_cost, report_b.best_cost);

    let bytes_a = fs::read(config_a.output_dir.join(REPORT_FILE)).unwrap();
    let bytes_b = fs::read(config_b.output_dir.join(REPORT_FILE)).unwrap();
    assert_eq!(bytes_a, bytes_b, "report.json must not depend on the output path");

    // a re-run over the same directory answers everything from the cache
    let evals_before = fs::read_to_string(config_a.output_dir.join(EVALUATIONS_FILE)).unwrap();
    let report_again = run_dopp(&config_a).unwrap();
    let evals_after = fs::read_to_string(config_a.output_dir.join(EVALUATIONS_FILE)).unwrap();
    assert_eq!(evals_before, evals_after, "cached evaluations must not be re-run or re-logged");
    assert_eq!(report_again.best_uid, report_a.best_uid);

    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn tampered_artifacts_fail_verification() {
    let dir = scratch("tamper");
    let config = small_config(&dir, write_world(&dir, 13));
    let report = run_dopp(&config).unwrap();
    verify_artifacts(&report.run_dir).unwrap();

    let report_path = report.run_dir.join(REPORT_FILE);
    let mut doc: ReportDoc = read_json(&report_path).unwrap();
    doc.best.cost *= 0.5;
    fs::write(&report_path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    match verify_artifacts(&report.run_dir) {
        Err(PipelineError::Integrity { detail }) => assert!(detail.contains(REPORT_FILE)),
        other => panic!("expected an integrity error, got {other:?}"),
    }

    // a missing artifact is the other detectable failure
    let run2 = dir.join("run2");
    let mut config2 = config.clone();
    config2.output_dir = run2.clone();
    run_dopp(&config2).unwrap();
    fs::remove_file(run2.join(EVALUATIONS_FILE)).unwrap();
    assert!(matches!(
        verify_artifacts(&run2),
        Err(PipelineError::MissingArtifact { .. })
    ));

    fs::remove_dir_all(&dir).unwrap();
}

/// Fails every candidate whose uid satisfies a predicate; everything else is
/// delegated to the real oracle.
struct FailSome {
    inner: Arc<dyn EvalBackend>,
    fail_if: fn(u64) -> bool,
}

impl EvalBackend for FailSome {
    fn evaluate(
        &self,
        netlist: &dopp_core::Netlist,
        candidate: &dopp_core::Candidate,
    ) -> Result<dopp_core::PpaRecord, dopp_core::eval::EvalError> {
        if (self.fail_if)(candidate.uid) {
            return Err(dopp_core::eval::EvalError::CommandFailed {
                uid: candidate.uid,
                attempts: 1,
                detail: "injected failure".into(),
            });
        }
        self.inner.evaluate(netlist, candidate)
    }

    fn tag(&self) -> String {
        self.inner.tag()
    }
}

fn synthetic_backend(dim: usize) -> Arc<dyn EvalBackend> {
    use dopp_core::eval::{OracleConfig, SyntheticOracle};
    let schema = MetricSchema::default_ppa();
    Arc::new(SyntheticOracle::new(
        OracleConfig::correlated(dim, &schema, 7, 0.1, 0.02),
        schema,
    ))
}

#[test]
fn sparse_failures_are_recorded_but_not_fatal() {
    let dir = scratch("failures");
    let config = small_config(&dir, write_world(&dir, 21));
    // feature dim for this world: 7 global features + 3 cluster cohesions
    let backend = Arc::new(FailSome {
        inner: synthetic_backend(10),
        fail_if: |uid| uid % 17 == 3,
    });
    let report = run_dopp_with(&config, Some(backend)).unwrap();
    assert!(!report.failed_uids.is_empty(), "the predicate should hit at least one uid");
    assert!(report.failed_uids.iter().all(|&uid| uid % 17 == 3));
    assert!(!report.failed_uids.contains(&report.best_uid));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn overwhelming_failures_abort_but_keep_successes() {
    let dir = scratch("abort");
    let config = small_config(&dir, write_world(&dir, 22));
    let backend = Arc::new(FailSome {
        inner: synthetic_backend(10),
        fail_if: |uid| uid % 2 == 0,
    });
    match run_dopp_with(&config, Some(backend)) {
        Err(PipelineError::TooManyFailures { failed, total }) => {
            assert!(failed * 5 >= total, "{failed}/{total} should cross the 20% line");
        }
        other => panic!("expected TooManyFailures, got {other:?}"),
    }
    // the successes that did come back were persisted before the abort
    let evals = fs::read_to_string(config.output_dir.join(EVALUATIONS_FILE)).unwrap();
    assert!(evals.lines().count() > 1, "header plus at least one success");
    assert!(!config.output_dir.join(META_FILE).exists(), "no meta for an aborted run");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn sweep_curve_is_monotone_and_ends_exhaustive() {
    let dir = scratch("sweep");
    let mut config = small_config(&dir, write_world(&dir, 33));
    config.output_dir = dir.join("sweep-run");
    config.sweep_fractions = vec![0.05, 0.25, 0.5, 1.0];
    let sweep = budget_sweep(&config).unwrap();

    assert_eq!(sweep.points.len(), 4);
    assert!(sweep.failed_uids.is_empty());
    let costs: Vec<f64> = sweep.points.iter().map(|p| p.best_cost.unwrap()).collect();
    for pair in costs.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-12, "curve must be non-increasing: {costs:?}");
    }
    let last = sweep.points.last().unwrap();
    assert_eq!(last.evaluations, sweep.candidate_count, "fraction 1.0 is exhaustive");
    assert!(sweep.points[0].evaluations >= 10.min(sweep.candidate_count));

    // evaluations.ndjson holds exactly the exhaustive set: one line per
    // candidate plus the header
    let evals =
        fs::read_to_string(sweep.run_dir.join(EVALUATIONS_FILE)).unwrap();
    assert_eq!(evals.lines().count(), sweep.candidate_count + 1);

    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn multi_seed_runs_both_arms_at_matched_budget() {
    let dir = scratch("seeds");
    let mut config = small_config(&dir, write_world(&dir, 44));
    config.output_dir = dir.join("seeds-run");
    config.seeds = vec![1, 2];
    config.sa.iterations = 1500;
    let outcome = multi_seed(&config).unwrap();

    assert_eq!(outcome.per_seed.len(), 2);
    for seed_outcome in &outcome.per_seed {
        let report_path = config
            .output_dir
            .join(format!("seed-{}", seed_outcome.seed))
            .join(REPORT_FILE);
        let doc: ReportDoc = read_json(&report_path).unwrap();
        assert_eq!(doc.total_evaluations, seed_outcome.evaluations);
        assert_eq!(doc.best.uid, seed_outcome.dopp.uid);
        assert!(seed_outcome.random.cost.is_finite());
        assert_eq!(seed_outcome.dopp.metrics.len(), 5);
        assert_eq!(seed_outcome.random.metrics.len(), 5);
    }
    for summary in [&outcome.dopp_summary, &outcome.random_summary] {
        assert_eq!(summary.len(), 5);
        for stat in summary.values() {
            assert!(stat.min <= stat.median && stat.median <= stat.max);
        }
    }
    assert!(config.output_dir.join("seeds_summary.json").exists());

    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn preference_is_a_final_stage_knob() {
    // same world, same search, different preference: the pipeline may pick a
    // different winner, but candidates/weights/model artifacts are identical
    let dir = scratch("preference");
    let netlist = write_world(&dir, 55);

    let mut balanced = small_config(&dir, netlist.clone());
    balanced.output_dir = dir.join("balanced");
    let mut power = small_config(&dir, netlist);
    power.output_dir = dir.join("power");
    power.preference = Preference::Power;

    let report_balanced = run_dopp(&balanced).unwrap();
    let report_power = run_dopp(&power).unwrap();

    for file in ["candidates.ndjson", "weights.json", "model.json"] {
        let a = fs::read(balanced.output_dir.join(file)).unwrap();
        let b = fs::read(power.output_dir.join(file)).unwrap();
        assert_eq!(a, b, "{file} must not depend on the preference");
    }
    // the power pick minimizes raw power over the evaluated union
    let power_of = |uid: u64, report: &dopp_core::RunReport| {
        assert_eq!(uid, report.best_uid);
        report.best_record.metrics["power"]
    };
    let p = power_of(report_power.best_uid, &report_power);
    let b = power_of(report_balanced.best_uid, &report_balanced);
    assert!(p <= b + 1e-12, "power preference should not pick a hungrier design");

    fs::remove_dir_all(&dir).unwrap();
}
