//! Study protocols layered on the pipeline: an evaluation-budget sweep along
//! the design-weight ordering, and multi-seed runs against a matched-budget
//! random-sampling arm.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::{MetricSchema, PpaRecord, Preference};

use super::artifacts::{
    read_json, write_json, write_meta, EvalCache, MetaDoc, StageTimings, META_FILE,
    SCHEMA_VERSION, SEEDS_FILE, SWEEP_FILE,
};
use super::stages::{evaluate_uids, stage_design, stage_generate, RunContext};
use super::{composite_costs, run_dopp, select_final, PipelineConfig, PipelineError};

/// Mixed into the seed so the random arm never shares a stream with the
/// search it is compared against.
const RANDOM_ARM_SALT: u64 = 0x5241_4e44;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    /// Budget at this point: candidates taken from the top of the weight
    /// ordering (attempts, including any failures).
    pub evaluations: usize,
    /// None only if every evaluation in the prefix failed.
    pub best_uid: Option<u64>,
    pub best_cost: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepDoc {
    pub schema_version: u32,
    pub design: String,
    pub candidate_count: usize,
    pub preference: Preference,
    pub points: Vec<SweepPoint>,
    pub failed_uids: Vec<u64>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    pub failed_uids: Vec<u64>,
    pub candidate_count: usize,
    pub run_dir: PathBuf,
}

/// Evaluates nested prefixes of the descending-weight ordering and reports
/// the best composite cost reachable at each budget fraction. All costs are
/// normalized over the union of everything the sweep evaluated, so the curve
/// is non-increasing by construction and fraction 1.0 is the exhaustive
/// reference.
pub fn budget_sweep(config: &PipelineConfig) -> Result<SweepOutcome, PipelineError> {
    config.validate()?;
    let total_start = Instant::now();
    let mut timings = StageTimings::default();

    let stage = Instant::now();
    stage_generate(config)?;
    timings.anneal_s = stage.elapsed().as_secs_f64();
    let stage = Instant::now();
    stage_design(config)?;
    timings.design_s = stage.elapsed().as_secs_f64();

    let ctx = RunContext::load(config)?;
    let design = ctx.load_design()?;

    // descending weight, ties toward the lower uid
    let mut order: Vec<usize> = (0..ctx.uids.len()).collect();
    order.sort_by(|&a, &b| {
        design.weights[b]
            .partial_cmp(&design.weights[a])
            .expect("weights are finite")
            .then(ctx.uids[a].cmp(&ctx.uids[b]))
    });

    let n = ctx.uids.len();
    let floor = 10.min(n);
    let mut fractions = config.sweep_fractions.clone();
    fractions.sort_by(|a, b| a.partial_cmp(b).expect("validated finite"));
    fractions.dedup();
    let sizes: Vec<usize> = fractions
        .iter()
        .map(|f| (((f * n as f64).ceil()) as usize).max(floor).min(n))
        .collect();
    let n_max = *sizes.last().expect("validated non-empty");

    // one batch covers every budget: smaller budgets are prefixes of it
    let prefix_uids: Vec<u64> = order[..n_max].iter().map(|&i| ctx.uids[i]).collect();
    let schema = MetricSchema::default_ppa();
    let backend = ctx.backend(config, None, &schema)?;
    let mut cache = EvalCache::open(&ctx.run_dir)?;
    let outcome = evaluate_uids(
        &prefix_uids,
        &ctx,
        backend.as_ref(),
        &mut cache,
        config.max_parallel_evals,
    )?;
    timings.coreset_eval_s = outcome.wall_s;
    if outcome.records.is_empty() {
        return Err(PipelineError::TooManyFailures {
            failed: outcome.failed.len(),
            total: prefix_uids.len(),
        });
    }

    // every budget is scored against one normalization population: the
    // union of sweep evaluations — nested prefixes then give a monotone curve
    let union: Vec<PpaRecord> = outcome.records.values().cloned().collect();
    let preference_schema = schema.with_preference(&config.preference)?;
    let cost_by_uid: BTreeMap<u64, f64> =
        composite_costs(&union, &preference_schema)?.into_iter().collect();

    let points: Vec<SweepPoint> = fractions
        .iter()
        .zip(&sizes)
        .map(|(&fraction, &n_f)| {
            let best = order[..n_f]
                .iter()
                .filter_map(|&i| cost_by_uid.get(&ctx.uids[i]).map(|&c| (c, ctx.uids[i])))
                .min_by(|a, b| a.partial_cmp(b).expect("finite costs"));
            SweepPoint {
                fraction,
                evaluations: n_f,
                best_uid: best.map(|(_, uid)| uid),
                best_cost: best.map(|(cost, _)| cost),
            }
        })
        .collect();

    timings.total_s = total_start.elapsed().as_secs_f64();
    write_json(
        &ctx.run_dir.join(SWEEP_FILE),
        &SweepDoc {
            schema_version: SCHEMA_VERSION,
            design: ctx.netlist.name().to_string(),
            candidate_count: n,
            preference: config.preference.clone(),
            points: points.clone(),
            failed_uids: outcome.failed.clone(),
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
            cpu_seconds: union.iter().map(|r| r.wall_seconds).sum(),
            artifact_digests: BTreeMap::new(),
        },
    )?;
    Ok(SweepOutcome {
        points,
        failed_uids: outcome.failed,
        candidate_count: n,
        run_dir: ctx.run_dir,
    })
}

// ---- multi-seed comparison ----

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmPick {
    pub uid: u64,
    /// Composite cost normalized within this arm's own evaluated set; raw
    /// metrics are the cross-arm-comparable numbers.
    pub cost: f64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Shared budget: the random arm draws exactly this many candidates.
    pub evaluations: usize,
    pub dopp: ArmPick,
    pub random: ArmPick,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricSummary {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SeedsOutcome {
    pub schema_version: u32,
    pub preference: Preference,
    pub per_seed: Vec<SeedOutcome>,
    /// Raw metrics of the selected candidate, summarized across seeds.
    pub dopp_summary: BTreeMap<String, MetricSummary>,
    pub random_summary: BTreeMap<String, MetricSummary>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Runs the full pipeline once per seed (only the search seed varies; the
/// evaluator stays fixed) and, for each run, draws a uniform random subset of
/// the same candidate pool at exactly the run's evaluation budget as the
/// baseline arm. Both arms share the per-run evaluation cache, so overlapping
/// picks are never paid for twice.
pub fn multi_seed(config: &PipelineConfig) -> Result<SeedsOutcome, PipelineError> {
    config.validate()?;
    if config.seeds.is_empty() {
        return Err(PipelineError::InvalidConfig { detail: "seeds must be non-empty".into() });
    }
    let base = config.output_dir.clone();
    let schema = MetricSchema::default_ppa();
    let preference_schema = schema.with_preference(&config.preference)?;

    let mut per_seed = Vec::new();
    for &seed in &config.seeds {
        let mut sub = config.clone();
        sub.sa.seed = seed;
        sub.output_dir = base.join(format!("seed-{seed}"));
        let report = run_dopp(&sub)?;

        let ctx = RunContext::load(&sub)?;
        let budget = report.total_evaluations.min(ctx.uids.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ RANDOM_ARM_SALT);
        let mut random_uids: Vec<u64> = rand::seq::index::sample(&mut rng, ctx.uids.len(), budget)
            .iter()
            .map(|i| ctx.uids[i])
            .collect();
        random_uids.sort_unstable();

        let backend = ctx.backend(&sub, None, &schema)?;
        let mut cache = EvalCache::open(&ctx.run_dir)?;
        let outcome = evaluate_uids(
            &random_uids,
            &ctx,
            backend.as_ref(),
            &mut cache,
            config.max_parallel_evals,
        )?;
        if outcome.records.is_empty() {
            return Err(PipelineError::TooManyFailures {
                failed: outcome.failed.len(),
                total: random_uids.len(),
            });
        }
        let random_records: Vec<PpaRecord> = outcome.records.values().cloned().collect();
        let (random_uid, random_cost) = select_final(&random_records, &preference_schema)?;

        // The random arm extended this run's evaluation log, so its digest
        // ledger must be recomputed or the directory would fail verification.
        let meta: MetaDoc = read_json(&ctx.run_dir.join(META_FILE))?;
        write_meta(&ctx.run_dir, meta)?;

        per_seed.push(SeedOutcome {
            seed,
            evaluations: budget,
            dopp: ArmPick {
                uid: report.best_uid,
                cost: report.best_cost,
                metrics: report.best_record.metrics.clone(),
            },
            random: ArmPick {
                uid: random_uid,
                cost: random_cost,
                metrics: outcome.records[&random_uid].metrics.clone(),
            },
        });
    }

    let outcome = SeedsOutcome {
        schema_version: SCHEMA_VERSION,
        preference: config.preference.clone(),
        dopp_summary: summarize(per_seed.iter().map(|s| &s.dopp.metrics)),
        random_summary: summarize(per_seed.iter().map(|s| &s.random.metrics)),
        per_seed,
        base_dir: base.clone(),
    };
    write_json(&base.join(SEEDS_FILE), &outcome)?;
    Ok(outcome)
}

fn summarize<'a>(
    picks: impl Iterator<Item = &'a BTreeMap<String, f64>>,
) -> BTreeMap<String, MetricSummary> {
    let mut by_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for metrics in picks {
        for (name, &value) in metrics {
            by_metric.entry(name.clone()).or_default().push(value);
        }
    }
    by_metric
        .into_iter()
        .map(|(name, mut values)| {
            values.sort_by(|a, b| a.partial_cmp(b).expect("metrics are finite"));
            let n = values.len();
            let median = if n % 2 == 1 {
                values[n / 2]
            } else {
                0.5 * (values[n / 2 - 1] + values[n / 2])
            };
            (name, MetricSummary { median, min: values[0], max: values[n - 1] })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summaries_take_medians_and_extremes() {
        let rows: Vec<BTreeMap<String, f64>> = [3.0, 1.0, 2.0]
            .iter()
            .map(|&v| BTreeMap::from([("power".to_string(), v)]))
            .collect();
        let summary = summarize(rows.iter());
        let power = &summary["power"];
        assert_eq!((power.median, power.min, power.max), (2.0, 1.0, 3.0));

        let rows: Vec<BTreeMap<String, f64>> =
            [4.0, 1.0].iter().map(|&v| BTreeMap::from([("rwl".to_string(), v)])).collect();
        assert_eq!(summarize(rows.iter())["rwl"].median, 2.5);
    }

    #[test]
    fn random_arm_salt_changes_the_stream() {
        use rand::Rng;
        let mut a = ChaCha8Rng::seed_from_u64(5 ^ RANDOM_ARM_SALT);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let xa: u64 = a.random();
        let xb: u64 = b.random();
        assert_ne!(xa, xb);
    }
}
