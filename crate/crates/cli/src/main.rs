//! Command-line front end for the tier-partitioning pipeline.
//!
//! Every subcommand is a thin wrapper over a library stage and works against
//! a single run directory: `generate` writes the candidate archive, `design`
//! the sampling weights, `evaluate`/`fit`/`select` carry those through to a
//! final report, and `run` chains the whole thing. `sweep` and `seeds` are
//! the study protocols; `report` re-verifies a finished directory and prints
//! what it holds. Configuration comes from an optional JSON file mirroring
//! `PipelineConfig`, with the common knobs exposed as flags on top.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dopp_core::pipeline::artifacts::StageTimings;
use dopp_core::pipeline::{
    budget_sweep, load_run, multi_seed, run_dopp, stage_design, stage_evaluate, stage_fit,
    stage_generate, stage_select,
};
use dopp_core::{PipelineConfig, RunReport};

#[derive(Parser)]
#[command(name = "dopp", version, about = "Budget-constrained tier-partition selection")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// JSON pipeline configuration; omitted fields take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Run directory for artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Netlist to operate on.
    #[arg(long, global = true, value_name = "PATH")]
    netlist: Option<PathBuf>,
    /// Search seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Evaluation pool size.
    #[arg(long, global = true)]
    parallel: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Anneal the netlist into a proxy-diverse candidate archive.
    Generate,
    /// Compute optimal sampling weights over the archive.
    Design,
    /// Evaluate the coreset (default) or an explicit candidate list.
    Evaluate {
        /// Comma-separated candidate uids; omit to evaluate the coreset.
        #[arg(long, value_delimiter = ',', value_name = "UIDS")]
        uids: Option<Vec<u64>>,
    },
    /// Train the cost surrogate on the evaluated coreset.
    Fit,
    /// Rank all candidates, verify the top picks, and write the report.
    Select,
    /// Full pipeline: generate, design, evaluate, fit, select.
    Run,
    /// Chart the best reachable cost across evaluation budgets.
    Sweep {
        /// Comma-separated budget fractions in (0, 1].
        #[arg(long, value_delimiter = ',', value_name = "FRACTIONS")]
        fractions: Option<Vec<f64>>,
    },
    /// Repeat the pipeline across seeds against a matched random baseline.
    Seeds {
        /// Comma-separated search seeds.
        #[arg(long = "seeds", value_delimiter = ',', value_name = "SEEDS")]
        list: Option<Vec<u64>>,
    },
    /// Verify the artifacts in the run directory and print its report.
    Report,
    /// Write a synthetic benchmark netlist to the --netlist path.
    Synth {
        #[arg(long, default_value_t = 26)]
        macros: usize,
        #[arg(long, default_value_t = 600)]
        logic: usize,
        #[arg(long, default_value_t = 800)]
        nets: usize,
        #[arg(long, default_value_t = 18)]
        clusters: usize,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let config = load_config(&cli.overrides)?;

    match cli.command {
        Command::Generate => {
            let out = stage_generate(&config)?;
            println!(
                "generated {} candidates ({} features) in {}",
                out.candidate_count,
                out.feature_dim,
                config.output_dir.display()
            );
        }
        Command::Design => {
            let out = stage_design(&config)?;
            println!(
                "design weights: support {}, gap {:.3e}, log-det {:.6} ({} iterations, {})",
                out.support_size,
                out.gap,
                out.log_det,
                out.iterations,
                if out.converged { "converged" } else { "NOT converged" }
            );
        }
        Command::Evaluate { uids } => {
            let out = stage_evaluate(&config, uids.as_deref(), None)?;
            println!(
                "evaluated {} candidates: {} ok, {} failed, {} cache hits ({:.2}s)",
                out.requested.len(),
                out.succeeded,
                out.failed.len(),
                out.cache_hits,
                out.wall_s
            );
            if !out.failed.is_empty() {
                println!("failed uids: {}", join_u64(&out.failed));
            }
        }
        Command::Fit => {
            let out = stage_fit(&config, None)?;
            println!(
                "surrogate fit on {} rows, max training residual {:.3e}",
                out.training_rows, out.fit_residual_max
            );
            if !out.failed.is_empty() {
                println!("failed uids: {}", join_u64(&out.failed));
            }
        }
        Command::Select => {
            let report = stage_select(&config, None, StageTimings::default())?;
            print_report(&report);
        }
        Command::Run => {
            let report = run_dopp(&config)?;
            print_report(&report);
        }
        Command::Sweep { fractions } => {
            let mut config = config;
            if let Some(fractions) = fractions {
                config.sweep_fractions = fractions;
            }
            let out = budget_sweep(&config)?;
            println!(
                "budget sweep over {} candidates ({})",
                out.candidate_count,
                out.run_dir.display()
            );
            println!("{:>10} {:>12} {:>10} {:>12}", "fraction", "evaluations", "best_uid", "best_cost");
            for point in &out.points {
                match (point.best_uid, point.best_cost) {
                    (Some(uid), Some(cost)) => println!(
                        "{:>10.3} {:>12} {:>10} {:>12.6}",
                        point.fraction, point.evaluations, uid, cost
                    ),
                    _ => println!(
                        "{:>10.3} {:>12} {:>10} {:>12}",
                        point.fraction, point.evaluations, "-", "all failed"
                    ),
                }
            }
            if !out.failed_uids.is_empty() {
                println!("failed uids: {}", join_u64(&out.failed_uids));
            }
        }
        Command::Seeds { list } => {
            let mut config = config;
            if let Some(list) = list {
                config.seeds = list;
            }
            let out = multi_seed(&config)?;
            println!(
                "{:>6} {:>7} {:>9} {:>11} {:>11} {:>13}",
                "seed", "evals", "pick_uid", "pick_cost", "random_uid", "random_cost"
            );
            for row in &out.per_seed {
                println!(
                    "{:>6} {:>7} {:>9} {:>11.6} {:>11} {:>13.6}",
                    row.seed,
                    row.evaluations,
                    row.dopp.uid,
                    row.dopp.cost,
                    row.random.uid,
                    row.random.cost
                );
            }
            println!("selected-candidate metrics, median [min, max]:");
            print_summaries("pipeline", &out.dopp_summary);
            print_summaries("random", &out.random_summary);
        }
        Command::Report => {
            let (report, meta) = load_run(&config.output_dir)?;
            println!("run directory   {}", config.output_dir.display());
            println!("design          {}", report.design);
            println!("backend         {}", meta.backend_tag);
            println!("candidates      {}", report.candidate_count);
            println!(
                "coreset         {} (threshold {}, min {})",
                report.coreset_size, report.threshold, report.min_coreset
            );
            println!("verified        {}", report.verified_count);
            println!("evaluations     {}", report.total_evaluations);
            if !report.failed_uids.is_empty() {
                println!("failed uids     {}", join_u64(&report.failed_uids));
            }
            println!(
                "design gap      {:.3e} ({})",
                report.design_gap,
                if report.design_converged { "converged" } else { "NOT converged" }
            );
            println!("support         {}", report.support_size);
            println!("fit residual    {:.3e}", report.fit_residual_max);
            println!("best uid        {}", report.best.uid);
            println!("best cost       {:.6}", report.best.cost);
            println!("best metrics:");
            print_metrics(&report.best.metrics);
            println!(
                "artifacts ok    {} digests verified, cpu {:.2}s, wall {:.2}s",
                meta.artifact_digests.len(),
                meta.cpu_seconds,
                meta.timings.total_s
            );
        }
        Command::Synth { macros, logic, nets, clusters } => {
            let world = dopp_core::synth::SynthConfig {
                macros,
                logic,
                nets,
                clusters,
                seed: config.sa.seed,
                ..dopp_core::synth::SynthConfig::default()
            }
            .generate();
            let text = dopp_core::netlist::serialize_netlist(&world);
            if let Some(parent) = config.netlist_path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)
                    .with_context(|| format!("creating {}", parent.display()))?;
            }
            std::fs::write(&config.netlist_path, text)
                .with_context(|| format!("writing {}", config.netlist_path.display()))?;
            println!(
                "wrote {} ({} macros, {} logic cells, {} nets, {} clusters)",
                config.netlist_path.display(),
                macros,
                logic,
                nets,
                clusters
            );
        }
    }
    Ok(())
}

fn load_config(overrides: &Overrides) -> Result<PipelineConfig> {
    let mut config = match &overrides.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(out) = &overrides.out {
        config.output_dir = out.clone();
    }
    if let Some(netlist) = &overrides.netlist {
        config.netlist_path = netlist.clone();
    }
    if let Some(seed) = overrides.seed {
        config.sa.seed = seed;
    }
    if let Some(parallel) = overrides.parallel {
        config.max_parallel_evals = parallel;
    }
    Ok(config)
}

fn print_report(report: &RunReport) {
    println!("design          {}", report.design_name);
    println!("candidates      {}", report.candidate_count);
    println!("coreset         {}", report.coreset_size);
    println!("verified        {}", report.verified_count);
    println!("evaluations     {}", report.total_evaluations);
    if !report.failed_uids.is_empty() {
        println!("failed uids     {}", join_u64(&report.failed_uids));
    }
    println!(
        "design gap      {:.3e} ({})",
        report.design_gap,
        if report.design_converged { "converged" } else { "NOT converged" }
    );
    println!("fit residual    {:.3e}", report.fit_residual_max);
    println!("best uid        {}", report.best_uid);
    println!("best cost       {:.6}", report.best_cost);
    println!("best metrics:");
    print_metrics(&report.best_record.metrics);
    println!(
        "timings         anneal {:.2}s, design {:.2}s, eval {:.2}s, fit {:.2}s, select {:.2}s",
        report.timings.anneal_s,
        report.timings.design_s,
        report.timings.coreset_eval_s + report.timings.verify_eval_s,
        report.timings.fit_s,
        report.timings.select_s
    );
    println!(
        "                total {:.2}s wall, {:.2}s evaluator cpu",
        report.timings.total_s, report.cpu_seconds
    );
    println!("artifacts in    {}", report.run_dir.display());
}

fn print_metrics(metrics: &BTreeMap<String, f64>) {
    for (name, value) in metrics {
        println!("  {name:<10} {value:>14.6}");
    }
}

fn print_summaries(label: &str, summary: &BTreeMap<String, dopp_core::pipeline::MetricSummary>) {
    println!("  {label}:");
    for (name, stats) in summary {
        println!(
            "    {name:<10} {:>12.6} [{:.6}, {:.6}]",
            stats.median, stats.min, stats.max
        );
    }
}

fn join_u64(values: &[u64]) -> String {
    values.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
}
