//! The three workflows behind the CLI: simulate against a known truth, fit a
//! labeled dataset prequentially, and run the oracle diagnostics.

use nalgebra::DVector;
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::dataset::{self, DatasetError};
use crate::diagnostics::{run_diagnostics, DiagnosticsReport};
use crate::simulation::{
    run_prequential, run_trajectory, Algorithm, FitMetrics, SimulationError, TrajectoryMetrics,
};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
    #[error("numerical failure in {failed} of {total} trajectories")]
    NumericalFailure { failed: usize, total: usize },
}

/// Per-run summary, also used for fit runs where the truth-dependent fields
/// stay empty.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub final_theta: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_err_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_avg_regret: Option<f64>,
    pub final_accuracy: f64,
    pub seed: u64,
    pub steps: u64,
    pub algorithm: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateSummary {
    pub algorithm: String,
    pub seeds: Vec<u64>,
    pub steps: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_final_err_sq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_rate_slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_final_avg_regret: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_final_accuracy: Option<f64>,
    pub failures: usize,
}

/// Outcome of a simulate sweep: one metrics CSV and summary JSON per seed.
#[derive(Debug)]
pub struct SimulateOutcome {
    pub metrics_paths: Vec<PathBuf>,
    pub summaries: Vec<RunSummary>,
    pub aggregate: Option<AggregateSummary>,
}

fn median(mut values: Vec<f64>) -> Option<f64> {
    values.retain(|v| v.is_finite());
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

fn write_metrics_csv(path: &Path, metrics: &TrajectoryMetrics) -> Result<(), CommandError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "k,err_sq,err_sq_bar,lambda_min,lambda_max,avg_regret,accuracy,beta,beta_bar"
    )?;
    for r in &metrics.records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.k,
            r.err_sq,
            r.err_sq_bar,
            r.lambda_min,
            r.lambda_max,
            r.avg_regret,
            r.accuracy,
            r.beta,
            r.beta_bar
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CommandError> {
    let text = serde_json::to_string_pretty(value).expect("summary serializes");
    std::fs::write(path, text)?;
    Ok(())
}

fn summarize_trajectory(
    metrics: &TrajectoryMetrics,
    seed: u64,
    algorithm: Algorithm,
) -> RunSummary {
    let steps = metrics.records.len() as u64;
    let rate_window_start = (steps / 100).max(10);
    let last = metrics.final_record();
    RunSummary {
        final_theta: metrics.final_theta.iter().copied().collect(),
        final_err_sq: last.map(|r| r.err_sq),
        rate_slope: metrics.rate_slope(rate_window_start),
        final_avg_regret: last.map(|r| r.avg_regret),
        final_accuracy: last.map_or(0.0, |r| r.accuracy),
        seed,
        steps,
        algorithm: algorithm.to_string(),
    }
}

/// Run `seeds` trajectories seeded `config.seed, config.seed + 1, ...`, write
/// one metrics CSV and one summary JSON per seed, and an aggregate summary
/// for sweeps. Fails (after writing everything) when any trajectory hit a
/// numerical failure.
pub fn cmd_simulate(
    config: &RunConfig,
    seeds: usize,
    out_dir: &Path,
) -> Result<SimulateOutcome, CommandError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let quantizer = config.quantizer()?;
    let ada = config.ada_config()?;

    let mut outcome = SimulateOutcome {
        metrics_paths: Vec::new(),
        summaries: Vec::new(),
        aggregate: None,
    };
    let mut failed = 0usize;
    for i in 0..seeds.max(1) {
        let seed = config.seed.wrapping_add(i as u64);
        let scenario = config.scenario_spec(seed)?;
        let metrics = run_trajectory(&scenario, &quantizer, &ada, config.algorithm)?;
        if let Some(reason) = &metrics.failure {
            log::warn!("seed {seed}: trajectory aborted: {reason}");
            failed += 1;
        }

        let csv_path = out_dir.join(format!("metrics_seed{seed}.csv"));
        write_metrics_csv(&csv_path, &metrics)?;
        let summary = summarize_trajectory(&metrics, seed, config.algorithm);
        write_json(&out_dir.join(format!("summary_seed{seed}.json")), &summary)?;
        outcome.metrics_paths.push(csv_path);
        outcome.summaries.push(summary);
    }

    if seeds > 1 {
        let pick = |f: fn(&RunSummary) -> Option<f64>| {
            median(outcome.summaries.iter().filter_map(f).collect())
        };
        let aggregate = AggregateSummary {
            algorithm: config.algorithm.to_string(),
            seeds: outcome.summaries.iter().map(|s| s.seed).collect(),
            steps: outcome.summaries.first().map_or(0, |s| s.steps),
            median_final_err_sq: pick(|s| s.final_err_sq),
            median_rate_slope: pick(|s| s.rate_slope),
            median_final_avg_regret: pick(|s| s.final_avg_regret),
            median_final_accuracy: pick(|s| Some(s.final_accuracy)),
            failures: failed,
        };
        write_json(&out_dir.join("aggregate.json"), &aggregate)?;
        outcome.aggregate = Some(aggregate);
    }

    if failed > 0 {
        return Err(CommandError::NumericalFailure {
            failed,
            total: seeds.max(1),
        });
    }
    Ok(outcome)
}

/// Stream a labeled CSV through the configured estimator prequentially and
/// write the running accuracy plus the final estimate.
pub fn cmd_fit(
    config: &RunConfig,
    data: &Path,
    out_dir: &Path,
) -> Result<(FitMetrics, RunSummary), CommandError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let quantizer = config.quantizer()?;
    let ada = config.ada_config()?;

    let rows = dataset::ingest_csv(data, config.dimension, quantizer.num_levels())?;
    let stream = rows.map(|row| {
        row.map(|r| (DVector::from_vec(r.features), r.label))
            .map_err(|e| e.to_string())
    });
    let metrics = run_prequential(stream, &quantizer, &ada, config.algorithm)?;

    let mut w = BufWriter::new(File::create(out_dir.join("fit_accuracy.csv"))?);
    writeln!(w, "k,accuracy")?;
    for r in &metrics.records {
        writeln!(w, "{},{}", r.k, r.accuracy)?;
    }
    w.flush()?;

    let summary = RunSummary {
        final_theta: metrics.final_theta.iter().copied().collect(),
        final_err_sq: None,
        rate_slope: None,
        final_avg_regret: None,
        final_accuracy: metrics.final_accuracy().unwrap_or(0.0),
        seed: config.seed,
        steps: metrics.records.len() as u64,
        algorithm: config.algorithm.to_string(),
    };
    write_json(&out_dir.join("fit_summary.json"), &summary)?;
    Ok((metrics, summary))
}

/// Run the oracle checks at the configured noise model, printing one
/// pass/fail line per check.
pub fn cmd_diagnose(config: &RunConfig, strict: bool) -> Result<DiagnosticsReport, CommandError> {
    config.validate()?;
    let report = run_diagnostics(&config.noise, config.seed, strict);
    for check in &report.checks {
        println!(
            "{} {} ({})",
            if check.passed { "PASS" } else { "FAIL" },
            check.name,
            check.detail
        );
    }
    Ok(report)
}
