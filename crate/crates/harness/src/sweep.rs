//! Replicated cost-versus-error sweeps and their CSV records.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ScheduleChoice};
use crate::error::{HarnessError, Result};
use crate::runner::MethodRunner;
use crate::testbed::{generate_problem, resolve_method};

/// One CSV row: a method, schedule kind and tolerance aggregated over
/// replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub method: String,
    pub algorithm: String,
    pub epsilon: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub schedule_cost: f64,
    pub work_units: f64,
    pub error_mean: f64,
    pub error_stderr: f64,
    pub replicates: usize,
    pub failures: usize,
    pub seed: u64,
}

/// Mean and standard error of the mean, summed in index order. NaN when
/// there are no samples; the standard error is 0 for a single sample.
pub fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

struct Point {
    algorithm: ScheduleChoice,
    epsilon: f64,
    schedule: mlopt::LevelSchedule,
}

/// Runs every (schedule kind, tolerance, replicate) triple on a pool of
/// `workers` threads (0 picks the rayon default) and aggregates per
/// (schedule kind, tolerance) in a fixed order.
///
/// Divergent replicates are counted in `failures` and left out of the
/// error statistics; other errors abort the sweep.
pub fn run_sweep(config: &ExperimentConfig, workers: usize) -> Result<Vec<ExperimentRecord>> {
    config.validate()?;
    let testbed = generate_problem(&config.problem)?;
    let method = resolve_method(&testbed, &config.settings())?;
    let runner = MethodRunner::new(&testbed, method)?;
    let replicates = if runner.is_deterministic() { 1 } else { config.sweep.replicates };
    let seed = config.sweep.seed;

    let mut points = Vec::new();
    for &algorithm in &runner.method().settings.schedules {
        for &epsilon in &config.sweep.epsilons {
            points.push(Point {
                algorithm,
                epsilon,
                schedule: runner.schedule(epsilon, algorithm.kind())?,
            });
        }
    }
    let tasks: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..replicates).map(move |r| (p, r)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::config("--workers", e.to_string()))?;
    let outcomes: Vec<Result<Option<f64>>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(p, r)| match runner.run(&points[p].schedule, seed, r as u64, false) {
                Ok(o) => Ok(Some(o.error)),
                Err(e) if e.is_divergence() => Ok(None),
                Err(e) => Err(e),
            })
            .collect()
    });

    let mut records = Vec::with_capacity(points.len());
    let mut outcomes = outcomes.into_iter();
    for point in &points {
        let mut errors = Vec::with_capacity(replicates);
        let mut failures = 0;
        for _ in 0..replicates {
            match outcomes.next().expect("one outcome per task")? {
                Some(error) => errors.push(error),
                None => failures += 1,
            }
        }
        let (error_mean, error_stderr) = mean_and_stderr(&errors);
        let schedule_cost = point.schedule.total_cost();
        let s = &runner.method().settings;
        let work_units = if runner.is_deterministic() {
            schedule_cost
        } else {
            let n = mlopt::eki::inner_steps(s.tau_interval, s.step)?;
            schedule_cost * (s.ensemble_size * n) as f64
        };
        records.push(ExperimentRecord {
            method: s.kind.as_str().to_string(),
            algorithm: point.algorithm.as_str().to_string(),
            epsilon: point.epsilon,
            k: point.schedule.iterations(),
            schedule_cost,
            work_units,
            error_mean,
            error_stderr,
            replicates,
            failures,
            seed,
        });
    }
    Ok(records)
}

pub fn write_csv(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut writer = csv::Writer::from_path(path)?;
    if records.is_empty() {
        writer.write_record([
            "method",
            "algorithm",
            "epsilon",
            "K",
            "schedule_cost",
            "work_units",
            "error_mean",
            "error_stderr",
            "replicates",
            "failures",
            "seed",
        ])?;
    }
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}
