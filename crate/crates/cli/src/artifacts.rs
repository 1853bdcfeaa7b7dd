//! Files written for each run, and their CSV schemas.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dps_core::experiment::{Outcome, Problem, Task};
use dps_core::io;
use dps_core::samplers::LogEntry;

use crate::error::CliError;

pub const MEASUREMENT_PNG: &str = "measurement.png";
pub const MEASUREMENT_TENSOR: &str = "measurement.tensor";
pub const RECONSTRUCTION_PNG: &str = "reconstruction.png";
pub const RECONSTRUCTION_TENSOR: &str = "reconstruction.tensor";
pub const GROUND_TRUTH_PNG: &str = "ground_truth.png";
pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const DIAGNOSTICS_JSON: &str = "diagnostics.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub task: String,
    pub method: String,
    pub psnr: f64,
    pub ssim: f64,
    pub residual: f64,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
struct Diagnostics<'a> {
    run_id: &'a str,
    aborted_at_step: Option<usize>,
    reason: Option<&'a str>,
    recent_steps: &'a [LogEntry],
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the images, tensors and trajectory of one run into `dir`.
pub fn write_run(dir: &Path, problem: &Problem, outcome: &Outcome) -> Result<(), CliError> {
    create_dir(dir)?;
    let out_shape = problem.operator.output_shape();
    let m = &problem.measurement;
    if problem.task == Task::PhaseRetrieval {
        io::save_png_scaled(&dir.join(MEASUREMENT_PNG), out_shape, m)?;
    } else {
        io::save_png(&dir.join(MEASUREMENT_PNG), out_shape, m)?;
    }
    io::write_tensor(&dir.join(MEASUREMENT_TENSOR), &[out_shape.rows, out_shape.cols], m)?;
    let shape = problem.shape;
    io::save_png(&dir.join(GROUND_TRUTH_PNG), shape, &problem.truth)?;
    io::save_png(&dir.join(RECONSTRUCTION_PNG), shape, &outcome.reconstruction)?;
    io::write_tensor(&dir.join(RECONSTRUCTION_TENSOR), &[shape.rows, shape.cols], &outcome.reconstruction)?;
    write_csv(&dir.join(TRAJECTORY_CSV), &outcome.log)?;
    if outcome.log.is_empty() {
        // csv writes no header without rows
        std::fs::write(dir.join(TRAJECTORY_CSV), "step,residual,step_size,x0hat_norm\n")?;
    }
    Ok(())
}

/// Writes `diagnostics.json` for an aborted run and returns its path.
pub fn write_diagnostics(dir: &Path, run_id: &str, outcome: &Outcome) -> Result<PathBuf, CliError> {
    create_dir(dir)?;
    let path = dir.join(DIAGNOSTICS_JSON);
    let d = Diagnostics {
        run_id,
        aborted_at_step: outcome.aborted_at,
        reason: outcome.abort_reason.as_deref(),
        recent_steps: &outcome.log,
    };
    let text = serde_json::to_string_pretty(&d).expect("diagnostics serialise");
    std::fs::write(&path, text)?;
    Ok(path)
}
