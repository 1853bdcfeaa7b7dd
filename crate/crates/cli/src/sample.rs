use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::artifacts::{self, MetricsRow};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::setup::{self, Truth};
use crate::Common;

pub struct RunResult {
    pub row: MetricsRow,
    pub aborted: Option<PathBuf>,
}

/// Runs the configured method on one image and writes its artifacts into
/// `dir`. Numerical aborts write `diagnostics.json` instead of failing.
pub fn run_one(cfg: &ExperimentConfig, truth: &Truth, run_id: &str, seed: u64, dir: &Path) -> Result<RunResult, CliError> {
    let problem = setup::problem(cfg, truth, seed)?;
    let score = match setup::sampler_kind(cfg.method.kind) {
        Some(_) => Some(setup::score_model(cfg, truth.shape)?),
        None => None,
    };
    let outcome = setup::run_method(cfg, &problem, score, cfg.seed)?;
    artifacts::write_run(dir, &problem, &outcome)?;
    let aborted = match outcome.finished() {
        true => None,
        false => Some(artifacts::write_diagnostics(dir, run_id, &outcome)?),
    };
    let row = MetricsRow {
        run_id: run_id.to_string(),
        task: cfg.task.as_str().to_string(),
        method: cfg.method.kind.as_str().to_string(),
        psnr: outcome.scores.psnr,
        ssim: outcome.scores.ssim,
        residual: outcome.scores.residual,
        seed: cfg.seed,
    };
    Ok(RunResult { row, aborted })
}

/// Measurement noise and masks for image `k` come from stream `seed + k`.
pub fn image_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add(k as u64)
}

pub fn cmd_sample(config: &Path, common: &Common) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let out = setup::out_dir(common.out.as_deref(), cfg.out.as_deref(), config);
    let truths = setup::load_truths(&cfg)?;
    if cfg.measurement.is_some() && truths.len() != 1 {
        return Err(CliError::Config("a loaded measurement needs exactly one ground-truth image".into()));
    }
    let single = truths.len() == 1;
    artifacts::create_dir(&out)?;
    let results: Vec<Result<RunResult, CliError>> = truths
        .par_iter()
        .enumerate()
        .map(|(k, t)| {
            let dir = if single { out.clone() } else { out.join(&t.name) };
            run_one(&cfg, t, &t.name, image_seed(cfg.seed, k), &dir)
        })
        .collect();
    let mut rows = Vec::new();
    let mut aborted = None;
    for r in results {
        let r = r?;
        println!(
            "{}: psnr {:.2} dB, ssim {:.3}, residual {:.4}{}",
            r.row.run_id,
            r.row.psnr,
            r.row.ssim,
            r.row.residual,
            if r.aborted.is_some() { " (aborted)" } else { "" }
        );
        if aborted.is_none() {
            aborted = r.aborted.map(|p| (r.row.run_id.clone(), p));
        }
        rows.push(r.row);
    }
    artifacts::write_csv(&out.join(artifacts::METRICS_CSV), &rows)?;
    println!("wrote {}", out.display());
    match aborted {
        Some((id, path)) => Err(CliError::Numerical {
            message: format!("run {id} produced a non-finite state"),
            diagnostics: Some(path),
        }),
        None => Ok(()),
    }
}
