//! Classical Fourier phase retrieval: error reduction (ER), hybrid
//! input-output (HIO) and oversampling smoothness (OSS).
//!
//! All three iterate on the zero-padded frame of a [`FourierMagnitude`]
//! operator. The object constraint is "real, non-negative and zero outside
//! the support"; the Fourier constraint replaces magnitudes by `y` and keeps
//! phases.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::operators::{Fft2, ForwardOperator, FourierMagnitude, Mask};
use crate::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrMethod {
    Er,
    Hio,
    Oss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrConfig {
    pub iterations: usize,
    pub beta: f64,
    pub restarts: usize,
    /// Support in image coordinates.
    pub support: Mask,
    /// Gaussian filter widths (in frequency bins) for the OSS stages, used in
    /// equal-length stages. Infinite widths disable the filter.
    pub oss_widths: Vec<f64>,
    pub seed: u64,
}

impl PrConfig {
    /// Desk-scale defaults: 2,000 iterations, β = 0.9, four restarts, a
    /// 10-stage OSS anneal from half the image size down to one bin.
    pub fn new(support: Mask) -> Self {
        let shape = support.shape();
        let start = (shape.rows.max(shape.cols) as f64 / 2.0).max(1.0);
        let stages = 10u32;
        let oss_widths = (0..stages)
            .map(|s| start + (1.0 - start) * f64::from(s) / f64::from(stages - 1))
            .collect();
        Self {
            iterations: 2000,
            beta: 0.9,
            restarts: 4,
            support,
            oss_widths,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if !(self.beta >= 0.0 && self.beta <= 1.0) {
            return Err(Error::invalid(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        if self.support.n_kept() == 0 {
            return Err(Error::invalid("support mask is empty"));
        }
        if self.oss_widths.is_empty() || self.oss_widths.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::invalid("OSS widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RestartLog {
    /// `‖ |F g_k| − y ‖` before each Fourier step.
    pub residuals: Vec<f64>,
    /// Residual of the returned, constraint-projected iterate.
    pub final_residual: f64,
}

#[derive(Debug, Clone)]
pub struct PrResult {
    /// Best reconstruction, in image coordinates.
    pub reconstruction: Vec<f64>,
    /// `‖ |F P x| − y ‖` of the best reconstruction.
    pub residual: f64,
    pub best_restart: usize,
    pub restarts: Vec<RestartLog>,
}

struct Problem<'a> {
    op: &'a FourierMagnitude,
    /// Measurement in raw DFT units, clamped at zero so it is a valid
    /// magnitude set; residuals are distances to that set in the units of `op`.
    y: Vec<f64>,
    scale: f64,
    support: Vec<bool>,
    plan: &'a Fft2,
}

impl Problem<'_> {
    fn fourier_step(&self, g: &[f64]) -> (Vec<f64>, f64) {
        let mut spec = self.plan.forward_real(g);
        let resid = replace_magnitudes(&mut spec, &self.y);
        self.plan.inverse(&mut spec);
        let n = self.plan.len() as f64;
        (spec.iter().map(|c| c.re / n).collect(), resid * self.scale)
    }

    fn admissible(&self, k: usize, v: f64) -> bool {
        self.support[k] && v >= 0.0
    }

    fn project_object(&self, g: &[f64]) -> Vec<f64> {
        g.iter()
            .enumerate()
            .map(|(k, v)| if self.admissible(k, *v) { *v } else { 0.0 })
            .collect()
    }

    fn residual(&self, g: &[f64]) -> f64 {
        let spec = self.plan.forward_real(g);
        spec.iter()
            .zip(&self.y)
            .map(|(s, y)| (s.norm() - y).powi(2))
            .sum::<f64>()
            .sqrt()
            * self.scale
    }

    /// Gaussian low-pass `exp(−½ (|k| / α)²)` over centred frequencies,
    /// applied to `g` and written back outside the support.
    fn smooth_outside(&self, g: &mut [f64], alpha: f64) {
        let (rows, cols) = (self.plan.rows(), self.plan.cols());
        let mut spec = self.plan.forward_real(g);
        for r in 0..rows {
            let kr = if r <= rows / 2 { r as f64 } else { r as f64 - rows as f64 };
            for c in 0..cols {
                let kc = if c <= cols / 2 { c as f64 } else { c as f64 - cols as f64 };
                spec[r * cols + c] *= (-0.5 * (kr * kr + kc * kc) / (alpha * alpha)).exp();
            }
        }
        self.plan.inverse(&mut spec);
        let n = self.plan.len() as f64;
        for (k, v) in g.iter_mut().enumerate() {
            if !self.support[k] {
                *v = spec[k].re / n;
            }
        }
    }

    fn run(&self, method: PrMethod, cfg: &PrConfig, restart: usize) -> (Vec<f64>, RestartLog) {
        let mut rng = rng_from_seed(cfg.seed, restart as u64);
        let z = linalg::standard_normal(&mut rng, self.support.len());
        let mut g: Vec<f64> = z
            .iter()
            .zip(&self.support)
            .map(|(z, s)| if *s { *z } else { 0.0 })
            .collect();
        let mut residuals = Vec::with_capacity(cfg.iterations);
        let stage_len = cfg.iterations.div_ceil(cfg.oss_widths.len());
        // OSS keeps the best object of each stage, seeds the next stage
        // with it and returns the best overall
        let mut stage_best: Option<(f64, Vec<f64>)> = None;
        let mut overall: Option<(f64, Vec<f64>)> = None;
        for it in 0..cfg.iterations {
            let (gp, resid) = self.fourier_step(&g);
            residuals.push(resid);
            match method {
                PrMethod::Er => g = self.project_object(&gp),
                PrMethod::Hio | PrMethod::Oss => {
                    for (k, v) in g.iter_mut().enumerate() {
                        *v = if self.admissible(k, gp[k]) { gp[k] } else { *v - cfg.beta * gp[k] };
                    }
                    if method == PrMethod::Oss {
                        let alpha = cfg.oss_widths[(it / stage_len).min(cfg.oss_widths.len() - 1)];
                        if alpha.is_finite() {
                            self.smooth_outside(&mut g, alpha);
                        }
                        let r = self.residual(&self.project_object(&g));
                        if stage_best.as_ref().is_none_or(|(b, _)| r < *b) {
                            stage_best = Some((r, g.clone()));
                        }
                        if (it + 1) % stage_len == 0 || it + 1 == cfg.iterations {
                            let (r, best) = stage_best.take().expect("stage has iterations");
                            if it + 1 < cfg.iterations {
                                g.clone_from(&best);
                            }
                            if overall.as_ref().is_none_or(|(b, _)| r < *b) {
                                overall = Some((r, best));
                            }
                        }
                    }
                }
            }
        }
        let (out, final_residual) = match overall {
            Some((r, best)) => (self.project_object(&best), r),
            None => {
                let out = self.project_object(&g);
                let r = self.residual(&out);
                (out, r)
            }
        };
        (
            out,
            RestartLog {
                residuals,
                final_residual,
            },
        )
    }
}

/// Replaces every magnitude of `spec` by `y`, keeping phases (phase 0 where
/// the bin is zero). Returns `‖ |spec| − y ‖` before replacement.
pub fn replace_magnitudes(spec: &mut [Complex64], y: &[f64]) -> f64 {
    let mut resid = 0.0;
    for (s, y) in spec.iter_mut().zip(y) {
        let m = s.norm();
        resid += (m - y) * (m - y);
        *s = if m > 0.0 { Complex64::from_polar(*y, s.arg()) } else { Complex64::new(*y, 0.0) };
    }
    resid.sqrt()
}

fn run_method(method: PrMethod, op: &FourierMagnitude, y: &[f64], cfg: &PrConfig) -> Result<PrResult> {
    cfg.validate()?;
    check_len(op.output_shape().len(), y.len())?;
    if cfg.support.shape() != op.input_shape() {
        return Err(Error::invalid(format!(
            "support {} does not match image {}",
            cfg.support.shape(),
            op.input_shape()
        )));
    }
    let support_img: Vec<f64> = cfg.support.keep().iter().map(|k| if *k { 1.0 } else { 0.0 }).collect();
    let problem = Problem {
        op,
        // noise can push magnitudes below zero; the nearest valid one is 0
        y: y.iter().map(|v| v.max(0.0) / op.scale()).collect(),
        scale: op.scale(),
        support: op.pad(&support_img).iter().map(|v| *v > 0.5).collect(),
        plan: op.plan(),
    };
    let runs: Vec<(Vec<f64>, RestartLog)> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| problem.run(method, cfg, r))
        .collect();
    let best = (0..runs.len())
        .min_by(|&a, &b| runs[a].1.final_residual.total_cmp(&runs[b].1.final_residual))
        .expect("at least one restart");
    let residual = runs[best].1.final_residual;
    let reconstruction = problem.op.crop(&runs[best].0);
    Ok(PrResult {
        reconstruction,
        residual,
        best_restart: best,
        restarts: runs.into_iter().map(|(_, log)| log).collect(),
    })
}

pub fn run_er(op: &FourierMagnitude, y: &[f64], cfg: &PrConfig) -> Result<PrResult> {
    run_method(PrMethod::Er, op, y, cfg)
}

pub fn run_hio(op: &FourierMagnitude, y: &[f64], cfg: &PrConfig) -> Result<PrResult> {
    run_method(PrMethod::Hio, op, y, cfg)
}

pub fn run_oss(op: &FourierMagnitude, y: &[f64], cfg: &PrConfig) -> Result<PrResult> {
    run_method(PrMethod::Oss, op, y, cfg)
}

pub fn run(method: PrMethod, op: &FourierMagnitude, y: &[f64], cfg: &PrConfig) -> Result<PrResult> {
    run_method(method, op, y, cfg)
}

/// `min ‖T x − truth‖ / ‖truth‖` over all circular shifts `T`, with and
/// without the conjugate flip `x(n) → x(−n)`, in the padded frame of `op`.
pub fn ambiguity_resolved_error(op: &FourierMagnitude, x: &[f64], truth: &[f64]) -> Result<f64> {
    check_len(op.input_shape().len(), x.len())?;
    check_len(op.input_shape().len(), truth.len())?;
    let (a, b) = (op.pad(x), op.pad(truth));
    let plan = op.plan();
    let (rows, cols) = (plan.rows(), plan.cols());
    let flipped: Vec<f64> = (0..rows * cols)
        .map(|k| {
            let (r, c) = (k / cols, k % cols);
            a[((rows - r) % rows) * cols + (cols - c) % cols]
        })
        .collect();
    let nb = linalg::dot(&b, &b);
    let na = linalg::dot(&a, &a);
    let fb = plan.forward_real(&b);
    let mut best = f64::INFINITY;
    for cand in [&a, &flipped] {
        // cross-correlation Σ_n cand(n − s) b(n) for every shift s
        let mut spec = plan.forward_real(cand);
        for (s, t) in spec.iter_mut().zip(&fb) {
            *s = s.conj() * t;
        }
        plan.inverse(&mut spec);
        let n = plan.len() as f64;
        let max_corr = spec.iter().map(|c| c.re / n).fold(f64::NEG_INFINITY, f64::max);
        best = best.min((na + nb - 2.0 * max_corr).max(0.0).sqrt());
    }
    Ok(if nb > 0.0 { best / nb.sqrt() } else { best })
}
