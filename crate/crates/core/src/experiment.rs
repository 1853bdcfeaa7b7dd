//! Problem construction and single-run evaluation shared by the CLI, the
//! benches and the integration tests.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classic_pr::{self, PrConfig, PrMethod};
use crate::error::{check_len, Error, Result};
use crate::likelihood::{LikelihoodKind, LikelihoodModel};
use crate::metrics;
use crate::noise::NoiseSpec;
use crate::operators::{
    gaussian_kernel, motion_kernel_load, Boundary, Convolution, DownsampleMode, Downsampling, ForwardOperator,
    FourierMagnitude, Identity, Inpainting, Mask, NonlinearBlur, Shape,
};
use crate::samplers::{LogEntry, Sampler, SamplerConfig, SamplerKind, StepSizePolicy};
use crate::score_prior::ScoreModel;
use crate::{linalg, rng_from_seed};

/// Sub-streams of a problem seed.
const MASK_STREAM: u64 = 1 << 40;
const NOISE_STREAM: u64 = 1 << 41;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Identity,
    Sr,
    InpaintBox,
    InpaintRandom,
    DeblurGauss,
    DeblurMotion,
    DeblurNonlinear,
    PhaseRetrieval,
}

impl Task {
    pub const ALL: [Task; 8] = [
        Task::Identity,
        Task::Sr,
        Task::InpaintBox,
        Task::InpaintRandom,
        Task::DeblurGauss,
        Task::DeblurMotion,
        Task::DeblurNonlinear,
        Task::PhaseRetrieval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Identity => "identity",
            Task::Sr => "sr",
            Task::InpaintBox => "inpaint_box",
            Task::InpaintRandom => "inpaint_random",
            Task::DeblurGauss => "deblur_gauss",
            Task::DeblurMotion => "deblur_motion",
            Task::DeblurNonlinear => "deblur_nonlinear",
            Task::PhaseRetrieval => "phase_retrieval",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task '{s}'")))
    }
}

/// Operator settings. Defaults follow the paper's settings, scaled where the
/// image size matters: the 61-tap, σ = 3 Gaussian blur used on 256-pixel
/// images becomes a 9-tap, σ = 1 blur on the 64-pixel corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorParams {
    pub sr_factor: usize,
    pub sr_mode: DownsampleMode,
    /// Side of the hidden centred box as a fraction of the image side.
    pub box_fraction: f64,
    /// Fraction of pixels kept by random inpainting.
    pub keep_fraction: f64,
    pub blur_size: usize,
    pub blur_sigma: f64,
    pub motion_kernel: Option<PathBuf>,
    pub boundary: Boundary,
    pub gamma: f64,
    pub oversample: f64,
}

impl Default for OperatorParams {
    fn default() -> Self {
        Self {
            sr_factor: 4,
            sr_mode: DownsampleMode::BlockAverage,
            box_fraction: 0.5,
            keep_fraction: 0.08,
            blur_size: 9,
            blur_sigma: 1.0,
            motion_kernel: None,
            boundary: Boundary::Circular,
            gamma: 2.2,
            oversample: 2.0,
        }
    }
}

/// Builds the forward operator for `task` on images of `shape`. Random
/// masks are drawn from a stream of `seed`.
pub fn build_operator(task: Task, params: &OperatorParams, shape: Shape, seed: u64) -> Result<Arc<dyn ForwardOperator>> {
    let gauss = || -> Result<Convolution> {
        Convolution::new(shape, gaussian_kernel(params.blur_size, params.blur_sigma)?, params.boundary)
    };
    let op: Arc<dyn ForwardOperator> = match task {
        Task::Identity => Arc::new(Identity::new(shape)),
        Task::Sr => Arc::new(Downsampling::new(shape, params.sr_factor, params.sr_mode)?),
        Task::InpaintBox => Arc::new(Inpainting::new(Mask::centered_box(shape, params.box_fraction)?)?),
        Task::InpaintRandom => {
            let mut rng = rng_from_seed(seed, MASK_STREAM);
            Arc::new(Inpainting::new(Mask::random(shape, params.keep_fraction, &mut rng)?)?)
        }
        Task::DeblurGauss => Arc::new(gauss()?),
        Task::DeblurMotion => {
            let path = params
                .motion_kernel
                .as_ref()
                .ok_or_else(|| Error::invalid("deblur_motion needs operator.motion_kernel"))?;
            Arc::new(Convolution::new(shape, motion_kernel_load(path)?, params.boundary)?)
        }
        Task::DeblurNonlinear => Arc::new(NonlinearBlur::new(gauss()?, params.gamma)?),
        Task::PhaseRetrieval => Arc::new(FourierMagnitude::new(shape, params.oversample)?.orthonormal()),
    };
    Ok(op)
}

/// A ground truth, its operator and one noisy measurement.
#[derive(Clone)]
pub struct Problem {
    pub task: Task,
    pub shape: Shape,
    pub truth: Vec<f64>,
    pub operator: Arc<dyn ForwardOperator>,
    /// Noisy measurement in normalised units.
    pub measurement: Vec<f64>,
    pub noise: NoiseSpec,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("task", &self.task)
            .field("shape", &self.shape)
            .field("operator", &self.operator.name())
            .field("noise", &self.noise)
            .finish_non_exhaustive()
    }
}

impl Problem {
    /// Measures `truth` through `operator` and adds noise from a stream of
    /// `seed`.
    pub fn new(
        task: Task,
        truth: Vec<f64>,
        operator: Arc<dyn ForwardOperator>,
        noise: NoiseSpec,
        seed: u64,
    ) -> Result<Self> {
        noise.validate()?;
        let shape = operator.input_shape();
        check_len(shape.len(), truth.len())?;
        let clean = operator.apply(&truth)?;
        let measurement = noise.apply(&clean, &mut rng_from_seed(seed, NOISE_STREAM))?;
        Ok(Self {
            task,
            shape,
            truth,
            operator,
            measurement,
            noise,
        })
    }

    pub fn build(task: Task, params: &OperatorParams, truth: Vec<f64>, shape: Shape, noise: NoiseSpec, seed: u64) -> Result<Self> {
        let op = build_operator(task, params, shape, seed)?;
        Self::new(task, truth, op, noise, seed)
    }

    /// The likelihood of `kind` for this measurement. Gaussian fits use the
    /// normalised measurement; Poisson variants work in photon counts.
    pub fn likelihood(&self, kind: LikelihoodKind) -> Result<LikelihoodModel> {
        match (kind, self.noise) {
            (LikelihoodKind::GaussianL2, NoiseSpec::Gaussian { sigma }) => {
                LikelihoodModel::gaussian(self.measurement.clone(), sigma)
            }
            (LikelihoodKind::GaussianL2, NoiseSpec::Poisson { .. }) => {
                LikelihoodModel::with_kind(kind, self.measurement.clone())
            }
            (k, noise) => LikelihoodModel::poisson(k, &self.measurement, noise.counts_per_unit()),
        }
    }

    /// `‖y − A(x)‖` in normalised units.
    pub fn residual(&self, x: &[f64]) -> Result<f64> {
        Ok(linalg::distance(&self.measurement, &self.operator.apply(x)?))
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Scores> {
        let clamped: Vec<f64> = x.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Scores {
            psnr: metrics::psnr(&clamped, &self.truth)?,
            ssim: metrics::ssim(&clamped, &self.truth, self.shape)?,
            residual: self.residual(x)?,
        })
    }
}

/// PSNR and SSIM of the clamped image; residual of the raw one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub psnr: f64,
    pub ssim: f64,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub reconstruction: Vec<f64>,
    pub scores: Scores,
    /// Step at which the chain aborted; the reconstruction is then the last
    /// finite `x̂₀`.
    pub aborted_at: Option<usize>,
    pub abort_reason: Option<String>,
    pub log: Vec<LogEntry>,
    pub restart: usize,
}

impl Outcome {
    pub fn finished(&self) -> bool {
        self.aborted_at.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSpec {
    pub kind: SamplerKind,
    pub policy: StepSizePolicy,
    pub likelihood: LikelihoodKind,
}

impl MethodSpec {
    pub fn dps(zeta_prime: f64) -> Self {
        Self {
            kind: SamplerKind::Dps,
            policy: StepSizePolicy::ResidualNormalized { zeta_prime },
            likelihood: LikelihoodKind::GaussianL2,
        }
    }
}

/// Runs `restarts` chains and keeps the one with the smallest measurement
/// residual. Aborted chains are scored on their last finite `x̂₀` and only
/// win when every chain aborted.
pub fn run_sampler(
    problem: &Problem,
    score: Arc<dyn ScoreModel>,
    method: &MethodSpec,
    seed: u64,
    restarts: usize,
) -> Result<Outcome> {
    run_sampler_logged(problem, score, method, seed, restarts, 50)
}

/// [`run_sampler`] with a trajectory entry every `log_every` steps.
pub fn run_sampler_logged(
    problem: &Problem,
    score: Arc<dyn ScoreModel>,
    method: &MethodSpec,
    seed: u64,
    restarts: usize,
    log_every: usize,
) -> Result<Outcome> {
    if restarts == 0 {
        return Err(Error::invalid("restarts must be at least 1"));
    }
    let likelihood = Arc::new(problem.likelihood(method.likelihood)?);
    let mut cfg = SamplerConfig::new(score, problem.operator.clone(), likelihood, method.policy, method.kind);
    cfg.seed = seed;
    cfg.log_every = log_every;
    let dim = problem.shape.len();
    let sampler = Sampler::new(cfg)?;
    let mut outcomes = Vec::with_capacity(restarts);
    for (r, res) in sampler.run_chains(restarts).into_iter().enumerate() {
        let outcome = match res {
            Ok(out) => Outcome {
                scores: problem.evaluate(&out.x0_hat)?,
                reconstruction: out.x0_hat,
                aborted_at: None,
                abort_reason: None,
                log: out.log,
                restart: r,
            },
            Err(e) => {
                let x = e.last_finite_x0_hat.clone().unwrap_or_else(|| vec![0.0; dim]);
                let scores = problem.evaluate(&x).unwrap_or(Scores {
                    psnr: f64::NEG_INFINITY,
                    ssim: f64::NEG_INFINITY,
                    residual: f64::INFINITY,
                });
                Outcome {
                    reconstruction: x,
                    scores,
                    aborted_at: Some(e.step),
                    abort_reason: Some(e.to_string()),
                    log: e.recent,
                    restart: r,
                }
            }
        };
        outcomes.push(outcome);
    }
    let best = outcomes
        .into_iter()
        .min_by(|a, b| {
            (a.aborted_at.is_some(), a.scores.residual).partial_cmp(&(b.aborted_at.is_some(), b.scores.residual)).unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("restarts >= 1");
    Ok(best)
}

/// Runs a classical phase-retrieval method with the support and iteration
/// settings of `cfg`; its seed and restart count are used as given. The
/// trajectory holds the best restart's residual before each Fourier step.
/// Also returns the ambiguity-resolved relative error.
pub fn run_classic(problem: &Problem, method: PrMethod, cfg: &PrConfig) -> Result<(Outcome, f64)> {
    let op = FourierMagnitude::new(problem.shape, fourier_ratio(problem)?)?.orthonormal();
    let res = classic_pr::run(method, &op, &problem.measurement, cfg)?;
    let err = classic_pr::ambiguity_resolved_error(&op, &res.reconstruction, &problem.truth)?;
    let log = res.restarts[res.best_restart]
        .residuals
        .iter()
        .enumerate()
        .map(|(k, &residual)| LogEntry {
            step: k,
            residual,
            step_size: 0.0,
            x0hat_norm: f64::NAN,
        })
        .collect();
    let outcome = Outcome {
        scores: problem.evaluate(&res.reconstruction)?,
        reconstruction: res.reconstruction,
        aborted_at: None,
        abort_reason: None,
        log,
        restart: res.best_restart,
    };
    Ok((outcome, err))
}

fn fourier_ratio(problem: &Problem) -> Result<f64> {
    if problem.task != Task::PhaseRetrieval {
        return Err(Error::invalid(format!("task {} is not phase retrieval", problem.task)));
    }
    let padded = problem.operator.output_shape();
    Ok(padded.rows as f64 / problem.shape.rows as f64)
}

/// Ambiguity-resolved relative error of `x` for a phase-retrieval problem.
pub fn phase_retrieval_error(problem: &Problem, x: &[f64]) -> Result<f64> {
    let op = FourierMagnitude::new(problem.shape, fourier_ratio(problem)?)?.orthonormal();
    classic_pr::ambiguity_resolved_error(&op, x, &problem.truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::schedule::NoiseSchedule;
    use crate::score_prior::AnalyticScore;

    #[test]
    fn task_names_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.as_str().parse::<Task>().unwrap(), t);
        }
        assert!("deblur".parse::<Task>().is_err());
    }

    #[test]
    fn every_task_builds() {
        let shape = Shape::new(16, 16);
        let params = OperatorParams {
            blur_size: 9,
            ..OperatorParams::default()
        };
        let truth = corpus::image("blobs", 16).unwrap();
        for t in Task::ALL {
            if t == Task::DeblurMotion {
                assert!(build_operator(t, &params, shape, 0).is_err());
                continue;
            }
            let p = Problem::build(t, &params, truth.clone(), shape, NoiseSpec::Gaussian { sigma: 0.05 }, 3).unwrap();
            assert_eq!(p.measurement.len(), p.operator.output_shape().len());
        }
    }

    #[test]
    fn measurement_is_seeded() {
        let shape = Shape::new(16, 16);
        let truth = corpus::image("rings", 16).unwrap();
        let params = OperatorParams::default();
        let noise = NoiseSpec::Poisson { lambda: 1.0 };
        let a = Problem::build(Task::InpaintRandom, &params, truth.clone(), shape, noise, 9).unwrap();
        let b = Problem::build(Task::InpaintRandom, &params, truth.clone(), shape, noise, 9).unwrap();
        let c = Problem::build(Task::InpaintRandom, &params, truth, shape, noise, 10).unwrap();
        assert_eq!(a.measurement, b.measurement);
        assert_ne!(a.measurement, c.measurement);
    }

    #[test]
    fn identity_easy_instance() {
        // one component prior at the truth: DPS recovers it
        let truth = corpus::image("glyph_p", 16).unwrap();
        let shape = Shape::new(16, 16);
        let prior = corpus::mixture_of(vec![truth.clone()], 1e-4).unwrap();
        let schedule = Arc::new(NoiseSchedule::linear(200, 1e-4, 0.1).unwrap());
        let score: Arc<dyn ScoreModel> = Arc::new(AnalyticScore::new(Arc::new(prior), schedule));
        let p = Problem::build(Task::Identity, &OperatorParams::default(), truth, shape, NoiseSpec::Gaussian { sigma: 0.01 }, 1).unwrap();
        let out = run_sampler(&p, score, &MethodSpec::dps(1.0), 0, 2).unwrap();
        assert!(out.finished());
        assert!(out.scores.psnr > 30.0, "{}", out.scores.psnr);
    }
}
