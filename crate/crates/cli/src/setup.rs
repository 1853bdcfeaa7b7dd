//! Turns an experiment config into problems, a score model and runs.

use std::path::Path;
use std::sync::Arc;

use dps_core::classic_pr::{PrConfig, PrMethod};
use dps_core::experiment::{self, MethodSpec, Outcome, Problem};
use dps_core::io;
use dps_core::operators::Mask;
use dps_core::score_prior::{AnalyticScore, TinyScoreNetwork};
use dps_core::{corpus, GaussianMixturePrior, NoiseSchedule, SamplerKind, ScoreModel, Shape};

use crate::config::{ExperimentConfig, MethodKind, PriorSpec};
use crate::error::CliError;

/// A named ground-truth image.
#[derive(Debug, Clone)]
pub struct Truth {
    pub name: String,
    pub shape: Shape,
    pub pixels: Vec<f64>,
}

pub fn load_truths(cfg: &ExperimentConfig) -> Result<Vec<Truth>, CliError> {
    let spec = &cfg.image;
    if !spec.paths.is_empty() {
        return spec
            .paths
            .iter()
            .map(|p| {
                let (shape, pixels) = io::load_png(p)?;
                let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
                Ok(Truth { name, shape, pixels })
            })
            .collect();
    }
    let names: Vec<&str> = if spec.corpus.iter().any(|n| n == "all") {
        corpus::NAMES.to_vec()
    } else {
        spec.corpus.iter().map(String::as_str).collect()
    };
    names
        .into_iter()
        .map(|n| {
            Ok(Truth {
                name: n.to_string(),
                shape: Shape::new(spec.size, spec.size),
                pixels: corpus::image(n, spec.size)?,
            })
        })
        .collect()
}

/// Builds the score model for images of `shape`. The analytic priors use a
/// schedule of `cfg.method.steps` steps; a network brings its own schedule.
pub fn score_model(cfg: &ExperimentConfig, shape: Shape) -> Result<Arc<dyn ScoreModel>, CliError> {
    let analytic = |prior: GaussianMixturePrior| -> Result<Arc<dyn ScoreModel>, CliError> {
        if prior.dim() != shape.len() {
            return Err(CliError::Config(format!(
                "prior dimension {} does not match {}x{} images",
                prior.dim(),
                shape.rows,
                shape.cols
            )));
        }
        let schedule = NoiseSchedule::with_steps(cfg.method.steps)?;
        Ok(Arc::new(AnalyticScore::new(Arc::new(prior), Arc::new(schedule))))
    };
    match &cfg.prior {
        PriorSpec::Corpus { variance } => {
            if shape.rows != shape.cols {
                return Err(CliError::Config("the corpus prior needs square images".into()));
            }
            analytic(corpus::corpus_prior(shape.rows, *variance)?)
        }
        PriorSpec::Images { paths, variance } => {
            let means = paths
                .iter()
                .map(|p| io::load_png(p).map(|(_, px)| px))
                .collect::<Result<Vec<_>, _>>()?;
            analytic(corpus::mixture_of(means, *variance)?)
        }
        PriorSpec::Gmm { path } => analytic(GaussianMixturePrior::load(path)?),
        PriorSpec::Network { path } => {
            let net = TinyScoreNetwork::load(path)?;
            if net.dim() != shape.len() {
                return Err(CliError::Config(format!(
                    "network {} has dimension {}, images have {}",
                    path.display(),
                    net.dim(),
                    shape.len()
                )));
            }
            if net.schedule().n_steps() != cfg.method.steps {
                return Err(CliError::Config(format!(
                    "network {} was trained with {} steps, config asks for {}",
                    path.display(),
                    net.schedule().n_steps(),
                    cfg.method.steps
                )));
            }
            Ok(Arc::new(net))
        }
    }
}

/// Builds the problem for `truth`, simulating the measurement from a stream
/// of `seed` or loading `cfg.measurement` when given.
pub fn problem(cfg: &ExperimentConfig, truth: &Truth, seed: u64) -> Result<Problem, CliError> {
    let mut p = Problem::build(cfg.task, &cfg.operator, truth.pixels.clone(), truth.shape, cfg.noise, seed)?;
    if let Some(path) = &cfg.measurement {
        let (dims, data) = io::read_tensor(path)?;
        let out = p.operator.output_shape();
        if data.len() != out.len() {
            return Err(CliError::Config(format!(
                "measurement {} has dims {dims:?}, operator produces {}x{}",
                path.display(),
                out.rows,
                out.cols
            )));
        }
        p.measurement = data;
    }
    Ok(p)
}

pub fn sampler_kind(kind: MethodKind) -> Option<SamplerKind> {
    match kind {
        MethodKind::Dps => Some(SamplerKind::Dps),
        MethodKind::Projection => Some(SamplerKind::Projection),
        MethodKind::Mcg => Some(SamplerKind::Mcg),
        _ => None,
    }
}

fn pr_method(kind: MethodKind) -> Option<PrMethod> {
    match kind {
        MethodKind::Er => Some(PrMethod::Er),
        MethodKind::Hio => Some(PrMethod::Hio),
        MethodKind::Oss => Some(PrMethod::Oss),
        _ => None,
    }
}

/// Runs the configured method. `score` is only used by the samplers.
pub fn run_method(
    cfg: &ExperimentConfig,
    problem: &Problem,
    score: Option<Arc<dyn ScoreModel>>,
    seed: u64,
) -> Result<Outcome, CliError> {
    let m = &cfg.method;
    if let Some(kind) = sampler_kind(m.kind) {
        let spec = MethodSpec {
            kind,
            policy: cfg.step_size,
            likelihood: m.likelihood,
        };
        let score = score.ok_or_else(|| CliError::Config("sampler needs a score model".into()))?;
        return Ok(experiment::run_sampler_logged(problem, score, &spec, seed, m.restarts, m.log_every)?);
    }
    let method = pr_method(m.kind).expect("classical method");
    let mut pr = PrConfig::new(Mask::full(problem.shape));
    pr.iterations = m.iterations;
    pr.restarts = m.restarts;
    pr.seed = seed;
    let (mut outcome, _) = experiment::run_classic(problem, method, &pr)?;
    if m.log_every > 1 {
        outcome.log.retain(|e| e.step % m.log_every == 0);
    }
    Ok(outcome)
}

/// Output directory: the `--out` flag, then the config's `out`, then
/// `runs/<config stem>`.
pub fn out_dir(flag: Option<&Path>, cfg_out: Option<&Path>, config_path: &Path) -> std::path::PathBuf {
    flag.or(cfg_out).map(Path::to_path_buf).unwrap_or_else(|| {
        let stem = config_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
        Path::new("runs").join(stem)
    })
}
