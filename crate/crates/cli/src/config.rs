//! Experiment and training configuration files (TOML, unknown keys rejected).

use std::path::{Path, PathBuf};

use serde::Deserialize;

use dps_core::experiment::{OperatorParams, Task};
use dps_core::noise::NoiseSpec;
use dps_core::score_prior::{Activation, TrainingConfig};
use dps_core::{LikelihoodKind, StepSizePolicy};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Optional raw-tensor measurement used instead of simulating one.
    pub measurement: Option<PathBuf>,
    #[serde(default)]
    pub image: ImageSpec,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub operator: OperatorParams,
    #[serde(default = "default_noise")]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub method: MethodConfig,
    #[serde(default = "default_step_size")]
    pub step_size: StepSizePolicy,
}

fn default_noise() -> NoiseSpec {
    NoiseSpec::Gaussian { sigma: 0.05 }
}

fn default_step_size() -> StepSizePolicy {
    StepSizePolicy::ResidualNormalized { zeta_prime: 1.0 }
}

/// Ground-truth images: built-in corpus names (`"all"` for every one) or PNG
/// files.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageSpec {
    pub corpus: Vec<String>,
    pub paths: Vec<PathBuf>,
    pub size: usize,
}

impl Default for ImageSpec {
    fn default() -> Self {
        Self {
            corpus: vec!["blobs".into()],
            paths: Vec::new(),
            size: dps_core::corpus::SIDE,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    /// Equal-weight mixture centred on the built-in corpus.
    Corpus { variance: f64 },
    /// Equal-weight mixture centred on the given PNG images.
    Images { paths: Vec<PathBuf>, variance: f64 },
    /// A mixture archive written by `GaussianMixturePrior::save`.
    Gmm { path: PathBuf },
    /// A network checkpoint written by `dps train`.
    Network { path: PathBuf },
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::Corpus { variance: 2e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Dps,
    Projection,
    Mcg,
    Er,
    Hio,
    Oss,
}

impl MethodKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::Dps => "dps",
            MethodKind::Projection => "projection",
            MethodKind::Mcg => "mcg",
            MethodKind::Er => "er",
            MethodKind::Hio => "hio",
            MethodKind::Oss => "oss",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Dps, Self::Projection, Self::Mcg, Self::Er, Self::Hio, Self::Oss]
            .into_iter()
            .find(|m| m.as_str() == s)
    }

    pub fn is_classical(self) -> bool {
        matches!(self, MethodKind::Er | MethodKind::Hio | MethodKind::Oss)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodConfig {
    pub kind: MethodKind,
    pub likelihood: LikelihoodKind,
    pub restarts: usize,
    /// Iterations of the classical phase-retrieval methods.
    pub iterations: usize,
    /// Number of diffusion steps; the β range is rescaled so the terminal
    /// noise level matches the 1000-step schedule.
    pub steps: usize,
    /// Trajectory logging interval in steps.
    pub log_every: usize,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            kind: MethodKind::Dps,
            likelihood: LikelihoodKind::GaussianL2,
            restarts: 1,
            iterations: 2000,
            steps: 1000,
            log_every: 10,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataSpec,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Draws from an equal-weight isotropic mixture.
    Mixture { means: Vec<Vec<f64>>, variance: f64, samples: usize },
    /// Noisy copies of the built-in corpus at `size × size`.
    Corpus { size: usize, variance: f64, samples: usize },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128, 128],
            activation: Activation::Silu,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Joins relative paths onto the config file's directory.
fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: Self = parse(path, &read(path)?)?;
        let base = base_dir(path);
        for p in cfg.image.paths.iter_mut() {
            resolve(&base, p);
        }
        if let Some(p) = cfg.measurement.as_mut() {
            resolve(&base, p);
        }
        if let Some(p) = cfg.operator.motion_kernel.as_mut() {
            resolve(&base, p);
        }
        match &mut cfg.prior {
            PriorSpec::Images { paths, .. } => paths.iter_mut().for_each(|p| resolve(&base, p)),
            PriorSpec::Gmm { path } | PriorSpec::Network { path } => resolve(&base, path),
            PriorSpec::Corpus { .. } => {}
        }
        if let Some(p) = cfg.out.as_mut() {
            resolve(&base, p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.image.corpus.is_empty() == self.image.paths.is_empty() {
            return bad("[image] needs exactly one of `corpus` or `paths`".into());
        }
        if self.image.size < 8 {
            return bad(format!("[image] size must be at least 8, got {}", self.image.size));
        }
        for name in &self.image.corpus {
            if name != "all" && !dps_core::corpus::NAMES.contains(&name.as_str()) {
                return bad(format!(
                    "unknown corpus image '{name}' (known: {})",
                    dps_core::corpus::NAMES.join(", ")
                ));
            }
        }
        let mut files: Vec<&PathBuf> = self.image.paths.iter().collect();
        files.extend(&self.measurement);
        files.extend(&self.operator.motion_kernel);
        match &self.prior {
            PriorSpec::Images { paths, .. } => files.extend(paths),
            PriorSpec::Gmm { path } | PriorSpec::Network { path } => files.push(path),
            PriorSpec::Corpus { .. } => {}
        }
        if let Some(missing) = files.iter().find(|p| !p.is_file()) {
            return bad(format!("file not found: {}", missing.display()));
        }
        if self.method.restarts == 0 || self.method.iterations == 0 || self.method.steps == 0 {
            return bad("[method] restarts, iterations and steps must be positive".into());
        }
        if self.method.kind.is_classical() && self.task != Task::PhaseRetrieval {
            return bad(format!("method {} only applies to phase_retrieval", self.method.kind.as_str()));
        }
        self.noise.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.step_size.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: Self = parse(path, &read(path)?)?;
        if let Some(p) = cfg.out.as_mut() {
            resolve(&base_dir(path), p);
        }
        Ok(cfg)
    }
}
