//! Data-fit functionals `‖y − A(x̂₀)‖²` and their Poisson variants.
//!
//! A [`LikelihoodModel`] stores the measurement in likelihood units: the
//! normalised intensity for Gaussian noise and photon counts for the Poisson
//! family. The operator output is mapped to the same units by multiplying
//! with [`LikelihoodModel::scale`], so `ŷ = scale · A(x)`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::operators::ForwardOperator;

/// Predicted intensities at or below this value make the log-based Poisson
/// variants undefined.
pub const INTENSITY_FLOOR: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodKind {
    GaussianL2,
    /// Shot-noise weighted least squares with `Λ_jj = 1 / (2 max(y_j, 1))`.
    PoissonShot,
    /// Exact Poisson negative log-likelihood `Σ ŷ_j − y_j log ŷ_j`.
    PoissonDirect,
    /// Gaussian with variance `ŷ_j`, including the log-normaliser.
    PoissonGaussian,
    /// Unweighted least squares on counts.
    PoissonLs,
}

impl LikelihoodKind {
    pub const ALL: [LikelihoodKind; 5] = [
        LikelihoodKind::GaussianL2,
        LikelihoodKind::PoissonShot,
        LikelihoodKind::PoissonDirect,
        LikelihoodKind::PoissonGaussian,
        LikelihoodKind::PoissonLs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LikelihoodKind::GaussianL2 => "gaussian_l2",
            LikelihoodKind::PoissonShot => "poisson_shot",
            LikelihoodKind::PoissonDirect => "poisson_direct",
            LikelihoodKind::PoissonGaussian => "poisson_gaussian",
            LikelihoodKind::PoissonLs => "poisson_ls",
        }
    }

    pub fn is_poisson(self) -> bool {
        self != LikelihoodKind::GaussianL2
    }

    /// Variants whose value depends on `log ŷ`.
    pub fn needs_positive_prediction(self) -> bool {
        matches!(self, LikelihoodKind::PoissonDirect | LikelihoodKind::PoissonGaussian)
    }
}

impl FromStr for LikelihoodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown likelihood `{s}`")))
    }
}

impl std::fmt::Display for LikelihoodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodModel {
    kind: LikelihoodKind,
    y: Vec<f64>,
    scale: f64,
    sigma: Option<f64>,
}

impl LikelihoodModel {
    /// Gaussian `ℓ₂` fit with noise level `sigma` (informational; the step
    /// size is chosen by the sampler).
    pub fn gaussian(y: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::invalid(format!("noise sigma must be non-negative, got {sigma}")));
        }
        check_finite("measurement", &y)?;
        Ok(Self {
            kind: LikelihoodKind::GaussianL2,
            y,
            scale: 1.0,
            sigma: Some(sigma),
        })
    }

    /// A Poisson-family model. `y` is given in operator units and converted
    /// to counts with `counts_per_unit` (255·λ for the standard simulation).
    pub fn poisson(kind: LikelihoodKind, y: &[f64], counts_per_unit: f64) -> Result<Self> {
        if !kind.is_poisson() {
            return Err(Error::invalid("use LikelihoodModel::gaussian for gaussian_l2"));
        }
        if !(counts_per_unit.is_finite() && counts_per_unit > 0.0) {
            return Err(Error::invalid(format!("counts per unit must be positive, got {counts_per_unit}")));
        }
        check_finite("measurement", y)?;
        Ok(Self {
            kind,
            y: y.iter().map(|v| v * counts_per_unit).collect(),
            scale: counts_per_unit,
            sigma: None,
        })
    }

    /// A model with `y` already in likelihood units and unit scale.
    pub fn with_kind(kind: LikelihoodKind, y: Vec<f64>) -> Result<Self> {
        check_finite("measurement", &y)?;
        Ok(Self {
            kind,
            y,
            scale: 1.0,
            sigma: None,
        })
    }

    pub fn kind(&self) -> LikelihoodKind {
        self.kind
    }

    /// Measurement in likelihood units.
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    /// `ŷ = scale · A(x)`
    pub fn predict(&self, ax: &[f64]) -> Vec<f64> {
        ax.iter().map(|v| v * self.scale).collect()
    }

    /// `y − ŷ` in likelihood units.
    pub fn residual(&self, y_hat: &[f64]) -> Result<Vec<f64>> {
        check_len(self.y.len(), y_hat.len())?;
        Ok(self.y.iter().zip(y_hat).map(|(y, p)| y - p).collect())
    }

    fn shot_weight(y: f64) -> f64 {
        y.max(1.0)
    }

    /// The data-fit value at `ŷ`. The log-based variants return `+∞` when
    /// any prediction is at or below [`INTENSITY_FLOOR`].
    pub fn data_fit(&self, y_hat: &[f64]) -> Result<f64> {
        check_len(self.y.len(), y_hat.len())?;
        let pairs = self.y.iter().zip(y_hat);
        if self.kind.needs_positive_prediction() && y_hat.iter().any(|p| *p <= INTENSITY_FLOOR) {
            return Ok(f64::INFINITY);
        }
        Ok(match self.kind {
            LikelihoodKind::GaussianL2 | LikelihoodKind::PoissonLs => pairs.map(|(y, p)| (y - p).powi(2)).sum(),
            LikelihoodKind::PoissonShot => pairs.map(|(y, p)| (y - p).powi(2) / (2.0 * Self::shot_weight(*y))).sum(),
            LikelihoodKind::PoissonDirect => pairs.map(|(y, p)| p - y * p.ln()).sum(),
            LikelihoodKind::PoissonGaussian => pairs
                .map(|(y, p)| 0.5 * (2.0 * std::f64::consts::PI * p).ln() + (y - p).powi(2) / (2.0 * p))
                .sum(),
        })
    }

    /// `∂ data_fit / ∂ŷ`. Fails with [`Error::NonFinite`] where the fit is
    /// undefined.
    pub fn fit_cotangent(&self, y_hat: &[f64]) -> Result<Vec<f64>> {
        check_len(self.y.len(), y_hat.len())?;
        if self.kind.needs_positive_prediction() && y_hat.iter().any(|p| *p <= INTENSITY_FLOOR) {
            return Err(Error::NonFinite(format!(
                "{}: predicted intensity at or below {INTENSITY_FLOOR}",
                self.kind
            )));
        }
        let pairs = self.y.iter().zip(y_hat);
        Ok(match self.kind {
            LikelihoodKind::GaussianL2 | LikelihoodKind::PoissonLs => pairs.map(|(y, p)| 2.0 * (p - y)).collect(),
            LikelihoodKind::PoissonShot => pairs.map(|(y, p)| (p - y) / Self::shot_weight(*y)).collect(),
            LikelihoodKind::PoissonDirect => pairs.map(|(y, p)| 1.0 - y / p).collect(),
            LikelihoodKind::PoissonGaussian => pairs
                .map(|(y, p)| {
                    let r = y - p;
                    0.5 / p - r / p - r * r / (2.0 * p * p)
                })
                .collect(),
        })
    }

    /// Gradient of the data fit with respect to `x̂₀`, chained through the
    /// operator: `scale · vjp(x̂₀, ∂fit/∂ŷ)`.
    pub fn data_fit_gradient(&self, op: &dyn ForwardOperator, x0_hat: &[f64]) -> Result<Vec<f64>> {
        check_finite("x0_hat", x0_hat)?;
        let y_hat = self.predict(&op.apply(x0_hat)?);
        let cot = self.fit_cotangent(&y_hat)?;
        let g = op.vjp(x0_hat, &cot)?;
        Ok(g.into_iter().map(|v| v * self.scale).collect())
    }
}

fn ln_factorial(k: u64) -> f64 {
    (2..=k).map(|j| (j as f64).ln()).sum()
}

/// Relative error of the Gaussian `N(k; μ, μ)` approximation to the Poisson
/// pmf, taken as the maximum over integer bins with `|k − μ| < 1` (the bins
/// adjacent to the mode), restricted to `μ ± 5√μ`.
pub fn poisson_gaussian_approx_error(mean: f64) -> Result<f64> {
    if !(mean.is_finite() && mean > 0.0) {
        return Err(Error::invalid(format!("mean must be positive, got {mean}")));
    }
    let lo = (mean - 5.0 * mean.sqrt()).max(0.0).ceil() as u64;
    let hi = (mean + 5.0 * mean.sqrt()).floor() as u64;
    let mut worst: f64 = 0.0;
    for k in lo..=hi {
        let kf = k as f64;
        if (kf - mean).abs() >= 1.0 {
            continue;
        }
        let log_pmf = kf * mean.ln() - mean - ln_factorial(k);
        let log_density = -0.5 * (2.0 * std::f64::consts::PI * mean).ln() - (kf - mean).powi(2) / (2.0 * mean);
        worst = worst.max((1.0 - (log_density - log_pmf).exp()).abs());
    }
    Ok(worst)
}
