//! Measurement noise simulation.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Photon budget for `λ = 1`: a pixel value of 1 has 255 expected counts.
pub const FULL_SCALE_COUNTS: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// Additive `N(0, σ²)` in normalised pixel units; `σ = 0` is noise-free.
    Gaussian { sigma: f64 },
    /// Shot noise with `255·λ` expected counts at intensity 1.
    Poisson { lambda: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            NoiseSpec::Gaussian { sigma } => ("sigma", sigma),
            NoiseSpec::Poisson { lambda } => ("lambda", lambda),
        };
        let ok = match *self {
            NoiseSpec::Gaussian { .. } => v >= 0.0,
            NoiseSpec::Poisson { .. } => v > 0.0,
        };
        if v.is_finite() && ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("noise {name} out of range: {v}")))
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, y: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        match *self {
            NoiseSpec::Gaussian { sigma } => add_gaussian_noise(y, sigma, rng),
            NoiseSpec::Poisson { lambda } => add_poisson_noise(y, lambda, rng),
        }
    }

    /// Conversion from normalised units to likelihood units.
    pub fn counts_per_unit(&self) -> f64 {
        match *self {
            NoiseSpec::Gaussian { .. } => 1.0,
            NoiseSpec::Poisson { lambda } => FULL_SCALE_COUNTS * lambda,
        }
    }
}

pub fn add_gaussian_noise<R: Rng + ?Sized>(y: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::invalid(format!("gaussian sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(y.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("gaussian noise: {e}")))?;
    Ok(y.iter().map(|v| v + normal.sample(rng)).collect())
}

/// Clamps `y` to `[0, 1]`, draws `Poisson(255·λ·y)` counts, clips them to
/// `[0, 255·λ]` and rescales back to `[0, 1]`.
pub fn add_poisson_noise<R: Rng + ?Sized>(y: &[f64], lambda: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::invalid(format!("poisson lambda must be positive, got {lambda}")));
    }
    let peak = FULL_SCALE_COUNTS * lambda;
    y.iter()
        .map(|v| {
            let mean = v.clamp(0.0, 1.0) * peak;
            if mean == 0.0 {
                return Ok(0.0);
            }
            let d = Poisson::new(mean).map_err(|e| Error::invalid(format!("poisson noise: {e}")))?;
            let counts: f64 = d.sample(rng);
            Ok(counts.clamp(0.0, peak) / peak)
        })
        .collect()
}
