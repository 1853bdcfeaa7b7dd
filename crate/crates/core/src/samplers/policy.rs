use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step size `ζ_i` applied to the data-fit gradient.
///
/// The residual-normalised policies divide by `‖y − A(x̂₀)‖` (in likelihood
/// units) so that `ζ_i · ‖y − A(x̂₀)‖` equals the configured `ζ′`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSizePolicy {
    ResidualNormalized { zeta_prime: f64 },
    Constant { zeta: f64 },
    /// `ζ′_k = ζ_init (1 − k/N)` after `k` completed steps, residual-normalised.
    LinearDecay { zeta_init: f64 },
    /// `ζ′_k = ζ_init γ^k` after `k` completed steps, residual-normalised.
    ExponentialDecay { zeta_init: f64, gamma: f64 },
    /// `ζ = 1/σ²`, the unnormalised Gaussian likelihood weight.
    InverseSigmaSquared { sigma: f64 },
}

impl StepSizePolicy {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")))
            }
        };
        match *self {
            StepSizePolicy::ResidualNormalized { zeta_prime } => nonneg("zeta_prime", zeta_prime),
            StepSizePolicy::Constant { zeta } => nonneg("zeta", zeta),
            StepSizePolicy::LinearDecay { zeta_init } => nonneg("zeta_init", zeta_init),
            StepSizePolicy::ExponentialDecay { zeta_init, gamma } => {
                nonneg("zeta_init", zeta_init)?;
                if gamma > 0.0 && gamma < 1.0 {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("gamma must lie in (0, 1), got {gamma}")))
                }
            }
            StepSizePolicy::InverseSigmaSquared { sigma } => {
                if sigma.is_finite() && sigma > 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("sigma must be positive, got {sigma}")))
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StepSizePolicy::ResidualNormalized { .. } => "residual_normalized",
            StepSizePolicy::Constant { .. } => "constant",
            StepSizePolicy::LinearDecay { .. } => "linear_decay",
            StepSizePolicy::ExponentialDecay { .. } => "exponential_decay",
            StepSizePolicy::InverseSigmaSquared { .. } => "inverse_sigma_squared",
        }
    }

    /// `ζ_i` after `elapsed` completed steps of an `n_steps` run. A zero
    /// residual yields a zero step for the normalised policies.
    pub fn step_size(&self, elapsed: usize, n_steps: usize, residual_norm: f64) -> f64 {
        let normalised = |zp: f64| if residual_norm > 0.0 { zp / residual_norm } else { 0.0 };
        match *self {
            StepSizePolicy::ResidualNormalized { zeta_prime } => normalised(zeta_prime),
            StepSizePolicy::Constant { zeta } => zeta,
            StepSizePolicy::LinearDecay { zeta_init } => {
                normalised(zeta_init * (1.0 - elapsed as f64 / n_steps as f64))
            }
            StepSizePolicy::ExponentialDecay { zeta_init, gamma } => normalised(zeta_init * gamma.powi(elapsed as i32)),
            StepSizePolicy::InverseSigmaSquared { sigma } => 1.0 / (sigma * sigma),
        }
    }

    /// True when every step size is identically zero.
    pub fn is_off(&self) -> bool {
        match *self {
            StepSizePolicy::ResidualNormalized { zeta_prime } => zeta_prime == 0.0,
            StepSizePolicy::Constant { zeta } => zeta == 0.0,
            StepSizePolicy::LinearDecay { zeta_init } | StepSizePolicy::ExponentialDecay { zeta_init, .. } => {
                zeta_init == 0.0
            }
            StepSizePolicy::InverseSigmaSquared { .. } => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_normalised_product_is_zeta_prime() {
        let p = StepSizePolicy::ResidualNormalized { zeta_prime: 0.3 };
        for r in [1e-3, 0.7, 12.0, 4e4] {
            assert_eq!(p.step_size(10, 1000, r) * r, 0.3);
        }
        assert_eq!(p.step_size(0, 1000, 0.0), 0.0);
    }

    #[test]
    fn decays() {
        let lin = StepSizePolicy::LinearDecay { zeta_init: 1.0 };
        assert_eq!(lin.step_size(0, 100, 1.0), 1.0);
        assert!((lin.step_size(50, 100, 1.0) - 0.5).abs() < 1e-15);
        let exp = StepSizePolicy::ExponentialDecay { zeta_init: 1.0, gamma: 0.99 };
        assert!((exp.step_size(2, 100, 2.0) - 0.9801 / 2.0).abs() < 1e-15);
        assert!((StepSizePolicy::InverseSigmaSquared { sigma: 0.05 }.step_size(3, 10, 9.0) - 400.0).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(StepSizePolicy::ExponentialDecay { zeta_init: 1.0, gamma: 1.0 }.validate().is_err());
        assert!(StepSizePolicy::Constant { zeta: f64::NAN }.validate().is_err());
        assert!(StepSizePolicy::InverseSigmaSquared { sigma: 0.0 }.validate().is_err());
        assert!(StepSizePolicy::ResidualNormalized { zeta_prime: 0.0 }.validate().is_ok());
    }
}
