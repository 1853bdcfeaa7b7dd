//! Nonlinear blur `b(C^ψ x)` with camera response `b(u) = max(u, ε)^{1/γ}`.

use super::convolution::Convolution;
use super::{check_input, check_output, ForwardOperator, Shape};
use crate::error::{Error, Result};

/// Floor applied before the response so its derivative stays finite.
pub const RESPONSE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct NonlinearBlur {
    blur: Convolution,
    gamma: f64,
}

impl NonlinearBlur {
    pub fn new(blur: Convolution, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self { blur, gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn blur(&self) -> &Convolution {
        &self.blur
    }
}

impl ForwardOperator for NonlinearBlur {
    fn name(&self) -> &str {
        "nonlinear_blur"
    }
    fn input_shape(&self) -> Shape {
        self.blur.input_shape()
    }
    fn output_shape(&self) -> Shape {
        self.blur.output_shape()
    }
    fn is_linear(&self) -> bool {
        false
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_input(self, x)?;
        let p = 1.0 / self.gamma;
        Ok(self.blur.apply(x)?.into_iter().map(|u| u.max(RESPONSE_FLOOR).powf(p)).collect())
    }
    fn vjp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_output(self, v)?;
        let p = 1.0 / self.gamma;
        let u = self.blur.apply(x)?;
        // the floor is flat, so clipped pixels pass no gradient
        let g: Vec<f64> = u
            .iter()
            .zip(v)
            .map(|(&u, &vi)| if u > RESPONSE_FLOOR { vi * p * u.powf(p - 1.0) } else { 0.0 })
            .collect();
        self.blur.vjp(x, &g)
    }
}
