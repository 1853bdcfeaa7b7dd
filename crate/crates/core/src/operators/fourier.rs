//! Oversampled Fourier magnitude `|F P x|` for phase retrieval.

use rustfft::num_complex::Complex64;

use super::fft::Fft2;
use super::{check_input, check_output, ForwardOperator, Shape};
use crate::error::{Error, Result};

/// Bins with a smaller magnitude are treated as zero by the vjp.
const ZERO_MAGNITUDE: f64 = 0.0;

/// The image is zero-padded at the bottom and right to
/// `ceil(ratio * side)` along each axis, then transformed with an
/// unnormalised DFT, or a unitary one after [`FourierMagnitude::orthonormal`].
#[derive(Debug, Clone)]
pub struct FourierMagnitude {
    shape: Shape,
    padded: Shape,
    ratio: f64,
    scale: f64,
    plan: Fft2,
}

impl FourierMagnitude {
    pub fn new(shape: Shape, oversample_ratio: f64) -> Result<Self> {
        if !(oversample_ratio.is_finite() && oversample_ratio >= 1.0) {
            return Err(Error::invalid(format!("oversampling ratio must be >= 1, got {oversample_ratio}")));
        }
        if shape.is_empty() {
            return Err(Error::invalid("empty image shape"));
        }
        let padded = Shape::new(
            (oversample_ratio * shape.rows as f64).ceil() as usize,
            (oversample_ratio * shape.cols as f64).ceil() as usize,
        );
        Ok(Self {
            shape,
            padded,
            ratio: oversample_ratio,
            scale: 1.0,
            plan: Fft2::new(padded.rows, padded.cols),
        })
    }

    /// Scales the transform by `1/sqrt(n)` over the padded frame, so the
    /// operator has unit Jacobian norm and `‖A x‖ = ‖x‖`.
    pub fn orthonormal(mut self) -> Self {
        self.scale = 1.0 / (self.padded.len() as f64).sqrt();
        self
    }

    /// Factor applied to the raw DFT: 1, or `1/sqrt(n)` when orthonormal.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn padded_shape(&self) -> Shape {
        self.padded
    }

    pub fn plan(&self) -> &Fft2 {
        &self.plan
    }

    pub fn pad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.padded.len()];
        for r in 0..self.shape.rows {
            out[r * self.padded.cols..r * self.padded.cols + self.shape.cols]
                .copy_from_slice(&x[r * self.shape.cols..(r + 1) * self.shape.cols]);
        }
        out
    }

    pub fn crop(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.shape.len());
        for r in 0..self.shape.rows {
            out.extend_from_slice(&x[r * self.padded.cols..r * self.padded.cols + self.shape.cols]);
        }
        out
    }

    /// Full complex spectrum of the padded image.
    pub fn spectrum(&self, x: &[f64]) -> Result<Vec<Complex64>> {
        check_input(self, x)?;
        let mut spec = self.plan.forward_real(&self.pad(x));
        if self.scale != 1.0 {
            spec.iter_mut().for_each(|c| *c *= self.scale);
        }
        Ok(spec)
    }
}

impl ForwardOperator for FourierMagnitude {
    fn name(&self) -> &str {
        "fourier_magnitude"
    }
    fn input_shape(&self) -> Shape {
        self.shape
    }
    fn output_shape(&self) -> Shape {
        self.padded
    }
    fn is_linear(&self) -> bool {
        false
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.spectrum(x)?.iter().map(|c| c.norm()).collect())
    }
    /// `crop(Re(IDFT(v · Y / |Y|)))` with zero-magnitude bins contributing 0.
    fn vjp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_output(self, v)?;
        let mut spec = self.spectrum(x)?;
        for (s, vi) in spec.iter_mut().zip(v) {
            let m = s.norm();
            *s = if m > ZERO_MAGNITUDE { *s * (vi / m) } else { Complex64::default() };
        }
        self.plan.inverse(&mut spec);
        let re: Vec<f64> = spec.iter().map(|c| c.re * self.scale).collect();
        Ok(self.crop(&re))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::rng_from_seed;

    #[test]
    fn zero_maps_to_zero() {
        let op = FourierMagnitude::new(Shape::new(4, 4), 2.0).unwrap();
        assert!(op.apply(&[0.0; 16]).unwrap().iter().all(|v| *v == 0.0));
        assert!(op.vjp(&[0.0; 16], &[1.0; 64]).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let op = FourierMagnitude::new(Shape::new(4, 4), 2.0).unwrap();
        let mut x = [0.0; 16];
        x[5] = 0.75;
        assert!(op.apply(&x).unwrap().iter().all(|v| (v - 0.75).abs() < 1e-14));
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut rng = rng_from_seed(10, 0);
        for op in [
            FourierMagnitude::new(Shape::new(8, 8), 2.0).unwrap(),
            FourierMagnitude::new(Shape::new(8, 8), 2.0).unwrap().orthonormal(),
        ] {
            let x = linalg::standard_normal(&mut rng, 64);
            let y = op.apply(&x).unwrap();
            let v: Vec<f64> = linalg::standard_normal(&mut rng, y.len())
                .iter()
                .zip(&y)
                .map(|(vi, yi)| if *yi < 1e-8 { 0.0 } else { *vi })
                .collect();
            let got = op.vjp(&x, &v).unwrap();
            let h = 1e-6;
            let fd: Vec<f64> = (0..64)
                .map(|j| {
                    let mut p = x.clone();
                    let mut m = x.clone();
                    p[j] += h;
                    m[j] -= h;
                    (linalg::dot(&v, &op.apply(&p).unwrap()) - linalg::dot(&v, &op.apply(&m).unwrap())) / (2.0 * h)
                })
                .collect();
            assert!(linalg::distance(&got, &fd) < 1e-4 * linalg::norm(&fd));
        }
    }

    #[test]
    fn orthonormal_preserves_norm() {
        let mut rng = rng_from_seed(11, 0);
        let op = FourierMagnitude::new(Shape::new(6, 5), 2.0).unwrap().orthonormal();
        let x = linalg::standard_normal(&mut rng, 30);
        let y = op.apply(&x).unwrap();
        assert!((linalg::norm(&y) - linalg::norm(&x)).abs() < 1e-12 * linalg::norm(&x));
        assert!((op.scale() - 1.0 / 120f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn padding_size_rounds_up() {
        let op = FourierMagnitude::new(Shape::new(5, 3), 1.5).unwrap();
        assert_eq!(op.padded_shape(), Shape::new(8, 5));
        assert!(FourierMagnitude::new(Shape::new(5, 3), 0.5).is_err());
    }
}
