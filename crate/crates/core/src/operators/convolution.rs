//! Blur `C^ψ x`: 2-D convolution with circular or reflected boundaries.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::Fft2;
use super::kernel::BlurKernel;
use super::{check_input, check_output, ForwardOperator, Shape, GRAM_DAMPING};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Circular,
    /// Mirror without repeating the edge pixel (`d c b | a b c d | c b a`).
    Reflect,
}

/// `y[p] = Σ_q ψ[q] x[p - q]`, with `q` measured from the kernel centre.
#[derive(Debug, Clone)]
pub struct Convolution {
    shape: Shape,
    kernel: BlurKernel,
    boundary: Boundary,
    fft: Option<(Fft2, Vec<Complex64>)>,
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

impl Convolution {
    pub fn new(shape: Shape, kernel: BlurKernel, boundary: Boundary) -> Result<Self> {
        let too_big = match boundary {
            Boundary::Circular => kernel.rows() > shape.rows || kernel.cols() > shape.cols,
            Boundary::Reflect => kernel.rows() / 2 >= shape.rows || kernel.cols() / 2 >= shape.cols,
        };
        if too_big || shape.is_empty() {
            return Err(Error::invalid(format!(
                "kernel {}x{} too large for image {shape}",
                kernel.rows(),
                kernel.cols()
            )));
        }
        let fft = (boundary == Boundary::Circular).then(|| {
            let plan = Fft2::new(shape.rows, shape.cols);
            let mut h = vec![Complex64::default(); shape.len()];
            let (hr, hc) = ((kernel.rows() / 2) as isize, (kernel.cols() / 2) as isize);
            for dr in -hr..=hr {
                for dc in -hc..=hc {
                    let r = dr.rem_euclid(shape.rows as isize) as usize;
                    let c = dc.rem_euclid(shape.cols as isize) as usize;
                    h[r * shape.cols + c].re += kernel.at(dr, dc);
                }
            }
            plan.forward(&mut h);
            (plan, h)
        });
        Ok(Self {
            shape,
            kernel,
            boundary,
            fft,
        })
    }

    pub fn kernel(&self) -> &BlurKernel {
        &self.kernel
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Frequency response for circular boundaries.
    pub fn transfer(&self) -> Option<&[Complex64]> {
        self.fft.as_ref().map(|(_, h)| h.as_slice())
    }

    fn filter(&self, x: &[f64], f: impl Fn(Complex64) -> Complex64) -> Vec<f64> {
        let (plan, h) = self.fft.as_ref().expect("circular plan");
        let mut buf = plan.forward_real(x);
        for (b, hk) in buf.iter_mut().zip(h) {
            *b *= f(*hk);
        }
        plan.inverse(&mut buf);
        let n = plan.len() as f64;
        buf.iter().map(|c| c.re / n).collect()
    }

    fn spatial(&self, x: &[f64], adjoint: bool) -> Vec<f64> {
        let (rows, cols) = (self.shape.rows, self.shape.cols);
        let (hr, hc) = ((self.kernel.rows() / 2) as isize, (self.kernel.cols() / 2) as isize);
        let mut out = vec![0.0; self.shape.len()];
        for r in 0..rows {
            for c in 0..cols {
                let p = r * cols + c;
                for dr in -hr..=hr {
                    let sr = reflect(r as isize - dr, rows);
                    for dc in -hc..=hc {
                        let s = sr * cols + reflect(c as isize - dc, cols);
                        let w = self.kernel.at(dr, dc);
                        if adjoint {
                            out[s] += w * x[p];
                        } else {
                            out[p] += w * x[s];
                        }
                    }
                }
            }
        }
        out
    }
}

impl ForwardOperator for Convolution {
    fn name(&self) -> &str {
        "convolution"
    }
    fn input_shape(&self) -> Shape {
        self.shape
    }
    fn output_shape(&self) -> Shape {
        self.shape
    }
    fn is_linear(&self) -> bool {
        true
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_input(self, x)?;
        Ok(match self.boundary {
            Boundary::Circular => self.filter(x, |h| h),
            Boundary::Reflect => self.spatial(x, false),
        })
    }
    fn vjp(&self, _x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_output(self, v)?;
        Ok(match self.boundary {
            Boundary::Circular => self.filter(v, |h| h.conj()),
            Boundary::Reflect => self.spatial(v, true),
        })
    }
    fn gram_solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        check_output(self, r)?;
        match self.boundary {
            Boundary::Circular => Ok(self.filter(r, |h| Complex64::new(1.0 / (h.norm_sqr() + GRAM_DAMPING), 0.0))),
            Boundary::Reflect => {
                let apply = |u: &[f64]| self.spatial(&self.spatial(u, true), false);
                Ok(crate::linalg::conjugate_gradient(apply, r, GRAM_DAMPING, 1e-13, 4 * r.len() + 100))
            }
        }
    }
}
