//! Measurement operators `A(·)` with a common apply / vector-Jacobian-product
//! interface.

mod convolution;
mod fft;
mod fourier;
mod kernel;
mod linear;
mod nonlinear;

pub use convolution::{Boundary, Convolution};
pub use fft::Fft2;
pub use fourier::FourierMagnitude;
pub use kernel::{gaussian_kernel, motion_kernel_load, BlurKernel};
pub use linear::{DenseOperator, DownsampleMode, Downsampling, Identity, Inpainting, Mask};
pub use nonlinear::NonlinearBlur;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg;

/// Tikhonov damping used whenever `A Aᵀ` has to be inverted numerically.
pub const GRAM_DAMPING: f64 = 1e-8;

/// Row-major 2-D extent. Vectors use a single column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub const fn vector(n: usize) -> Self {
        Self { rows: n, cols: 1 }
    }

    pub const fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

pub trait ForwardOperator: Send + Sync {
    fn name(&self) -> &str;

    fn input_shape(&self) -> Shape;

    fn output_shape(&self) -> Shape;

    fn is_linear(&self) -> bool;

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// `vᵀ (∂A/∂x)` at `x`. Linear operators ignore `x` and return `Aᵀ v`.
    fn vjp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>>;

    /// Solves `(A Aᵀ + damping I) u = r` for linear operators.
    ///
    /// The default runs conjugate gradients with [`GRAM_DAMPING`]; operators
    /// with a diagonal or diagonalisable Gram matrix override it.
    fn gram_solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.require_linear()?;
        check_len(self.output_shape().len(), r.len())?;
        let zero = vec![0.0; self.input_shape().len()];
        let apply = |u: &[f64]| {
            let atu = self.vjp(&zero, u).expect("shape checked");
            self.apply(&atu).expect("shape checked")
        };
        Ok(linalg::conjugate_gradient(apply, r, GRAM_DAMPING, 1e-13, 4 * r.len() + 100))
    }

    /// Euclidean projection `x + Aᵀ (A Aᵀ)⁻¹ (target - A x)` onto
    /// `{x : A x = target}`.
    fn project(&self, x: &[f64], target: &[f64]) -> Result<Vec<f64>> {
        self.require_linear()?;
        let ax = self.apply(x)?;
        check_len(ax.len(), target.len())?;
        let r = linalg::sub(target, &ax);
        let u = self.gram_solve(&r)?;
        let step = self.vjp(x, &u)?;
        Ok(linalg::add(x, &step))
    }

    fn require_linear(&self) -> Result<()> {
        if self.is_linear() {
            Ok(())
        } else {
            Err(Error::NonlinearOperator(self.name().to_string()))
        }
    }
}

/// Materialises a linear operator as a dense row-major matrix, column by
/// column. Intended for small instances only.
pub fn materialize(op: &dyn ForwardOperator) -> Result<DenseOperator> {
    op.require_linear()?;
    let n = op.input_shape().len();
    let m = op.output_shape().len();
    let mut matrix = vec![0.0; m * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = op.apply(&e)?;
        for (i, v) in col.into_iter().enumerate() {
            matrix[i * n + j] = v;
        }
        e[j] = 0.0;
    }
    DenseOperator::new(m, n, matrix)
}

/// Largest singular value of a linear operator by power iteration on `AᵀA`.
pub fn spectral_norm(op: &dyn ForwardOperator, iterations: usize, tol: f64) -> Result<f64> {
    op.require_linear()?;
    let n = op.input_shape().len();
    // deterministic, generic start vector
    let mut v: Vec<f64> = (0..n).map(|k| 1.0 + 0.1 * ((k as f64) * 0.7).sin()).collect();
    let nv = linalg::norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let zero = vec![0.0; n];
    let mut sigma = 0.0;
    for _ in 0..iterations {
        let av = op.apply(&v)?;
        let w = op.vjp(&zero, &av)?;
        let nw = linalg::norm(&w);
        if nw == 0.0 {
            return Ok(0.0);
        }
        let next = nw.sqrt();
        v = linalg::scale(&w, 1.0 / nw);
        let done = (next - sigma).abs() <= tol * next;
        sigma = next;
        if done {
            break;
        }
    }
    Ok(sigma)
}

pub(crate) fn check_input(op: &dyn ForwardOperator, x: &[f64]) -> Result<()> {
    check_len(op.input_shape().len(), x.len())
}

pub(crate) fn check_output(op: &dyn ForwardOperator, v: &[f64]) -> Result<()> {
    check_len(op.output_shape().len(), v.len())
}
