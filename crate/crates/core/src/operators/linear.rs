//! Linear operators with explicit adjoints: identity, dense matrices, pixel
//! masks and downsampling.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_input, check_output, ForwardOperator, Shape, GRAM_DAMPING};
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone)]
pub struct Identity {
    shape: Shape,
}

impl Identity {
    pub fn new(shape: Shape) -> Self {
        Self { shape }
    }
}

impl ForwardOperator for Identity {
    fn name(&self) -> &str {
        "identity"
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
        Ok(x.to_vec())
    }
    fn vjp(&self, _x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_output(self, v)?;
        Ok(v.to_vec())
    }
    fn gram_solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        check_output(self, r)?;
        Ok(r.to_vec())
    }
}

/// Explicit `rows × cols` matrix, row-major.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    rows: usize,
    cols: usize,
    matrix: Vec<f64>,
    gram: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl DenseOperator {
    pub fn new(rows: usize, cols: usize, matrix: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("dense operator needs positive dimensions"));
        }
        check_len(rows * cols, matrix.len())?;
        let a = DMatrix::from_row_slice(rows, cols, &matrix);
        let g = &a * a.transpose() + DMatrix::identity(rows, rows) * GRAM_DAMPING;
        Ok(Self {
            rows,
            cols,
            matrix,
            gram: g.cholesky(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.matrix)
    }
}

impl ForwardOperator for DenseOperator {
    fn name(&self) -> &str {
        "dense"
    }
    fn input_shape(&self) -> Shape {
        Shape::vector(self.cols)
    }
    fn output_shape(&self) -> Shape {
        Shape::vector(self.rows)
    }
    fn is_linear(&self) -> bool {
        true
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_input(self, x)?;
        Ok(self
            .matrix
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }
    fn vjp(&self, _x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_output(self, v)?;
        let mut out = vec![0.0; self.cols];
        for (row, vi) in self.matrix.chunks_exact(self.cols).zip(v) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
        Ok(out)
    }
    fn gram_solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        check_output(self, r)?;
        let chol = self.gram.as_ref().ok_or(Error::SingularCovariance(0))?;
        Ok(chol.solve(&DVector::from_column_slice(r)).as_slice().to_vec())
    }
}

/// Boolean pixel mask; `true` marks a retained (observed) pixel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    shape: Shape,
    keep: Vec<bool>,
}

impl Mask {
    pub fn new(shape: Shape, keep: Vec<bool>) -> Result<Self> {
        check_len(shape.len(), keep.len())?;
        if shape.is_empty() {
            return Err(Error::invalid("mask is empty"));
        }
        Ok(Self { shape, keep })
    }

    pub fn full(shape: Shape) -> Self {
        Self {
            shape,
            keep: vec![true; shape.len()],
        }
    }

    /// Hides the `height × width` box whose top-left corner is `(top, left)`.
    pub fn hide_box(shape: Shape, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > shape.rows || left + width > shape.cols {
            return Err(Error::invalid(format!(
                "box {height}x{width} at ({top},{left}) exceeds image {shape}"
            )));
        }
        let mut keep = vec![true; shape.len()];
        for r in top..top + height {
            keep[r * shape.cols + left..r * shape.cols + left + width].fill(false);
        }
        Self::new(shape, keep)
    }

    /// Hides a centred square box covering `fraction` of the image side.
    pub fn centered_box(shape: Shape, fraction: f64) -> Result<Self> {
        let h = ((shape.rows as f64) * fraction).round() as usize;
        let w = ((shape.cols as f64) * fraction).round() as usize;
        Self::hide_box(shape, (shape.rows - h) / 2, (shape.cols - w) / 2, h, w)
    }

    /// Keeps a uniformly random subset of `round(keep_fraction * n)` pixels.
    pub fn random<R: Rng + ?Sized>(shape: Shape, keep_fraction: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..=1.0).contains(&keep_fraction) {
            return Err(Error::invalid(format!("keep fraction {keep_fraction} outside [0, 1]")));
        }
        let n = shape.len();
        let kept = ((n as f64) * keep_fraction).round() as usize;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let mut keep = vec![false; n];
        for &k in &idx[..kept] {
            keep[k] = true;
        }
        Self::new(shape, keep)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn n_kept(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }
}

/// Pixel selection `P x`. The output lists retained pixels in row-major order.
#[derive(Debug, Clone)]
pub struct Inpainting {
    mask: Mask,
    retained: Vec<usize>,
}

impl Inpainting {
    pub fn new(mask: Mask) -> Result<Self> {
        let retained: Vec<usize> = (0..mask.keep.len()).filter(|&k| mask.keep[k]).collect();
        if retained.is_empty() {
            return Err(Error::invalid("mask retains no pixels"));
        }
        Ok(Self { mask, retained })
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }
}

impl ForwardOperator for Inpainting {
    fn name(&self) -> &str {
        "inpainting"
    }
    fn input_shape(&self) -> Shape {
        self.mask.shape
    }
    fn output_shape(&self) -> Shape {
        Shape::vector(self.retained.len())
    }
    fn is_linear(&self) -> bool {
        true
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_input(self, x)?;
        Ok(self.retained.iter().map(|&k| x[k]).collect())
    }
    fn vjp(&self, _x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_output(self, v)?;
        let mut out = vec![0.0; self.mask.shape.len()];
        for (&k, vi) in self.retained.iter().zip(v) {
            out[k] = *vi;
        }
        Ok(out)
    }
    /// `P Pᵀ = I`, solved exactly.
    fn gram_solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        check_output(self, r)?;
        Ok(r.to_vec())
    }
    fn project(&self, x: &[f64], target: &[f64]) -> Result<Vec<f64>> {
        check_input(self, x)?;
        check_output(self, target)?;
        let mut out = x.to_vec();
        for (&k, t) in self.retained.iter().zip(target) {
            out[k] = *t;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownsampleMode {
    BlockAverage,
    Bicubic,
}

/// Separable 1-D resampling matrix stored as sparse rows.
#[derive(Debug, Clone)]
struct Resample1d {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Resample1d {
    fn block(n: usize, f: usize) -> Self {
        let w = 1.0 / f as f64;
        Self {
            rows: (0..n / f).map(|o| (0..f).map(|k| (o * f + k, w)).collect()).collect(),
        }
    }

    /// Antialiased bicubic (Keys, a = -0.5) with the kernel stretched by the
    /// factor, edge-replicated boundaries and rows normalised to sum to one.
    fn bicubic(n: usize, f: usize) -> Self {
        fn keys(t: f64) -> f64 {
            let a = -0.5;
            let t = t.abs();
            if t <= 1.0 {
                (a + 2.0) * t.powi(3) - (a + 3.0) * t * t + 1.0
            } else if t < 2.0 {
                a * t.powi(3) - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
            } else {
                0.0
            }
        }
        let fs = f as f64;
        let rows = (0..n / f)
            .map(|o| {
                let centre = (o as f64 + 0.5) * fs - 0.5;
                let lo = (centre - 2.0 * fs).floor() as isize;
                let hi = (centre + 2.0 * fs).ceil() as isize;
                let mut acc = vec![0.0; n];
                for j in lo..=hi {
                    let w = keys((j as f64 - centre) / fs);
                    if w != 0.0 {
                        acc[j.clamp(0, n as isize - 1) as usize] += w;
                    }
                }
                let total: f64 = acc.iter().sum();
                acc.iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(k, w)| (k, w / total))
                    .collect()
            })
            .collect();
        Self { rows }
    }

    fn out_len(&self) -> usize {
        self.rows.len()
    }
}

/// Downsampling `L^f` by an integer factor along both axes.
#[derive(Debug, Clone)]
pub struct Downsampling {
    shape: Shape,
    factor: usize,
    mode: DownsampleMode,
    along_rows: Resample1d,
    along_cols: Resample1d,
}

impl Downsampling {
    pub fn new(shape: Shape, factor: usize, mode: DownsampleMode) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("downsampling factor must be positive"));
        }
        let (along_rows, along_cols) = match mode {
            DownsampleMode::BlockAverage => {
                if shape.rows % factor != 0 || shape.cols % factor != 0 {
                    return Err(Error::invalid(format!("image {shape} not divisible by factor {factor}")));
                }
                (Resample1d::block(shape.rows, factor), Resample1d::block(shape.cols, factor))
            }
            DownsampleMode::Bicubic => {
                if factor > 1 && (shape.rows < 4 * factor || shape.cols < 4 * factor) {
                    return Err(Error::invalid(format!(
                        "bicubic downsampling by {factor} needs sides of at least {}",
                        4 * factor
                    )));
                }
                (Resample1d::bicubic(shape.rows, factor), Resample1d::bicubic(shape.cols, factor))
            }
        };
        Ok(Self {
            shape,
            factor,
            mode,
            along_rows,
            along_cols,
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn mode(&self) -> DownsampleMode {
        self.mode
    }
}

impl ForwardOperator for Downsampling {
    fn name(&self) -> &str {
        "downsampling"
    }
    fn input_shape(&self) -> Shape {
        self.shape
    }
    fn output_shape(&self) -> Shape {
        Shape::new(self.along_rows.out_len(), self.along_cols.out_len())
    }
    fn is_linear(&self) -> bool {
        true
    }
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_input(self, x)?;
        let cols = self.shape.cols;
        let oc = self.along_cols.out_len();
        // rows of x resampled along columns first
        let mut tmp = vec![0.0; self.shape.rows * oc];
        for r in 0..self.shape.rows {
            let row = &x[r * cols..(r + 1) * cols];
            for (o, taps) in self.along_cols.rows.iter().enumerate() {
                tmp[r * oc + o] = taps.iter().map(|&(k, w)| w * row[k]).sum();
            }
        }
        let mut out = vec![0.0; self.along_rows.out_len() * oc];
        for (o, taps) in self.along_rows.rows.iter().enumerate() {
            for &(k, w) in taps {
                for c in 0..oc {
                    out[o * oc + c] += w * tmp[k * oc + c];
                }
            }
        }
        Ok(out)
    }
    fn vjp(&self, _x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_output(self, v)?;
        let cols = self.shape.cols;
        let oc = self.along_cols.out_len();
        let mut tmp = vec![0.0; self.shape.rows * oc];
        for (o, taps) in self.along_rows.rows.iter().enumerate() {
            for &(k, w) in taps {
                for c in 0..oc {
                    tmp[k * oc + c] += w * v[o * oc + c];
                }
            }
        }
        let mut out = vec![0.0; self.shape.len()];
        for r in 0..self.shape.rows {
            for (o, taps) in self.along_cols.rows.iter().enumerate() {
                let t = tmp[r * oc + o];
                for &(k, w) in taps {
                    out[r * cols + k] += w * t;
                }
            }
        }
        Ok(out)
    }
    fn gram_solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        check_output(self, r)?;
        match self.mode {
            // L Lᵀ = I / f², inverted exactly
            DownsampleMode::BlockAverage => {
                let f2 = (self.factor * self.factor) as f64;
                Ok(r.iter().map(|v| v * f2).collect())
            }
            DownsampleMode::Bicubic => {
                let zero = vec![0.0; self.shape.len()];
                let apply = |u: &[f64]| {
                    let atu = self.vjp(&zero, u).expect("shape checked");
                    self.apply(&atu).expect("shape checked")
                };
                Ok(crate::linalg::conjugate_gradient(apply, r, GRAM_DAMPING, 1e-13, 4 * r.len() + 100))
            }
        }
    }
}
