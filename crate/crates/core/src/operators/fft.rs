//! Unnormalised 2-D FFTs over row-major complex buffers.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.rows, self.cols)
    }
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn run(&self, data: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(data.len(), self.len());
        row.process(data);
        let mut column = vec![Complex64::default(); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                column[r] = data[r * self.cols + c];
            }
            col.process(&mut column);
            for r in 0..self.rows {
                data[r * self.cols + c] = column[r];
            }
        }
    }

    /// `X[k] = Σ x[n] e^{-2πi k·n / N}`
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    /// Unnormalised inverse: `forward` followed by `inverse` scales by `len()`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_inv, &self.col_inv);
    }

    pub fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_dft() {
        let (r, c) = (3, 4);
        let x: Vec<f64> = (0..12).map(|k| ((k * 7) % 5) as f64 - 1.5).collect();
        let got = Fft2::new(r, c).forward_real(&x);
        for kr in 0..r {
            for kc in 0..c {
                let mut want = Complex64::default();
                for nr in 0..r {
                    for nc in 0..c {
                        let ph = -2.0
                            * std::f64::consts::PI
                            * ((kr * nr) as f64 / r as f64 + (kc * nc) as f64 / c as f64);
                        want += x[nr * c + nc] * Complex64::from_polar(1.0, ph);
                    }
                }
                assert!((got[kr * c + kc] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_scales_by_length() {
        let f = Fft2::new(4, 6);
        let x: Vec<f64> = (0..24).map(|k| (k as f64).sin()).collect();
        let mut buf = f.forward_real(&x);
        f.inverse(&mut buf);
        for (a, b) in buf.iter().zip(&x) {
            assert!((a.re / 24.0 - b).abs() < 1e-13 && a.im.abs() < 1e-12);
        }
    }
}
