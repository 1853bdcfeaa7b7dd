//! Reconstruction metrics on images with dynamic range 1.

use crate::error::{check_len, Error, Result};
use crate::operators::Shape;

/// Peak signal-to-noise ratio in dB; `+∞` when the images are identical.
pub fn psnr(x: &[f64], reference: &[f64]) -> Result<f64> {
    check_len(reference.len(), x.len())?;
    if x.is_empty() {
        return Err(Error::invalid("psnr of empty images"));
    }
    let mse = x.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// PSNR after clamping `x` to the valid intensity range.
pub fn psnr_clamped(x: &[f64], reference: &[f64]) -> Result<f64> {
    let c: Vec<f64> = x.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    psnr(&c, reference)
}

const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let h = (size / 2) as f64;
    let g: Vec<f64> = (0..size).map(|k| (-((k as f64 - h).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let mut w = Vec::with_capacity(size * size);
    for a in &g {
        for b in &g {
            w.push(a * b);
        }
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Structural similarity with an 11×11 Gaussian window (σ = 1.5) evaluated at
/// every position where the window fits, averaged. Images smaller than the
/// window use the largest odd window that fits.
pub fn ssim(x: &[f64], reference: &[f64], shape: Shape) -> Result<f64> {
    check_len(shape.len(), x.len())?;
    check_len(shape.len(), reference.len())?;
    if shape.is_empty() {
        return Err(Error::invalid("ssim of empty images"));
    }
    let mut size = 11.min(shape.rows).min(shape.cols);
    if size % 2 == 0 {
        size -= 1;
    }
    let w = gaussian_window(size, 1.5);
    let (c1, c2) = ((K1).powi(2), (K2).powi(2));
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=shape.rows - size {
        for c0 in 0..=shape.cols - size {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dr in 0..size {
                for dc in 0..size {
                    let k = (r0 + dr) * shape.cols + c0 + dc;
                    let wk = w[dr * size + dc];
                    let (a, b) = (x[k], reference[k]);
                    mx += wk * a;
                    my += wk * b;
                    sxx += wk * a * a;
                    syy += wk * b * b;
                    sxy += wk * a * b;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cxy = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}
