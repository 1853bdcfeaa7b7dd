//! Synthetic grayscale test images and the mixture prior built on them.
//!
//! Every image is generated procedurally, so the corpus is reproducible
//! without checked-in binaries. Intensities lie in `[0, 1]`; most images have exactly dark backgrounds.

use crate::error::{Error, Result};
use crate::operators::{Mask, Shape};
use crate::score_prior::GaussianMixturePrior;

/// Default side length of corpus images.
pub const SIDE: usize = 64;

/// Names of the built-in images, in corpus order.
pub const NAMES: [&str; 10] = [
    "blobs", "stripes", "diagonal", "rings", "checker", "glyph_d", "glyph_p", "glyph_s", "cross", "gradient_disk",
];

const LOW: f64 = 0.0;
const HIGH: f64 = 1.0;

fn render(side: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let s = side as f64;
    (0..side * side)
        .map(|k| {
            let (r, c) = ((k / side) as f64 + 0.5, (k % side) as f64 + 0.5);
            let v = f(r / s, c / s).clamp(0.0, 1.0);
            LOW + (HIGH - LOW) * v
        })
        .collect()
}

fn smoothstep(edge: f64, width: f64, x: f64) -> f64 {
    let t = ((x - edge) / width + 0.5).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

// 5×7 bitmaps, one string per row
const GLYPH_D: [&str; 7] = ["1110.", "1..1.", "1...1", "1...1", "1...1", "1..1.", "1110."];
const GLYPH_P: [&str; 7] = ["1111.", "1...1", "1...1", "1111.", "1....", "1....", "1...."];
const GLYPH_S: [&str; 7] = [".111.", "1...1", "1....", ".111.", "....1", "1...1", ".111."];

fn glyph(side: usize, rows: &[&str; 7]) -> Vec<f64> {
    let cells: Vec<Vec<bool>> = rows.iter().map(|r| r.chars().map(|c| c == '1').collect()).collect();
    // 5×7 cells scaled into the central 5/8 × 7/8 of the frame, softened by a
    // distance falloff so the glyph has no aliasing steps
    render(side, |r, c| {
        let (y, x) = ((r - 0.0625) / 0.875 * 7.0, (c - 0.1875) / 0.625 * 5.0);
        let mut best: f64 = 0.0;
        for (i, row) in cells.iter().enumerate() {
            for (j, on) in row.iter().enumerate() {
                if !on {
                    continue;
                }
                let dy = (y - (i as f64 + 0.5)).abs() - 0.5;
                let dx = (x - (j as f64 + 0.5)).abs() - 0.5;
                let d = dy.max(dx).max(0.0);
                best = best.max(1.0 - smoothstep(0.15, 0.3, d));
            }
        }
        best
    })
}

/// Generates the named corpus image at `side × side`.
pub fn image(name: &str, side: usize) -> Result<Vec<f64>> {
    if side < 8 {
        return Err(Error::invalid(format!("corpus images need side >= 8, got {side}")));
    }
    let tau = std::f64::consts::TAU;
    let img = match name {
        "blobs" => render(side, |r, c| {
            let g = |cr: f64, cc: f64, w: f64, a: f64| a * (-((r - cr).powi(2) + (c - cc).powi(2)) / (2.0 * w * w)).exp();
            g(0.3, 0.35, 0.1, 0.9) + g(0.65, 0.7, 0.13, 0.7) + g(0.75, 0.25, 0.07, 0.8)
        }),
        "stripes" => render(side, |r, _| 0.5 + 0.5 * (tau * 4.0 * r).sin()),
        "diagonal" => render(side, |r, c| 0.5 + 0.5 * (tau * 3.0 * (r + c)).cos()),
        "rings" => render(side, |r, c| {
            let d = ((r - 0.5).powi(2) + (c - 0.5).powi(2)).sqrt();
            0.5 + 0.5 * (tau * 5.0 * d).cos() * (1.0 - smoothstep(0.45, 0.1, d))
        }),
        "checker" => render(side, |r, c| {
            let s = ((tau * 2.0 * r).sin() * (tau * 2.0 * c).sin()).clamp(-0.3, 0.3) / 0.6;
            0.5 + s
        }),
        "glyph_d" => glyph(side, &GLYPH_D),
        "glyph_p" => glyph(side, &GLYPH_P),
        "glyph_s" => glyph(side, &GLYPH_S),
        "cross" => render(side, |r, c| {
            let bar = |u: f64| 1.0 - smoothstep(0.1, 0.04, (u - 0.5).abs());
            bar(r).max(bar(c)) * (1.0 - smoothstep(0.4, 0.06, (r - 0.5).abs().max((c - 0.5).abs())))
        }),
        "gradient_disk" => render(side, |r, c| {
            let d = ((r - 0.45).powi(2) + (c - 0.55).powi(2)).sqrt();
            (1.0 - smoothstep(0.32, 0.05, d)) * (0.3 + 0.7 * c)
        }),
        other => return Err(Error::invalid(format!("unknown corpus image '{other}'"))),
    };
    Ok(img)
}

/// The full corpus at `side × side`, in [`NAMES`] order.
pub fn images(side: usize) -> Result<Vec<Vec<f64>>> {
    NAMES.iter().map(|n| image(n, side)).collect()
}

/// Equal-weight mixture with one isotropic component per corpus image.
pub fn corpus_prior(side: usize, variance: f64) -> Result<GaussianMixturePrior> {
    mixture_of(images(side)?, variance)
}

pub fn mixture_of(means: Vec<Vec<f64>>, variance: f64) -> Result<GaussianMixturePrior> {
    GaussianMixturePrior::uniform(means, variance)
}

/// A compact, smooth non-negative blob (zero outside a disk) and its exact
/// support, used as the easy phase-retrieval instance.
pub fn toy_blob(side: usize) -> (Shape, Vec<f64>, Mask) {
    let shape = Shape::new(side, side);
    let (cr, cc, rad) = (side as f64 * 0.45, side as f64 * 0.5, side as f64 * 0.3);
    let img: Vec<f64> = (0..side * side)
        .map(|k| {
            let (r, c) = ((k / side) as f64, (k % side) as f64);
            let d2 = ((r - cr).powi(2) + (c - cc).powi(2)) / (rad * rad);
            if d2 < 1.0 {
                (1.0 - d2).powi(2) * (0.6 + 0.4 * (c / side as f64))
            } else {
                0.0
            }
        })
        .collect();
    let keep = img.iter().map(|v| *v > 0.0).collect();
    let mask = Mask::new(shape, keep).expect("shape matches");
    (shape, img, mask)
}
