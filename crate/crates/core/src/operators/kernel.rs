//! Blur kernels: analytic Gaussian kernels and motion kernels loaded from
//! plain-text files.

use std::path::Path;

use crate::error::{Error, Result};

/// Odd-sized 2-D kernel with taps summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    rows: usize,
    cols: usize,
    taps: Vec<f64>,
}

impl BlurKernel {
    /// Validates the taps and, if `normalize`, rescales them to sum to one.
    pub fn new(rows: usize, cols: usize, mut taps: Vec<f64>, normalize: bool) -> Result<Self> {
        if rows == 0 || cols == 0 || rows % 2 == 0 || cols % 2 == 0 {
            return Err(Error::invalid(format!("kernel sides must be odd, got {rows}x{cols}")));
        }
        if taps.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: rows * cols,
                found: taps.len(),
            });
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("kernel taps".into()));
        }
        let sum: f64 = taps.iter().sum();
        if normalize {
            if sum.abs() < 1e-300 {
                return Err(Error::invalid("kernel taps sum to zero"));
            }
            taps.iter_mut().for_each(|t| *t /= sum);
        } else if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("kernel taps sum to {sum}, expected 1")));
        }
        Ok(Self { rows, cols, taps })
    }

    pub fn delta() -> Self {
        Self {
            rows: 1,
            cols: 1,
            taps: vec![1.0],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Tap at offset `(dr, dc)` from the centre.
    pub fn at(&self, dr: isize, dc: isize) -> f64 {
        let r = (dr + (self.rows / 2) as isize) as usize;
        let c = (dc + (self.cols / 2) as isize) as usize;
        self.taps[r * self.cols + c]
    }

    /// Parses the plain-text format: a `rows cols` header followed by
    /// `rows * cols` whitespace-separated taps in row-major order. Lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut tokens = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .flat_map(str::split_whitespace);
        let mut dim = |name: &str| -> std::result::Result<usize, String> {
            tokens
                .next()
                .ok_or(format!("missing {name}"))?
                .parse()
                .map_err(|e| format!("bad {name}: {e}"))
        };
        let rows = dim("row count")?;
        let cols = dim("column count")?;
        let taps: Vec<f64> = tokens
            .map(|t| t.parse::<f64>().map_err(|e| format!("bad tap `{t}`: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        if taps.len() != rows * cols {
            return Err(format!("expected {} taps, found {}", rows * cols, taps.len()));
        }
        Self::new(rows, cols, taps, false).map_err(|e| e.to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.rows, self.cols);
        for row in self.taps.chunks(self.cols) {
            let line: Vec<String> = row.iter().map(|t| format!("{t:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Normalised `size × size` Gaussian with standard deviation `sigma` pixels.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<BlurKernel> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("gaussian sigma must be positive, got {sigma}")));
    }
    if size % 2 == 0 {
        return Err(Error::invalid(format!("kernel size must be odd, got {size}")));
    }
    let h = (size / 2) as isize;
    let mut taps = Vec::with_capacity(size * size);
    for r in -h..=h {
        for c in -h..=h {
            taps.push((-((r * r + c * c) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    BlurKernel::new(size, size, taps, true)
}

/// Loads a motion (or any other) kernel from the plain-text format.
pub fn motion_kernel_load(path: &Path) -> Result<BlurKernel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    BlurKernel::parse(&text).map_err(|reason| Error::Format {
        what: "kernel",
        path: path.to_path_buf(),
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_one_is_unit_tap() {
        assert_eq!(gaussian_kernel(1, 3.0).unwrap().taps(), &[1.0]);
    }

    #[test]
    fn wide_sigma_approaches_uniform() {
        let k = gaussian_kernel(7, 700.0).unwrap();
        let max = k.taps().iter().cloned().fold(f64::MIN, f64::max);
        let min = k.taps().iter().cloned().fold(f64::MAX, f64::min);
        assert!(max / min < 1.01);
    }

    #[test]
    fn centre_tap_matches_direct_sum() {
        let k = gaussian_kernel(61, 3.0).unwrap();
        let mut z = 0.0;
        for r in -30i32..=30 {
            for c in -30i32..=30 {
                z += (-f64::from(r * r + c * c) / 18.0).exp();
            }
        }
        assert!((k.at(0, 0) - 1.0 / z).abs() < 1e-15);
        assert!((k.taps().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parse_round_trip_and_validation() {
        let k = gaussian_kernel(5, 1.0).unwrap();
        let back = BlurKernel::parse(&k.to_text()).unwrap();
        for (a, b) in back.taps().iter().zip(k.taps()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(BlurKernel::parse("2 2\n0.25 0.25 0.25 0.25").is_err());
        assert!(BlurKernel::parse("1 3\n0.5 0.5 0.5").is_err());
        assert!(BlurKernel::parse("1 3\n0.5 0.5").is_err());
        assert!(BlurKernel::parse("# comment\n1 3\n0.25 0.5 0.25").is_ok());
    }
}
