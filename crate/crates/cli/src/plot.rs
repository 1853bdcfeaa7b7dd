//! Minimal PNG plotter: line charts and heatmaps with numeric tick labels.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::CliError;

const WIDTH: u32 = 480;
const HEIGHT: u32 = 320;
const MARGIN: i64 = 40;
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [148, 103, 189],
    [255, 127, 14],
    [23, 190, 207],
];

// 3×5 glyphs, one row per u8 (low three bits, left to right)
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        'e' => [0, 7, 7, 4, 7],
        '+' => [0, 2, 7, 2, 0],
        _ => return None,
    })
}

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Self {
        Self {
            img: RgbImage::from_pixel(w, h, WHITE),
        }
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        for y in y0..y1 {
            for x in x0..x1 {
                self.put(x, y, c);
            }
        }
    }

    /// Draws `text` with its top-left corner at `(x, y)`, glyphs scaled 2×.
    fn text(&mut self, x: i64, y: i64, text: &str, c: Rgb<u8>) {
        for (k, ch) in text.chars().enumerate() {
            let Some(rows) = glyph(ch) else { continue };
            for (r, bits) in rows.iter().enumerate() {
                for col in 0..3 {
                    if bits & (4 >> col) != 0 {
                        let (px, py) = (x + k as i64 * 8 + col * 2, y + r as i64 * 2);
                        self.rect(px, py, px + 2, py + 2, c);
                    }
                }
            }
        }
    }

    fn save(self, path: &Path) -> Result<(), CliError> {
        self.img
            .save(path)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
    }
}

fn label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return None;
    }
    Some(if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) })
}

/// One polyline per series. With `log_x`, x values must be positive.
pub fn line_chart(path: &Path, series: &[Vec<(f64, f64)>], log_x: bool) -> Result<(), CliError> {
    let tx = |x: f64| if log_x { x.log10() } else { x };
    let all = || series.iter().flatten().filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_x || *x > 0.0));
    let (x_lo, x_hi) = range(all().map(|p| tx(p.0))).unwrap_or((0.0, 1.0));
    let (y_lo, y_hi) = range(all().map(|p| p.1)).unwrap_or((0.0, 1.0));
    let mut c = Canvas::new(WIDTH, HEIGHT);
    let (left, right, top, bottom) = (MARGIN + 24, WIDTH as i64 - 16, 16, HEIGHT as i64 - MARGIN);
    let px = |x: f64| left + ((tx(x) - x_lo) / (x_hi - x_lo) * (right - left) as f64).round() as i64;
    let py = |y: f64| bottom - ((y - y_lo) / (y_hi - y_lo) * (bottom - top) as f64).round() as i64;
    for k in 1..4 {
        let y = top + (bottom - top) * k / 4;
        c.line((left, y), (right, y), GRID);
    }
    c.line((left, bottom), (right, bottom), AXIS);
    c.line((left, top), (left, bottom), AXIS);
    let x_label = |v: f64| label(if log_x { 10f64.powf(v) } else { v });
    c.text(left, bottom + 8, &x_label(x_lo), AXIS);
    let hi = x_label(x_hi);
    c.text(right - hi.len() as i64 * 8, bottom + 8, &hi, AXIS);
    c.text(4, top, &label(y_hi), AXIS);
    c.text(4, bottom - 10, &label(y_lo), AXIS);
    for (k, s) in series.iter().enumerate() {
        let col = Rgb(PALETTE[k % PALETTE.len()]);
        let pts: Vec<(i64, i64)> = s
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log_x || *x > 0.0))
            .map(|(x, y)| (px(*x), py(*y)))
            .collect();
        for w in pts.windows(2) {
            c.line(w[0], w[1], col);
        }
        for (x, y) in pts {
            c.rect(x - 2, y - 2, x + 3, y + 3, col);
        }
    }
    c.save(path)
}

fn colormap(t: f64) -> Rgb<u8> {
    // viridis anchors
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let t = t.clamp(0.0, 1.0) * 4.0;
    let k = (t.floor() as usize).min(3);
    let f = t - k as f64;
    let mix = |j: usize| (STOPS[k][j] * (1.0 - f) + STOPS[k + 1][j] * f).round() as u8;
    Rgb([mix(0), mix(1), mix(2)])
}

/// `values[row][col]`; non-finite cells are drawn grey. The colour bar's
/// extremes are labelled.
pub fn heatmap(path: &Path, values: &[Vec<f64>]) -> Result<(), CliError> {
    let rows = values.len().max(1) as i64;
    let cols = values.iter().map(Vec::len).max().unwrap_or(1).max(1) as i64;
    let (lo, hi) = range(values.iter().flatten().copied()).unwrap_or((0.0, 1.0));
    let mut c = Canvas::new(WIDTH, HEIGHT);
    let (left, right, top, bottom) = (16, WIDTH as i64 - 80, 16, HEIGHT as i64 - 16);
    let (cw, ch) = ((right - left) / cols, (bottom - top) / rows);
    for (r, row) in values.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            let col = if v.is_finite() { colormap((v - lo) / (hi - lo)) } else { Rgb([160, 160, 160]) };
            let (x, y) = (left + k as i64 * cw, top + r as i64 * ch);
            c.rect(x, y, x + cw - 1, y + ch - 1, col);
        }
    }
    let bar = right + 12;
    for y in top..bottom {
        let t = (bottom - y) as f64 / (bottom - top) as f64;
        c.rect(bar, y, bar + 12, y + 1, colormap(t));
    }
    c.text(bar - 4, top - 12, &label(hi), AXIS);
    c.text(bar - 4, bottom + 4, &label(lo), AXIS);
    c.save(path)
}
