//! Binary PGM images and minimal line plots.

use std::path::Path;

use crate::error::{CliError, Result};

/// Grey levels spanning the finite range of `values`; non-finite pixels are
/// black.
pub fn encode_gray(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), width * height);
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| if v.is_finite() { (((v - lo) / span) * 255.0).round() as u8 } else { 0 }));
    out
}

pub fn write_gray(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    std::fs::write(path, encode_gray(width, height, values)).map_err(|e| CliError::io(path, e))
}

/// One curve of a plot; `None` values leave gaps.
pub struct Series<'a> {
    pub x: &'a [f64],
    pub y: &'a [Option<f64>],
    /// Grey level of the line.
    pub shade: u8,
}

/// Plots the series on shared axes scaled to their joint range.
pub fn plot(width: usize, height: usize, series: &[Series<'_>]) -> Vec<u8> {
    let mut px = vec![255u8; width * height];
    let pts = || series.iter().flat_map(|s| s.x.iter().zip(s.y).filter_map(|(&x, y)| y.map(|y| (x, y))));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts().filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0.is_finite() {
        let (sx, sy) = ((x1 - x0).max(1e-300), (y1 - y0).max(1e-300));
        let (w, h) = ((width - 1) as f64, (height - 1) as f64);
        let map = |x: f64, y: f64| (((x - x0) / sx * w).round(), (h - (y - y0) / sy * h).round());
        for s in series {
            let mut prev: Option<(f64, f64)> = None;
            for (&x, y) in s.x.iter().zip(s.y) {
                let Some(y) = y.filter(|y| y.is_finite()) else {
                    prev = None;
                    continue;
                };
                let p = map(x, y);
                let q = prev.unwrap_or(p);
                let steps = (p.0 - q.0).abs().max((p.1 - q.1).abs()).max(1.0) as usize;
                for k in 0..=steps {
                    let t = k as f64 / steps as f64;
                    let (cx, cy) = ((q.0 + t * (p.0 - q.0)) as usize, (q.1 + t * (p.1 - q.1)) as usize);
                    if cx < width && cy < height {
                        px[cy * width + cx] = s.shade;
                    }
                }
                prev = Some(p);
            }
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(px);
    out
}

pub fn write_plot(path: &Path, width: usize, height: usize, series: &[Series<'_>]) -> Result<()> {
    std::fs::write(path, plot(width, height, series)).map_err(|e| CliError::io(path, e))
}
